#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lexrag {

struct HnswParams {
    int M = 16;                // max neighbors per node per layer (2M on layer 0)
    int ef_construction = 200; // candidate list size at build
    int ef_search = 500;       // default candidate list size at query
    uint64_t level_seed = 42;

    void validate() const;  // M >= 2, ef_construction >= M
};

// Paper-comparable configurations keep efSearch inside [100, 1000]; the
// clamp is opt-in ("paper mode") and emits a warning when it fires.
int clamp_ef_search(int requested, bool paper_mode, std::string* warning = nullptr);

struct ScoredChunk {
    std::string chunk_id;
    double score = 0.0;  // cosine similarity in [-1, 1]
};

struct ChunkVector {
    std::string chunk_id;
    std::vector<float> vector;  // unit norm
};

// From-scratch HNSW over unit-norm vectors, maximizing cosine (dot
// product). Build is deterministic given level_seed; insertion order is
// ascending chunk_id. Ties are broken by ascending chunk_id everywhere.
// After build the index is immutable and safe for concurrent searches.
class VectorIndex {
public:
    VectorIndex() = default;

    static VectorIndex build(std::vector<ChunkVector> items, const HnswParams& params);

    std::vector<ScoredChunk> search(std::span<const float> query, int top_k,
                                    int ef_search) const;

    // As search, but also reports the chunk_ids visited during the
    // layer-0 traversal (instrumentation for candidate-set tests).
    std::vector<ScoredChunk> search_traced(std::span<const float> query, int top_k,
                                           int ef_search,
                                           std::vector<std::string>* visited_layer0) const;

    // OpenMP over queries; the index is read-only during search. Output
    // order matches query order and equals search_batch_serial exactly.
    std::vector<std::vector<ScoredChunk>> search_batch(
        std::span<const std::vector<float>> queries, int top_k, int ef_search) const;
    std::vector<std::vector<ScoredChunk>> search_batch_serial(
        std::span<const std::vector<float>> queries, int top_k, int ef_search) const;

    size_t size() const { return nodes_.size(); }
    size_t dim() const { return dim_; }
    const HnswParams& params() const { return params_; }
    int max_level() const { return max_level_; }
    std::string entry_chunk() const;

    std::vector<ChunkVector> items() const;  // copy of (chunk_id, vector) pairs
    std::vector<std::string> layer_neighbors(const std::string& chunk_id,
                                             int layer) const;
    bool all_reachable_layer0() const;

    // Self-describing binary file: version tag, params, node table,
    // adjacency. Little-endian throughout.
    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path);

private:
    struct Node {
        std::string chunk_id;
        std::vector<float> vector;
        std::vector<std::vector<int>> links;  // per layer, node indices
    };

    struct Candidate {
        double sim;
        int node;
    };

    // total order: higher similarity first, then lower node index
    static bool better(const Candidate& a, const Candidate& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.node < b.node;
    }

    double sim(std::span<const float> query, int node) const;
    std::vector<Candidate> select_neighbors(std::span<const float> anchor,
                                            std::vector<Candidate> ranked,
                                            size_t m) const;
    std::vector<Candidate> search_layer(std::span<const float> query, int entry,
                                        size_t ef, int layer,
                                        std::vector<int>* visited_out) const;
    int greedy_descend(std::span<const float> query, int from_layer,
                       int to_layer) const;
    void connect(int a, int b, int layer, size_t cap);
    void shrink(int node, int layer, size_t cap);

    std::vector<Node> nodes_;
    int entry_ = -1;
    int max_level_ = -1;
    HnswParams params_;
    size_t dim_ = 0;
};

// Exact top-k by cosine with the same tie-break rule as search; the
// oracle for recall measurement. brute_force scores chunks with an
// OpenMP loop; brute_force_serial is the reference kept for testing.
std::vector<ScoredChunk> brute_force(std::span<const ChunkVector> items,
                                     std::span<const float> query, int top_k);
std::vector<ScoredChunk> brute_force_serial(std::span<const ChunkVector> items,
                                            std::span<const float> query, int top_k);

// Mean over queries of |approx ∩ exact| / min(top_k, index size).
double recall_at_k(const VectorIndex& index,
                   std::span<const std::vector<float>> queries, int top_k,
                   int ef_search);

}  // namespace lexrag
