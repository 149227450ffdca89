#include "lexrag/vecindex.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>
#include <stdexcept>

#include <omp.h>

#include "lexrag/embedding.hpp"
#include "lexrag/util.hpp"

namespace lexrag {

namespace {

constexpr char kIndexMagic[] = "LXHNSW01";
constexpr int kMaxLevelCap = 30;

// Scores are cosine similarities and must stay in [-1, 1]; float
// rounding can push a self-similarity a few ulps above 1.
double clamp_score(double sim) {
    return std::clamp(sim, -1.0, 1.0);
}

}  // namespace

void HnswParams::validate() const {
    if (M < 2) throw std::invalid_argument("HnswParams: M must be >= 2");
    if (ef_construction < M) {
        throw std::invalid_argument("HnswParams: ef_construction must be >= M");
    }
}

int clamp_ef_search(int requested, bool paper_mode, std::string* warning) {
    if (!paper_mode) return requested;
    int clamped = std::clamp(requested, 100, 1000);
    if (clamped != requested && warning) {
        *warning = "efSearch " + std::to_string(requested) +
                   " outside the paper-comparable range [100, 1000]; clamped to " +
                   std::to_string(clamped);
    }
    return clamped;
}

double VectorIndex::sim(std::span<const float> query, int node) const {
    return dot(query, nodes_[static_cast<size_t>(node)].vector);
}

std::vector<VectorIndex::Candidate> VectorIndex::search_layer(
    std::span<const float> query, int entry, size_t ef, int layer,
    std::vector<int>* visited_out) const {
    auto worse_first = [](const Candidate& a, const Candidate& b) { return better(a, b); };
    auto better_first = [](const Candidate& a, const Candidate& b) { return better(b, a); };
    // candidates: best on top; results: worst on top (for capped eviction)
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(better_first)>
        candidates(better_first);
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse_first)>
        results(worse_first);

    std::vector<char> visited(nodes_.size(), 0);
    visited[static_cast<size_t>(entry)] = 1;
    if (visited_out) visited_out->push_back(entry);
    Candidate start{sim(query, entry), entry};
    candidates.push(start);
    results.push(start);

    while (!candidates.empty()) {
        Candidate c = candidates.top();
        candidates.pop();
        if (results.size() >= ef && c.sim < results.top().sim) break;
        const auto& neighbors = nodes_[static_cast<size_t>(c.node)].links;
        if (layer >= static_cast<int>(neighbors.size())) continue;
        for (int e : neighbors[static_cast<size_t>(layer)]) {
            if (visited[static_cast<size_t>(e)]) continue;
            visited[static_cast<size_t>(e)] = 1;
            if (visited_out) visited_out->push_back(e);
            Candidate cand{sim(query, e), e};
            if (results.size() < ef || better(cand, results.top())) {
                candidates.push(cand);
                results.push(cand);
                if (results.size() > ef) results.pop();
            }
        }
    }

    std::vector<Candidate> out;
    out.reserve(results.size());
    while (!results.empty()) {
        out.push_back(results.top());
        results.pop();
    }
    std::reverse(out.begin(), out.end());  // best first
    return out;
}

int VectorIndex::greedy_descend(std::span<const float> query, int from_layer,
                                int to_layer) const {
    int ep = entry_;
    for (int layer = from_layer; layer > to_layer; --layer) {
        ep = search_layer(query, ep, 1, layer, nullptr).front().node;
    }
    return ep;
}

// Diversity-preserving neighbor selection (the construction heuristic
// from the HNSW paper): a candidate is kept only while it is closer to
// the anchor than to every neighbor already kept, then remaining slots
// are filled with the closest pruned candidates. Plain keep-closest
// collapses clustered corpora into disconnected cliques.
std::vector<VectorIndex::Candidate> VectorIndex::select_neighbors(
    std::span<const float> anchor, std::vector<Candidate> ranked, size_t m) const {
    std::sort(ranked.begin(), ranked.end(),
              [](const Candidate& a, const Candidate& b) { return better(a, b); });
    std::vector<Candidate> selected;
    std::vector<Candidate> pruned;
    for (const auto& cand : ranked) {
        if (selected.size() >= m) break;
        bool diverse = true;
        for (const auto& kept : selected) {
            double cand_to_kept = dot(nodes_[static_cast<size_t>(cand.node)].vector,
                                      nodes_[static_cast<size_t>(kept.node)].vector);
            if (cand_to_kept > cand.sim) {
                diverse = false;
                break;
            }
        }
        if (diverse) selected.push_back(cand);
        else pruned.push_back(cand);
    }
    for (const auto& cand : pruned) {
        if (selected.size() >= m) break;
        selected.push_back(cand);
    }
    (void)anchor;
    return selected;
}

void VectorIndex::shrink(int node, int layer, size_t cap) {
    auto& list = nodes_[static_cast<size_t>(node)].links[static_cast<size_t>(layer)];
    if (list.size() <= cap) return;

    std::vector<Candidate> ranked;
    ranked.reserve(list.size());
    for (int n : list) {
        ranked.push_back({sim(nodes_[static_cast<size_t>(node)].vector, n), n});
    }
    auto selected = select_neighbors(nodes_[static_cast<size_t>(node)].vector,
                                     std::move(ranked), cap);

    std::vector<char> keep_flag(nodes_.size(), 0);
    for (const auto& cand : selected) keep_flag[static_cast<size_t>(cand.node)] = 1;

    std::vector<int> keep;
    keep.reserve(cap + 1);
    for (int neighbor : list) {
        if (keep_flag[static_cast<size_t>(neighbor)]) {
            keep.push_back(neighbor);
            continue;
        }
        auto& dlist = nodes_[static_cast<size_t>(neighbor)].links[static_cast<size_t>(layer)];
        if (dlist.size() <= 1) {
            // dropping the symmetric edge would isolate the neighbor
            keep.push_back(neighbor);
            continue;
        }
        dlist.erase(std::find(dlist.begin(), dlist.end(), node));
    }
    list = std::move(keep);
}

void VectorIndex::connect(int a, int b, int layer, size_t cap) {
    nodes_[static_cast<size_t>(a)].links[static_cast<size_t>(layer)].push_back(b);
    nodes_[static_cast<size_t>(b)].links[static_cast<size_t>(layer)].push_back(a);
    shrink(a, layer, cap);
    shrink(b, layer, cap);
}

VectorIndex VectorIndex::build(std::vector<ChunkVector> items, const HnswParams& params) {
    params.validate();

    std::sort(items.begin(), items.end(), [](const ChunkVector& a, const ChunkVector& b) {
        return a.chunk_id < b.chunk_id;
    });
    for (size_t i = 1; i < items.size(); ++i) {
        if (items[i].chunk_id == items[i - 1].chunk_id) {
            throw std::runtime_error("duplicate chunk_id in index build: " +
                                     items[i].chunk_id);
        }
    }

    VectorIndex index;
    index.params_ = params;
    if (items.empty()) return index;

    index.dim_ = items.front().vector.size();
    for (const auto& item : items) {
        if (item.vector.size() != index.dim_) {
            throw std::runtime_error(
                "dimension mismatch for chunk " + item.chunk_id + ": got " +
                std::to_string(item.vector.size()) + ", expected " +
                std::to_string(index.dim_));
        }
    }

    index.nodes_.reserve(items.size());
    for (auto& item : items) {
        Node node;
        node.chunk_id = std::move(item.chunk_id);
        node.vector = std::move(item.vector);
        index.nodes_.push_back(std::move(node));
    }

    // Geometric level distribution with multiplier 1/ln(M), one draw per
    // node in insertion order.
    SplitMix rng(params.level_seed);
    const double mult = 1.0 / std::log(static_cast<double>(params.M));
    const size_t m = static_cast<size_t>(params.M);
    const size_t m0 = 2 * m;

    for (int i = 0; i < static_cast<int>(index.nodes_.size()); ++i) {
        int level = static_cast<int>(std::floor(-std::log(rng.next_unit()) * mult));
        level = std::min(level, kMaxLevelCap);
        index.nodes_[static_cast<size_t>(i)].links.assign(
            static_cast<size_t>(level) + 1, {});

        if (index.entry_ < 0) {
            index.entry_ = i;
            index.max_level_ = level;
            continue;
        }

        std::span<const float> q = index.nodes_[static_cast<size_t>(i)].vector;
        int ep = index.greedy_descend(q, index.max_level_, level);
        for (int lc = std::min(level, index.max_level_); lc >= 0; --lc) {
            auto found = index.search_layer(q, ep, static_cast<size_t>(params.ef_construction),
                                            lc, nullptr);
            size_t cap = lc == 0 ? m0 : m;
            auto neighbors = index.select_neighbors(q, found, m);
            for (const auto& neighbor : neighbors) {
                index.connect(i, neighbor.node, lc, cap);
            }
            ep = found.front().node;
        }
        if (level > index.max_level_) {
            index.max_level_ = level;
            index.entry_ = i;
        }
    }
    return index;
}

std::vector<ScoredChunk> VectorIndex::search(std::span<const float> query, int top_k,
                                             int ef_search) const {
    return search_traced(query, top_k, ef_search, nullptr);
}

std::vector<ScoredChunk> VectorIndex::search_traced(
    std::span<const float> query, int top_k, int ef_search,
    std::vector<std::string>* visited_layer0) const {
    if (top_k < 0) throw std::invalid_argument("top_k must be >= 0");
    if (nodes_.empty() || top_k == 0) return {};
    if (query.size() != dim_) {
        throw std::invalid_argument("query dimension mismatch: got " +
                                    std::to_string(query.size()) + ", index has " +
                                    std::to_string(dim_));
    }

    size_t ef = static_cast<size_t>(std::max(ef_search, top_k));
    int ep = greedy_descend(query, max_level_, 0);
    std::vector<int> visited;
    auto found = search_layer(query, ep, ef, 0, visited_layer0 ? &visited : nullptr);
    if (visited_layer0) {
        visited_layer0->clear();
        visited_layer0->reserve(visited.size());
        for (int v : visited) {
            visited_layer0->push_back(nodes_[static_cast<size_t>(v)].chunk_id);
        }
    }

    std::vector<ScoredChunk> out;
    out.reserve(std::min<size_t>(found.size(), static_cast<size_t>(top_k)));
    for (size_t i = 0; i < found.size() && i < static_cast<size_t>(top_k); ++i) {
        out.push_back({nodes_[static_cast<size_t>(found[i].node)].chunk_id, found[i].sim});
    }
    return out;
}

std::vector<std::vector<ScoredChunk>> VectorIndex::search_batch(
    std::span<const std::vector<float>> queries, int top_k, int ef_search) const {
    std::vector<std::vector<ScoredChunk>> out(queries.size());
    #pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(queries.size()); ++i) {
        out[static_cast<size_t>(i)] = search(queries[static_cast<size_t>(i)], top_k, ef_search);
    }
    return out;
}

std::vector<std::vector<ScoredChunk>> VectorIndex::search_batch_serial(
    std::span<const std::vector<float>> queries, int top_k, int ef_search) const {
    std::vector<std::vector<ScoredChunk>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        out.push_back(search(q, top_k, ef_search));
    }
    return out;
}

std::string VectorIndex::entry_chunk() const {
    if (entry_ < 0) return {};
    return nodes_[static_cast<size_t>(entry_)].chunk_id;
}

std::vector<ChunkVector> VectorIndex::items() const {
    std::vector<ChunkVector> out;
    out.reserve(nodes_.size());
    for (const auto& node : nodes_) {
        out.push_back({node.chunk_id, node.vector});
    }
    return out;
}

std::vector<std::string> VectorIndex::layer_neighbors(const std::string& chunk_id,
                                                      int layer) const {
    for (const auto& node : nodes_) {
        if (node.chunk_id != chunk_id) continue;
        std::vector<std::string> out;
        if (layer < static_cast<int>(node.links.size())) {
            for (int n : node.links[static_cast<size_t>(layer)]) {
                out.push_back(nodes_[static_cast<size_t>(n)].chunk_id);
            }
        }
        return out;
    }
    throw std::invalid_argument("unknown chunk_id: " + chunk_id);
}

bool VectorIndex::all_reachable_layer0() const {
    if (nodes_.empty()) return true;
    std::vector<char> seen(nodes_.size(), 0);
    std::deque<int> queue{entry_};
    seen[static_cast<size_t>(entry_)] = 1;
    size_t count = 0;
    while (!queue.empty()) {
        int n = queue.front();
        queue.pop_front();
        ++count;
        for (int e : nodes_[static_cast<size_t>(n)].links[0]) {
            if (!seen[static_cast<size_t>(e)]) {
                seen[static_cast<size_t>(e)] = 1;
                queue.push_back(e);
            }
        }
    }
    return count == nodes_.size();
}

void VectorIndex::save(const std::filesystem::path& path) const {
    ByteWriter w;
    w.raw(std::string_view(kIndexMagic, 8));
    w.i32(params_.M);
    w.i32(params_.ef_construction);
    w.i32(params_.ef_search);
    w.u64(params_.level_seed);
    w.u32(static_cast<uint32_t>(dim_));
    w.u64(nodes_.size());
    w.i64(entry_);
    w.i32(max_level_);
    for (const auto& node : nodes_) {
        w.str(node.chunk_id);
        for (float v : node.vector) w.f32(v);
        w.u32(static_cast<uint32_t>(node.links.size()));
        for (const auto& layer : node.links) {
            w.u32(static_cast<uint32_t>(layer.size()));
            for (int n : layer) w.u32(static_cast<uint32_t>(n));
        }
    }
    write_file(path, w.bytes());
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
    std::string data = read_file(path);
    ByteReader r(data);
    if (r.raw(8) != std::string_view(kIndexMagic, 8)) {
        throw std::runtime_error("not an index file: " + path.string());
    }
    VectorIndex index;
    index.params_.M = r.i32();
    index.params_.ef_construction = r.i32();
    index.params_.ef_search = r.i32();
    index.params_.level_seed = r.u64();
    index.dim_ = r.u32();
    uint64_t count = r.u64();
    index.entry_ = static_cast<int>(r.i64());
    index.max_level_ = r.i32();
    index.nodes_.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        Node node;
        node.chunk_id = r.str();
        node.vector.resize(index.dim_);
        for (auto& v : node.vector) v = r.f32();
        uint32_t layers = r.u32();
        node.links.resize(layers);
        for (auto& layer : node.links) {
            uint32_t n = r.u32();
            layer.resize(n);
            for (auto& e : layer) e = static_cast<int>(r.u32());
        }
        index.nodes_.push_back(std::move(node));
    }
    if (!r.done()) {
        throw std::runtime_error("trailing bytes in index file: " + path.string());
    }
    return index;
}

namespace {

std::vector<ScoredChunk> select_top_k(std::span<const ChunkVector> items,
                                      std::vector<double> scores, int top_k) {
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t k = std::min<size_t>(static_cast<size_t>(top_k), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                      [&](size_t a, size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return items[a].chunk_id < items[b].chunk_id;
                      });
    std::vector<ScoredChunk> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        out.push_back({items[order[i]].chunk_id, scores[order[i]]});
    }
    return out;
}

void check_query(std::span<const ChunkVector> items, std::span<const float> query,
                 int top_k) {
    if (top_k < 0) throw std::invalid_argument("top_k must be >= 0");
    if (!items.empty() && query.size() != items.front().vector.size()) {
        throw std::invalid_argument("query dimension mismatch: got " +
                                    std::to_string(query.size()) + ", chunks have " +
                                    std::to_string(items.front().vector.size()));
    }
}

}  // namespace

std::vector<ScoredChunk> brute_force(std::span<const ChunkVector> items,
                                     std::span<const float> query, int top_k) {
    check_query(items, query, top_k);
    if (top_k == 0 || items.empty()) return {};
    std::vector<double> scores(items.size());
    #pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(items.size()); ++i) {
        scores[static_cast<size_t>(i)] = dot(query, items[static_cast<size_t>(i)].vector);
    }
    return select_top_k(items, std::move(scores), top_k);
}

std::vector<ScoredChunk> brute_force_serial(std::span<const ChunkVector> items,
                                            std::span<const float> query, int top_k) {
    check_query(items, query, top_k);
    if (top_k == 0 || items.empty()) return {};
    std::vector<double> scores(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        scores[i] = dot(query, items[i].vector);
    }
    return select_top_k(items, std::move(scores), top_k);
}

double recall_at_k(const VectorIndex& index,
                   std::span<const std::vector<float>> queries, int top_k,
                   int ef_search) {
    if (queries.empty()) {
        throw std::invalid_argument("recall_at_k: empty query set");
    }
    if (top_k <= 0) {
        throw std::invalid_argument("recall_at_k: top_k must be >= 1");
    }
    auto items = index.items();
    size_t denom = std::min<size_t>(static_cast<size_t>(top_k), items.size());
    if (denom == 0) {
        throw std::invalid_argument("recall_at_k: empty index");
    }

    std::vector<double> recalls(queries.size());
    #pragma omp parallel for schedule(static)
    for (long qi = 0; qi < static_cast<long>(queries.size()); ++qi) {
        const auto& q = queries[static_cast<size_t>(qi)];
        auto approx = index.search(q, top_k, ef_search);
        auto exact = brute_force_serial(items, q, top_k);
        size_t hits = 0;
        for (const auto& e : exact) {
            for (const auto& a : approx) {
                if (a.chunk_id == e.chunk_id) {
                    ++hits;
                    break;
                }
            }
        }
        recalls[static_cast<size_t>(qi)] = static_cast<double>(hits) /
                                           static_cast<double>(denom);
    }
    // serial sum in query order keeps the result independent of thread count
    double sum = 0.0;
    for (double r : recalls) sum += r;
    return sum / static_cast<double>(queries.size());
}

}  // namespace lexrag
