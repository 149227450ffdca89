#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lexrag {

struct EmbeddingVector {
    std::vector<float> values;
    std::string model_id;

    size_t dim() const { return values.size(); }
};

// Cosine on pre-normalized vectors is the plain dot product; this is the
// single metric code path used everywhere.
double dot(std::span<const float> a, std::span<const float> b);

void l2_normalize(std::vector<float>& values);

// Deterministic test double for a remote embedding model: a hashed
// character-trigram bag projected onto `dim` signed buckets, then
// L2-normalized. Pure function of (text, dim, seed); texts sharing
// trigrams land in shared buckets, so cosine similarity tracks surface
// overlap.
EmbeddingVector mock_embed(std::string_view text, size_t dim, uint64_t seed);

// Content-addressed vector cache: one raw little-endian float32 file per
// key plus a JSONL sidecar manifest. Concurrent readers are fine; writes
// are serialized internally.
class VectorCache {
public:
    explicit VectorCache(std::filesystem::path dir);

    std::optional<std::vector<float>> get(const std::string& key) const;
    void put(const std::string& key, const std::string& model_id,
             std::span<const float> values);

    static std::string make_key(std::string_view model_id, std::string_view text);

private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
};

struct EmbeddingBackendConfig {
    enum class Kind { Mock, Remote };
    Kind kind = Kind::Mock;
    std::string model_id = "mock-trigram";
    // mock
    size_t mock_dim = 256;
    uint64_t mock_seed = 1;
    // remote
    std::string endpoint;         // e.g. http://host:port/v1/embeddings
    std::string api_key_env;      // env var holding the bearer token
    int timeout_seconds = 30;
    int max_attempts = 3;
    size_t remote_batch = 16;     // texts per request
    // optional on-disk cache
    std::string cache_dir;
};

class EmbeddingBackend {
public:
    explicit EmbeddingBackend(EmbeddingBackendConfig config);

    const EmbeddingBackendConfig& config() const { return config_; }
    const std::string& model_id() const { return config_.model_id; }

    // Unit-norm vector for one text. Throws std::invalid_argument on
    // text that is empty after trimming; remote transport failures are
    // retried up to max_attempts and then surface as std::runtime_error
    // carrying the attempt count.
    EmbeddingVector embed(std::string_view text);

    // OpenMP over texts for the mock backend; request batching for the
    // remote one. Output order always matches input order.
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);

    // Serial reference implementation kept for testing and benchmarks;
    // results are bitwise identical to embed_batch.
    std::vector<EmbeddingVector> embed_batch_serial(std::span<const std::string> texts);

private:
    EmbeddingVector compute(const std::string& trimmed);
    std::vector<EmbeddingVector> fetch_remote(std::span<const std::string> trimmed);

    EmbeddingBackendConfig config_;
    std::unique_ptr<VectorCache> cache_;
};

}  // namespace lexrag
