#include "lexrag/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <omp.h>

#include "lexrag/util.hpp"

#include <httplib.h>
#include <json.hpp>

namespace lexrag {

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    }
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

void l2_normalize(std::vector<float>& values) {
    double sum = 0.0;
    for (float v : values) sum += static_cast<double>(v) * v;
    if (sum <= 0.0) return;
    double inv = 1.0 / std::sqrt(sum);
    for (float& v : values) v = static_cast<float>(v * inv);
}

EmbeddingVector mock_embed(std::string_view text, size_t dim, uint64_t seed) {
    if (dim < 8) {
        throw std::invalid_argument("mock_embed: dim must be >= 8");
    }
    EmbeddingVector vec;
    vec.model_id = "mock-trigram";
    vec.values.assign(dim, 0.0f);

    // Pad so even a single character yields one trigram.
    std::string padded;
    padded.reserve(text.size() + 2);
    padded.push_back(' ');
    padded.append(text);
    padded.push_back(' ');

    for (size_t i = 0; i + 3 <= padded.size(); ++i) {
        uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3), seed ^ 0x9e3779b97f4a7c15ULL);
        uint64_t mixed = h;
        mixed = splitmix64(mixed);
        size_t bucket = static_cast<size_t>(mixed % dim);
        float sign = (mixed & (1ULL << 63)) ? -1.0f : 1.0f;
        vec.values[bucket] += sign;
    }

    double sum = 0.0;
    for (float v : vec.values) sum += static_cast<double>(v) * v;
    if (sum == 0.0) {
        // All bucket contributions cancelled; fall back to a single
        // deterministic spike so the vector stays unit-norm.
        vec.values[fnv1a64(text, seed) % dim] = 1.0f;
    } else {
        l2_normalize(vec.values);
    }
    return vec;
}

namespace {

std::string floats_to_le_bytes(std::span<const float> values) {
    std::string bytes(values.size() * 4, '\0');
    for (size_t i = 0; i < values.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &values[i], 4);
        bytes[4 * i + 0] = static_cast<char>(bits & 0xff);
        bytes[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
        bytes[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
        bytes[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
    }
    return bytes;
}

std::vector<float> le_bytes_to_floats(std::string_view bytes) {
    if (bytes.size() % 4 != 0) {
        throw std::runtime_error("vector file length is not a multiple of 4");
    }
    std::vector<float> values(bytes.size() / 4);
    for (size_t i = 0; i < values.size(); ++i) {
        uint32_t bits = (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 0]))) |
                        (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 1])) << 8) |
                        (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 2])) << 16) |
                        (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 3])) << 24);
        std::memcpy(&values[i], &bits, 4);
    }
    return values;
}

}  // namespace

VectorCache::VectorCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string VectorCache::make_key(std::string_view model_id, std::string_view text) {
    std::string material;
    material.reserve(model_id.size() + text.size() + 1);
    material.append(model_id);
    material.push_back('\0');
    material.append(text);
    return hash_hex128(material);
}

std::optional<std::vector<float>> VectorCache::get(const std::string& key) const {
    auto path = dir_ / (key + ".vec");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return le_bytes_to_floats(buf.str());
}

void VectorCache::put(const std::string& key, const std::string& model_id,
                      std::span<const float> values) {
    std::lock_guard<std::mutex> lock(write_mutex_);
    auto path = dir_ / (key + ".vec");
    if (std::filesystem::exists(path)) return;
    auto tmp = dir_ / (key + ".vec.tmp");
    write_file(tmp, floats_to_le_bytes(values));
    std::filesystem::rename(tmp, path);

    nlohmann::ordered_json entry;
    entry["key"] = key;
    entry["model_id"] = model_id;
    entry["dim"] = values.size();
    std::ofstream manifest(dir_ / "manifest.jsonl", std::ios::app);
    manifest << entry.dump() << "\n";
}

EmbeddingBackend::EmbeddingBackend(EmbeddingBackendConfig config)
    : config_(std::move(config)) {
    if (!config_.cache_dir.empty()) {
        cache_ = std::make_unique<VectorCache>(config_.cache_dir);
    }
}

EmbeddingVector EmbeddingBackend::compute(const std::string& trimmed) {
    if (config_.kind == EmbeddingBackendConfig::Kind::Mock) {
        EmbeddingVector vec = mock_embed(trimmed, config_.mock_dim, config_.mock_seed);
        vec.model_id = config_.model_id;
        return vec;
    }
    auto vecs = fetch_remote(std::span<const std::string>(&trimmed, 1));
    return std::move(vecs.front());
}

EmbeddingVector EmbeddingBackend::embed(std::string_view text) {
    std::string trimmed = trim(text);
    if (trimmed.empty()) {
        throw std::invalid_argument("embedding input is empty after trimming");
    }
    std::string key;
    if (cache_) {
        key = VectorCache::make_key(config_.model_id, trimmed);
        if (auto hit = cache_->get(key)) {
            return EmbeddingVector{std::move(*hit), config_.model_id};
        }
    }
    EmbeddingVector vec = compute(trimmed);
    if (cache_) {
        cache_->put(key, config_.model_id, vec.values);
    }
    return vec;
}

std::vector<EmbeddingVector> EmbeddingBackend::embed_batch(
    std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out(texts.size());
    if (config_.kind == EmbeddingBackendConfig::Kind::Mock) {
        #pragma omp parallel for schedule(static)
        for (long i = 0; i < static_cast<long>(texts.size()); ++i) {
            out[static_cast<size_t>(i)] = embed(texts[static_cast<size_t>(i)]);
        }
        return out;
    }

    // Remote: resolve cache hits first, then fetch the misses in request
    // batches. Network latency dominates, so no thread-level parallelism.
    std::vector<size_t> misses;
    std::vector<std::string> miss_texts;
    for (size_t i = 0; i < texts.size(); ++i) {
        std::string trimmed = trim(texts[i]);
        if (trimmed.empty()) {
            throw std::invalid_argument("embedding input is empty after trimming");
        }
        if (cache_) {
            auto key = VectorCache::make_key(config_.model_id, trimmed);
            if (auto hit = cache_->get(key)) {
                out[i] = EmbeddingVector{std::move(*hit), config_.model_id};
                continue;
            }
        }
        misses.push_back(i);
        miss_texts.push_back(std::move(trimmed));
    }
    for (size_t off = 0; off < miss_texts.size(); off += config_.remote_batch) {
        size_t n = std::min(config_.remote_batch, miss_texts.size() - off);
        auto vecs = fetch_remote(std::span<const std::string>(miss_texts).subspan(off, n));
        for (size_t j = 0; j < n; ++j) {
            size_t slot = misses[off + j];
            if (cache_) {
                cache_->put(VectorCache::make_key(config_.model_id, miss_texts[off + j]),
                            config_.model_id, vecs[j].values);
            }
            out[slot] = std::move(vecs[j]);
        }
    }
    return out;
}

std::vector<EmbeddingVector> EmbeddingBackend::embed_batch_serial(
    std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        out.push_back(embed(t));
    }
    return out;
}

std::vector<EmbeddingVector> EmbeddingBackend::fetch_remote(
    std::span<const std::string> trimmed) {
    if (config_.endpoint.empty()) {
        throw std::runtime_error("remote embedding backend has no endpoint configured");
    }

    // endpoint = scheme://host[:port]/path
    auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) {
        throw std::runtime_error("embedding endpoint must include a scheme: " +
                                 config_.endpoint);
    }
    auto path_start = config_.endpoint.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos
                           ? config_.endpoint
                           : config_.endpoint.substr(0, path_start);
    std::string path = path_start == std::string::npos
                           ? "/"
                           : config_.endpoint.substr(path_start);

    nlohmann::ordered_json request;
    request["model"] = config_.model_id;
    request["input"] = nlohmann::json::array();
    for (const auto& t : trimmed) request["input"].push_back(t);
    std::string body = request.dump();

    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        httplib::Client client(base);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        httplib::Headers headers;
        if (!config_.api_key_env.empty()) {
            if (const char* token = std::getenv(config_.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + token);
            }
        }
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
            continue;
        }
        auto json = nlohmann::json::parse(res->body, nullptr, false);
        if (json.is_discarded() || !json.contains("data") || !json["data"].is_array() ||
            json["data"].size() != trimmed.size()) {
            throw std::runtime_error("embedding endpoint returned a malformed response");
        }
        std::vector<EmbeddingVector> out;
        out.reserve(trimmed.size());
        for (const auto& item : json["data"]) {
            EmbeddingVector vec;
            vec.model_id = config_.model_id;
            vec.values = item.at("embedding").get<std::vector<float>>();
            l2_normalize(vec.values);
            out.push_back(std::move(vec));
        }
        return out;
    }
    throw std::runtime_error("embedding request failed after " +
                             std::to_string(config_.max_attempts) +
                             " attempts (" + last_error + ")");
}

}  // namespace lexrag
