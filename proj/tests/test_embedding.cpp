#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "lexrag/embedding.hpp"
#include "lexrag/util.hpp"

#include <httplib.h>
#include <json.hpp>

#include "test_support.hpp"

using namespace lexrag;

namespace {

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    return dot(a.values, b.values);
}

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "lexrag_test" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("mock_embed: deterministic and unit norm") {
    auto a = mock_embed("Ort der Lieferung", 256, 1);
    auto b = mock_embed("Ort der Lieferung", 256, 1);
    CHECK(a.values == b.values);  // bitwise

    double norm = std::sqrt(dot(a.values, a.values));
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));

    auto other_seed = mock_embed("Ort der Lieferung", 256, 2);
    CHECK(a.values != other_seed.values);

    CHECK_THROWS_AS(mock_embed("x", 4, 1), std::invalid_argument);
}

TEST_CASE("mock_embed: norm holds for many inputs, even tiny ones") {
    for (int i = 0; i < 50; ++i) {
        auto vec = mock_embed(std::string(1, static_cast<char>('a' + i % 26)) +
                                  std::to_string(i),
                              64, 3);
        CHECK(std::sqrt(dot(vec.values, vec.values)) ==
              doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("mock_embed: shared trigrams score higher than disjoint") {
    // exhaustive check on 3 hand-built strings
    auto base = mock_embed("die lieferung beginnt in graz", 256, 1);
    auto overlapping = mock_embed("die lieferung endet in graz", 256, 1);
    auto disjoint = mock_embed("xyzq wvut 98765 ppp", 256, 1);
    CHECK(cosine(base, overlapping) > cosine(base, disjoint));
}

TEST_CASE("embed: similarity ordering on a 20-text fixture") {
    EmbeddingBackendConfig config;
    config.mock_dim = 256;
    EmbeddingBackend backend(config);

    const std::string unrelated = "q8 zz kk 12345 %% __ ~~ ??";
    int wins = 0;
    for (int i = 0; i < 20; ++i) {
        std::string text = "Der Unternehmer führt die Leistung Nummer " +
                           std::to_string(i) + " im Inland aus";
        std::string extended = text + ". Dazu kommt ein weiterer Satz über die Steuer.";
        auto t = backend.embed(text);
        auto t_prime = backend.embed(extended);
        auto u = backend.embed(unrelated + std::to_string(i));
        if (cosine(t, t_prime) > cosine(t, u)) ++wins;
    }
    CHECK(wins == 20);
}

TEST_CASE("embed: empty after trimming is an input error") {
    EmbeddingBackendConfig config;
    EmbeddingBackend backend(config);
    CHECK_THROWS_AS(backend.embed(""), std::invalid_argument);
    CHECK_THROWS_AS(backend.embed("   \n\t "), std::invalid_argument);
}

TEST_CASE("cache: round-trip returns the identical vector") {
    auto dir = temp_dir("cache");
    EmbeddingBackendConfig config;
    config.cache_dir = dir.string();
    config.mock_dim = 128;

    std::vector<float> first;
    {
        EmbeddingBackend backend(config);
        first = backend.embed("Der Ort der Lieferung liegt im Inland.").values;
    }
    {
        EmbeddingBackend backend(config);  // fresh instance, warm cache
        auto second = backend.embed("Der Ort der Lieferung liegt im Inland.").values;
        REQUIRE(second.size() == first.size());
        for (size_t i = 0; i < first.size(); ++i) {
            CHECK(std::abs(static_cast<double>(second[i]) - first[i]) <= 1e-12);
        }
    }
    CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
}

TEST_CASE("cache: key separates models") {
    CHECK(VectorCache::make_key("model-a", "text") !=
          VectorCache::make_key("model-b", "text"));
    CHECK(VectorCache::make_key("model-a", "text") ==
          VectorCache::make_key("model-a", "text"));
}

TEST_CASE("embed_batch: OpenMP path matches the serial reference bitwise") {
    EmbeddingBackendConfig config;
    config.mock_dim = 256;
    EmbeddingBackend backend(config);

    std::vector<std::string> texts;
    for (int i = 0; i < 100; ++i) {
        texts.push_back("Fall Nummer " + std::to_string(i) + " über die Lieferung");
    }
    auto parallel = backend.embed_batch(texts);
    auto serial = backend.embed_batch_serial(texts);
    REQUIRE(parallel.size() == serial.size());
    for (size_t i = 0; i < parallel.size(); ++i) {
        CHECK(parallel[i].values == serial[i].values);
    }
}

TEST_CASE("remote backend: wire format, retries, attempt counting") {
    httplib::Server server;
    std::atomic<int> calls{0};
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        int call = ++calls;
        if (call <= 2) {  // two transport-level failures, then success
            res.status = 503;
            return;
        }
        auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.at("model").get<std::string>() == "remote-test");
        REQUIRE(body.at("input").is_array());
        nlohmann::json out;
        out["data"] = nlohmann::json::array();
        for (const auto& text : body["input"]) {
            auto vec = mock_embed(text.get<std::string>(), 32, 9);
            // deliberately unnormalized; the client normalizes
            for (auto& v : vec.values) v *= 3.0f;
            out["data"].push_back({{"embedding", vec.values}});
        }
        res.set_content(out.dump(), "application/json");
    });

    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    EmbeddingBackendConfig config;
    config.kind = EmbeddingBackendConfig::Kind::Remote;
    config.model_id = "remote-test";
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings";
    config.max_attempts = 3;
    EmbeddingBackend backend(config);

    auto vec = backend.embed("Ein Satz für den entfernten Dienst.");
    CHECK(vec.dim() == 32);
    CHECK(std::sqrt(dot(vec.values, vec.values)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(calls.load() == 3);

    // a second call fails twice and the budget of 2 is exhausted
    calls.store(0);
    config.max_attempts = 2;
    EmbeddingBackend strict(config);
    try {
        strict.embed("noch ein Satz");
        FAIL("expected retry exhaustion");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("2 attempts") != std::string::npos);
    }

    server.stop();
    server_thread.join();
}
