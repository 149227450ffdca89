// Benchmark comparing the OpenMP kernels against their serial reference
// implementations: batch mock embedding, brute-force top-k scoring and
// batch index search. Results must match exactly; timings show the
// parallel speedup on the current machine.

#include <cstdio>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "lexrag/embedding.hpp"
#include "lexrag/vecindex.hpp"

using namespace lexrag;

namespace {

std::vector<std::string> synth_texts(size_t n) {
    const char* stems[] = {"Lieferung", "Leistung", "Erwerb",   "Beförderung",
                           "Grundstück", "Steuer",   "Abnehmer", "Unternehmer"};
    std::vector<std::string> texts;
    texts.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        std::string t;
        for (size_t w = 0; w < 24; ++w) {
            t += stems[(i * 7 + w * 3) % 8];
            t += " " + std::to_string((i + w * 13) % 97) + " ";
        }
        texts.push_back(std::move(t));
    }
    return texts;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e100;
    for (int r = 0; r < reps; ++r) {
        double t0 = omp_get_wtime();
        fn();
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best;
}

void print_row(const char* name, double serial_s, double parallel_s, bool equal) {
    std::printf("%-28s %10.4f ms %10.4f ms %8.2fx   %s\n", name, serial_s * 1e3,
                parallel_s * 1e3, serial_s / parallel_s, equal ? "match" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    size_t n = 2000, dim = 256, queries = 64;
    int top_k = 5, reps = 3, threads = 0;
    app.add_option("--n", n, "corpus vectors");
    app.add_option("--dim", dim, "embedding dimension");
    app.add_option("--queries", queries, "query count");
    app.add_option("--top-k", top_k, "results per query");
    app.add_option("--reps", reps, "repetitions (best-of)");
    app.add_option("--threads", threads, "OpenMP threads (0 = default)");
    CLI11_PARSE(app, argc, argv);

    if (threads > 0) omp_set_num_threads(threads);
    std::printf("n=%zu dim=%zu queries=%zu top_k=%d threads=%d\n\n", n, dim, queries,
                top_k, omp_get_max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    EmbeddingBackendConfig config;
    config.mock_dim = dim;
    EmbeddingBackend backend(config);
    auto texts = synth_texts(n);

    std::vector<EmbeddingVector> serial_vecs, parallel_vecs;
    double t_serial = time_best_of(reps, [&] { serial_vecs = backend.embed_batch_serial(texts); });
    double t_parallel = time_best_of(reps, [&] { parallel_vecs = backend.embed_batch(texts); });
    bool equal = serial_vecs.size() == parallel_vecs.size();
    for (size_t i = 0; equal && i < serial_vecs.size(); ++i) {
        equal = serial_vecs[i].values == parallel_vecs[i].values;
    }
    print_row("mock_embed batch", t_serial, t_parallel, equal);

    std::vector<ChunkVector> items;
    items.reserve(n);
    char id[32];
    for (size_t i = 0; i < n; ++i) {
        std::snprintf(id, sizeof(id), "c%06zu", i);
        items.push_back({id, serial_vecs[i].values});
    }
    auto query_texts = synth_texts(queries);
    std::vector<std::vector<float>> query_vecs;
    for (size_t i = 0; i < queries; ++i) {
        query_vecs.push_back(mock_embed(query_texts[i] + " Anfrage", dim, 2).values);
    }

    std::vector<ScoredChunk> bf_serial, bf_parallel;
    t_serial = time_best_of(reps, [&] {
        for (const auto& q : query_vecs) bf_serial = brute_force_serial(items, q, top_k);
    });
    t_parallel = time_best_of(reps, [&] {
        for (const auto& q : query_vecs) bf_parallel = brute_force(items, q, top_k);
    });
    equal = bf_serial.size() == bf_parallel.size();
    for (size_t i = 0; equal && i < bf_serial.size(); ++i) {
        equal = bf_serial[i].chunk_id == bf_parallel[i].chunk_id &&
                bf_serial[i].score == bf_parallel[i].score;
    }
    print_row("brute_force top-k", t_serial, t_parallel, equal);

    HnswParams params;
    double t_build = omp_get_wtime();
    VectorIndex index = VectorIndex::build(items, params);
    t_build = omp_get_wtime() - t_build;

    std::vector<std::vector<ScoredChunk>> hs_serial, hs_parallel;
    t_serial = time_best_of(reps, [&] {
        hs_serial = index.search_batch_serial(query_vecs, top_k, params.ef_search);
    });
    t_parallel = time_best_of(reps, [&] {
        hs_parallel = index.search_batch(query_vecs, top_k, params.ef_search);
    });
    equal = hs_serial.size() == hs_parallel.size();
    for (size_t i = 0; equal && i < hs_serial.size(); ++i) {
        equal = hs_serial[i].size() == hs_parallel[i].size();
        for (size_t j = 0; equal && j < hs_serial[i].size(); ++j) {
            equal = hs_serial[i][j].chunk_id == hs_parallel[i][j].chunk_id &&
                    hs_serial[i][j].score == hs_parallel[i][j].score;
        }
    }
    print_row("hnsw search batch", t_serial, t_parallel, equal);

    std::printf("\nhnsw build (serial by design): %.1f ms for %zu vectors\n",
                t_build * 1e3, n);
    return 0;
}
