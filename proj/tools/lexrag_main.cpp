// lexrag: RAG experimentation harness for legal case decision-making.
//
// Pipeline subcommands: ingest -> chunk -> index -> ask/run/grid,
// plus mcnemar, export-finetune and report over persisted runs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lexrag/harness.hpp"

namespace fs = std::filesystem;
using namespace lexrag;

namespace {

EmbeddingBackendConfig embedding_config_from_flags(const std::string& kind,
                                                   const std::string& model,
                                                   size_t dim, uint64_t seed,
                                                   const std::string& endpoint,
                                                   const std::string& api_key_env,
                                                   const std::string& cache_dir) {
    EmbeddingBackendConfig config;
    if (kind == "mock") {
        config.kind = EmbeddingBackendConfig::Kind::Mock;
    } else if (kind == "remote") {
        config.kind = EmbeddingBackendConfig::Kind::Remote;
    } else {
        throw std::runtime_error("unknown embedding kind: " + kind);
    }
    config.model_id = model;
    config.mock_dim = dim;
    config.mock_seed = seed;
    config.endpoint = endpoint;
    config.api_key_env = api_key_env;
    config.cache_dir = cache_dir;
    return config;
}

// "scripted:<path>" or "remote:<endpoint>"
LlmBackend llm_from_flag(const std::string& spec, const std::string& model_id,
                         const std::string& api_key_env, int max_attempts) {
    LlmBackend backend = [&]() {
        if (spec.rfind("scripted:", 0) == 0) {
            return LlmBackend::scripted_from_file(spec.substr(9), model_id);
        }
        if (spec.rfind("remote:", 0) == 0) {
            LlmBackend::RemoteConfig remote;
            remote.endpoint = spec.substr(7);
            remote.api_key_env = api_key_env;
            return LlmBackend::remote(remote, model_id);
        }
        throw std::runtime_error("llm backend must be scripted:<path> or remote:<endpoint>");
    }();
    backend.set_max_attempts(max_attempts);
    return backend;
}

int cmd_ingest(const std::string& manifest, const std::string& rules_path,
               const std::string& variant, const std::string& out_dir) {
    auto docs = load_corpus(manifest);
    RuleSet rules;
    if (!rules_path.empty()) rules = RuleSet::load(rules_path);
    PrepVariant prep = prep_variant_from_string(variant);

    fs::create_directories(out_dir);
    nlohmann::ordered_json out_manifest;
    out_manifest["documents"] = nlohmann::ordered_json::array();
    for (const auto& doc : docs) {
        SourceDocument processed = preprocess(doc, prep, rules);
        std::string filename = doc.doc_id + ".md";
        write_file(fs::path(out_dir) / filename, processed.body);
        out_manifest["documents"].push_back({{"doc_id", doc.doc_id},
                                             {"title", doc.title},
                                             {"path", filename},
                                             {"page_count", doc.page_count}});
        std::printf("ingested %s (%zu -> %zu bytes, %s)\n", doc.doc_id.c_str(),
                    doc.body.size(), processed.body.size(), to_string(prep).c_str());
    }
    write_file(fs::path(out_dir) / "manifest.json", out_manifest.dump(2) + "\n");
    return 0;
}

int cmd_chunk(const std::string& manifest, const std::string& mode, size_t size,
              size_t overlap, const std::string& out_path) {
    auto docs = load_corpus(manifest);
    ChunkingMode chunking = chunking_mode_from_string(mode);
    std::vector<Chunk> all;
    for (const auto& doc : docs) {
        auto chunks = chunking == ChunkingMode::Fixed ? chunk_fixed(doc, size, overlap)
                                                      : chunk_layout(doc);
        all.insert(all.end(), chunks.begin(), chunks.end());
    }
    save_chunks_jsonl(all, out_path);
    std::printf("wrote %zu chunks from %zu documents to %s\n", all.size(), docs.size(),
                out_path.c_str());
    return 0;
}

int cmd_index(const std::string& chunks_path, const std::string& out_path,
              const EmbeddingBackendConfig& embed_config, const HnswParams& params) {
    auto chunks = load_chunks_jsonl(chunks_path);
    if (chunks.empty()) throw std::runtime_error("no chunks in " + chunks_path);

    EmbeddingBackend embedder(embed_config);
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& chunk : chunks) texts.push_back(chunk.text);
    auto vectors = embedder.embed_batch(texts);

    std::vector<ChunkVector> items;
    items.reserve(chunks.size());
    for (size_t i = 0; i < chunks.size(); ++i) {
        items.push_back({chunks[i].chunk_id, std::move(vectors[i].values)});
    }
    VectorIndex index = VectorIndex::build(std::move(items), params);
    index.save(out_path);

    // text manifest: chunk_id -> document/ordinal
    std::string manifest;
    for (const auto& chunk : chunks) {
        manifest += chunk.chunk_id + "\t" + chunk.doc_id + "\t" +
                    std::to_string(chunk.ordinal) + "\n";
    }
    write_file(out_path + ".manifest.tsv", manifest);
    std::printf("indexed %zu chunks (dim %zu, M %d, efConstruction %d) -> %s\n",
                index.size(), index.dim(), params.M, params.ef_construction,
                out_path.c_str());
    return 0;
}

int cmd_ask(const std::string& index_path, const std::string& chunks_path,
            const std::string& question, const std::string& template_id,
            const std::string& templates_dir, const std::string& countries_path,
            int top_k, int ef_search, bool paper_mode, bool no_rag,
            const EmbeddingBackendConfig& embed_config, LlmBackend llm,
            const std::string& routing_key) {
    TemplateSet templates = TemplateSet::load_dir(templates_dir);
    CountryTable countries = CountryTable::load(countries_path);

    std::vector<Chunk> contexts;
    if (!no_rag) {
        auto chunks = load_chunks_jsonl(chunks_path);
        VectorIndex index = VectorIndex::load(index_path);
        EmbeddingBackend embedder(embed_config);
        auto query_vec = embedder.embed(question);
        std::string warning;
        int ef = clamp_ef_search(ef_search, paper_mode, &warning);
        if (!warning.empty()) std::fprintf(stderr, "warning: %s\n", warning.c_str());
        auto scored = index.search(query_vec.values, top_k, ef);
        for (const auto& hit : scored) {
            for (const auto& chunk : chunks) {
                if (chunk.chunk_id == hit.chunk_id) {
                    contexts.push_back(chunk);
                    break;
                }
            }
            std::printf("retrieved %s (score %.4f)\n", hit.chunk_id.c_str(), hit.score);
        }
    }

    auto transcript = render_prompt(templates.get(template_id), contexts, question);
    auto result = llm.ask(transcript, routing_key);
    if (!result.ok) {
        std::fprintf(stderr, "ask failed after %d attempts: %s\n", result.attempts,
                     result.error.c_str());
        return 1;
    }
    std::printf("--- raw response (attempts: %d) ---\n%s\n", result.attempts,
                result.text.c_str());
    auto parsed = parse_answer(result.text);
    if (!parsed.ok()) {
        std::printf("--- parse: %s ---\n", parsed.message.c_str());
        return 0;
    }
    std::string country = countries.normalize(parsed.answer.country_raw);
    std::printf("--- parsed ---\njustification: %s\ncountry: %s (%s)\n",
                parsed.answer.justification.c_str(), parsed.answer.country_raw.c_str(),
                country.c_str());
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& cases_path,
            const std::string& runs_dir) {
    RagConfig config = RagConfig::load(config_path);
    auto cases = load_cases(cases_path);
    RunEnv env = make_env(config);
    RunRecord record = run_experiment(config, cases, env);
    if (!runs_dir.empty()) {
        record.save(runs_dir);
        std::printf("saved run to %s/%s\n", runs_dir.c_str(), record.run_id.c_str());
    }
    std::fputs(render_run_report(record).c_str(), stdout);
    return 0;
}

int cmd_grid(const std::string& grid_path, const std::string& cases_path,
             const std::string& runs_dir) {
    auto json = nlohmann::json::parse(read_file(grid_path));
    if (!json.is_array()) throw std::runtime_error("grid file must be a JSON array");
    std::vector<RagConfig> grid;
    for (const auto& entry : json) {
        RagConfig config = RagConfig::from_json(entry);
        config.rebase_paths(fs::path(grid_path).parent_path());
        grid.push_back(std::move(config));
    }
    auto cases = load_cases(cases_path);
    GridResult result = grid_search(grid, cases, make_env, runs_dir);
    std::fputs(render_grid_report(result).c_str(), stdout);
    return 0;
}

int cmd_mcnemar(const std::string& run_a, const std::string& run_b,
                const std::vector<long long>& cells) {
    if (!cells.empty()) {
        if (cells.size() != 4) throw std::runtime_error("--cells needs a b c d");
        ContingencyTable2x2 table{cells[0], cells[1], cells[2], cells[3]};
        auto result = mcnemar_yates(table);
        std::printf("contingency: a=%lld b=%lld c=%lld d=%lld\n", table.a, table.b,
                    table.c, table.d);
        std::printf("mcnemar: statistic = %.4f, p = %.3f\n", result.statistic,
                    result.p_value);
        return 0;
    }
    RunRecord a = RunRecord::load_dir(run_a);
    RunRecord b = RunRecord::load_dir(run_b);
    std::fputs(render_paired_report(a, b).c_str(), stdout);
    return 0;
}

int cmd_export_finetune(const std::string& cases_path, double ratio, uint64_t seed,
                        const std::string& out_dir, int batch_size,
                        double lr_multiplier, int epochs) {
    auto cases = load_cases(cases_path);
    FineTuneJobConfig job;
    job.batch_size = batch_size;
    job.learning_rate_multiplier = lr_multiplier;
    job.epochs = epochs;
    auto result = export_finetune(cases, ratio, seed, job, out_dir);
    std::printf("exported %zu train + %zu validation examples to %s (seed %llu)\n",
                result.train.size(), result.validation.size(), out_dir.c_str(),
                static_cast<unsigned long long>(seed));
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& paired_dir,
               const std::string& json_out) {
    RunRecord record = RunRecord::load_dir(run_dir);
    std::string text = render_run_report(record);
    nlohmann::ordered_json json = run_report_json(record);

    if (!paired_dir.empty()) {
        RunRecord other = RunRecord::load_dir(paired_dir);
        text += render_paired_report(record, other);
        json["paired"] = paired_report_json(record, other);
    }

    auto reviews_path = fs::path(run_dir) / "reviews.jsonl";
    if (fs::exists(reviews_path)) {
        auto reviews = load_reviews(reviews_path);
        auto summary = aggregate_reviews(reviews, record.run_id);
        long long total = summary.correct_count + summary.incorrect_count;
        if (total > 0) {
            text += "justification reviews: " + std::to_string(summary.correct_count) +
                    " correct (" + summary.percent_correct + " %), " +
                    std::to_string(summary.incorrect_count) + " incorrect (" +
                    summary.percent_incorrect + " %)\n";
            json["reviews"] = {{"correct", summary.correct_count},
                               {"incorrect", summary.incorrect_count},
                               {"percent_correct", summary.percent_correct}};
        }
    }

    std::fputs(text.c_str(), stdout);
    if (!json_out.empty()) {
        write_file(json_out, json.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RAG experimentation harness for legal case decision-making"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "preprocess a corpus of Markdown documents");
    std::string in_manifest, in_rules, in_variant = "prep-ext", in_out;
    ingest->add_option("--manifest", in_manifest, "corpus manifest JSON")->required();
    ingest->add_option("--rules", in_rules, "removal rule file");
    ingest->add_option("--variant", in_variant, "prep-basic | prep-ext");
    ingest->add_option("--out", in_out, "output directory")->required();

    // chunk
    auto* chunk = app.add_subcommand("chunk", "split documents into chunks");
    std::string ck_manifest, ck_mode = "fixed", ck_out;
    size_t ck_size = 1024, ck_overlap = 0;
    chunk->add_option("--manifest", ck_manifest, "corpus manifest JSON")->required();
    chunk->add_option("--mode", ck_mode, "fixed | layout");
    chunk->add_option("--size", ck_size, "chunk size in tokens");
    chunk->add_option("--overlap", ck_overlap, "chunk overlap in tokens");
    chunk->add_option("--out", ck_out, "output chunks.jsonl")->required();

    // shared embedding flags (index, ask)
    std::string em_kind = "mock", em_model = "mock-trigram-256", em_endpoint,
                em_api_key_env, em_cache;
    size_t em_dim = 256;
    uint64_t em_seed = 1;
    auto add_embedding_flags = [&](CLI::App* cmd) {
        cmd->add_option("--embedding", em_kind, "mock | remote");
        cmd->add_option("--model", em_model, "embedding model id");
        cmd->add_option("--dim", em_dim, "mock embedding dimension");
        cmd->add_option("--embed-seed", em_seed, "mock embedding seed");
        cmd->add_option("--endpoint", em_endpoint, "remote embeddings endpoint");
        cmd->add_option("--api-key-env", em_api_key_env, "env var with the API token");
        cmd->add_option("--cache", em_cache, "vector cache directory");
    };

    // index
    auto* index = app.add_subcommand("index", "embed chunks and build the HNSW index");
    std::string ix_chunks, ix_out;
    HnswParams ix_params;
    index->add_option("--chunks", ix_chunks, "chunks.jsonl")->required();
    index->add_option("--out", ix_out, "output index file")->required();
    index->add_option("--M", ix_params.M, "max neighbors per node per layer");
    index->add_option("--ef-construction", ix_params.ef_construction,
                      "candidate list size at build");
    index->add_option("--ef-search", ix_params.ef_search, "default efSearch");
    index->add_option("--level-seed", ix_params.level_seed, "level assignment seed");
    add_embedding_flags(index);

    // ask
    auto* ask = app.add_subcommand("ask", "answer a single question");
    std::string ak_index, ak_chunks, ak_question, ak_template = "place-of-supply";
    std::string ak_templates_dir = "data/templates", ak_countries = "data/countries.tsv";
    std::string ak_llm = "scripted:script.jsonl", ak_llm_model = "scripted-mock";
    std::string ak_llm_key_env, ak_routing;
    int ak_top_k = 5, ak_ef = 500, ak_attempts = 3;
    bool ak_paper = false, ak_no_rag = false;
    ask->add_option("--index", ak_index, "index file");
    ask->add_option("--chunks", ak_chunks, "chunks.jsonl");
    ask->add_option("--question", ak_question, "the question text")->required();
    ask->add_option("--template", ak_template, "place-of-supply | general-analysis");
    ask->add_option("--templates-dir", ak_templates_dir, "template resource directory");
    ask->add_option("--countries", ak_countries, "country alias table");
    ask->add_option("--top-k", ak_top_k, "retrieved chunks");
    ask->add_option("--ef-search", ak_ef, "efSearch");
    ask->add_flag("--paper-mode", ak_paper, "clamp efSearch to [100, 1000]");
    ask->add_flag("--no-rag", ak_no_rag, "skip retrieval (no context line)");
    ask->add_option("--llm", ak_llm, "scripted:<path> | remote:<endpoint>");
    ask->add_option("--llm-model", ak_llm_model, "chat model id");
    ask->add_option("--llm-api-key-env", ak_llm_key_env, "env var with the API token");
    ask->add_option("--max-attempts", ak_attempts, "retry budget");
    ask->add_option("--routing", ak_routing, "scripted-mock routing key");
    add_embedding_flags(ask);

    // run
    auto* run = app.add_subcommand("run", "run one experiment configuration");
    std::string rn_config, rn_cases, rn_runs = "runs";
    run->add_option("--config", rn_config, "experiment config JSON")->required();
    run->add_option("--cases", rn_cases, "case dataset JSONL")->required();
    run->add_option("--runs-dir", rn_runs, "run persistence directory");

    // grid
    auto* grid = app.add_subcommand("grid", "run a grid of configurations");
    std::string gd_grid, gd_cases, gd_runs = "runs";
    grid->add_option("--grid", gd_grid, "JSON array of configs")->required();
    grid->add_option("--cases", gd_cases, "case dataset JSONL")->required();
    grid->add_option("--runs-dir", gd_runs, "run persistence directory");

    // mcnemar
    auto* mcnemar = app.add_subcommand("mcnemar", "paired comparison of two runs");
    std::string mc_a, mc_b;
    std::vector<long long> mc_cells;
    mcnemar->add_option("--run-a", mc_a, "first run directory");
    mcnemar->add_option("--run-b", mc_b, "second run directory");
    mcnemar->add_option("--cells", mc_cells, "direct cells: a b c d")->expected(4);

    // export-finetune
    auto* exp = app.add_subcommand("export-finetune",
                                   "export the fine-tuning dataset with an 80/20 split");
    std::string ex_cases, ex_out;
    double ex_ratio = 0.8, ex_lr = 1.0;
    uint64_t ex_seed = 1;
    int ex_batch = 1, ex_epochs = 3;
    exp->add_option("--cases", ex_cases, "case dataset JSONL")->required();
    exp->add_option("--ratio", ex_ratio, "train split ratio");
    exp->add_option("--seed", ex_seed, "shuffle seed");
    exp->add_option("--out", ex_out, "output directory")->required();
    exp->add_option("--batch-size", ex_batch, "job config: batch size");
    exp->add_option("--lr-multiplier", ex_lr, "job config: learning rate multiplier");
    exp->add_option("--epochs", ex_epochs, "job config: epochs");

    // report
    auto* report = app.add_subcommand("report", "render reports for persisted runs");
    std::string rp_run, rp_paired, rp_json;
    report->add_option("--run", rp_run, "run directory")->required();
    report->add_option("--paired", rp_paired, "second run directory for McNemar");
    report->add_option("--json", rp_json, "write machine-readable report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return cmd_ingest(in_manifest, in_rules, in_variant, in_out);
        if (chunk->parsed()) return cmd_chunk(ck_manifest, ck_mode, ck_size, ck_overlap, ck_out);
        if (index->parsed()) {
            auto em = embedding_config_from_flags(em_kind, em_model, em_dim, em_seed,
                                                  em_endpoint, em_api_key_env, em_cache);
            return cmd_index(ix_chunks, ix_out, em, ix_params);
        }
        if (ask->parsed()) {
            auto em = embedding_config_from_flags(em_kind, em_model, em_dim, em_seed,
                                                  em_endpoint, em_api_key_env, em_cache);
            auto llm = llm_from_flag(ak_llm, ak_llm_model, ak_llm_key_env, ak_attempts);
            return cmd_ask(ak_index, ak_chunks, ak_question, ak_template,
                           ak_templates_dir, ak_countries, ak_top_k, ak_ef, ak_paper,
                           ak_no_rag, em, std::move(llm), ak_routing);
        }
        if (run->parsed()) return cmd_run(rn_config, rn_cases, rn_runs);
        if (grid->parsed()) return cmd_grid(gd_grid, gd_cases, gd_runs);
        if (mcnemar->parsed()) return cmd_mcnemar(mc_a, mc_b, mc_cells);
        if (exp->parsed())
            return cmd_export_finetune(ex_cases, ex_ratio, ex_seed, ex_out, ex_batch,
                                       ex_lr, ex_epochs);
        if (report->parsed()) return cmd_report(rp_run, rp_paired, rp_json);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
