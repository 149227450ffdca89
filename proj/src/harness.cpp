#include "lexrag/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <stdexcept>

#include <omp.h>

namespace lexrag {

namespace {

std::string iso_utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string parse_status_to_string(ParseStatus status) {
    switch (status) {
        case ParseStatus::Ok: return "ok";
        case ParseStatus::NoJson: return "no_json";
        case ParseStatus::SchemaError: return "schema_error";
    }
    return "no_json";
}

ParseStatus parse_status_from_string(std::string_view s) {
    if (s == "ok") return ParseStatus::Ok;
    if (s == "schema_error") return ParseStatus::SchemaError;
    return ParseStatus::NoJson;
}

}  // namespace

std::string to_string(RagMode mode) {
    switch (mode) {
        case RagMode::None: return "none";
        case RagMode::Rag: return "rag";
        case RagMode::MockedRag: return "mocked-rag";
    }
    return "none";
}

RagMode rag_mode_from_string(std::string_view s) {
    if (s == "none") return RagMode::None;
    if (s == "rag") return RagMode::Rag;
    if (s == "mocked-rag") return RagMode::MockedRag;
    throw std::invalid_argument("unknown rag_mode: " + std::string(s));
}

std::string to_string(ChunkingMode mode) {
    return mode == ChunkingMode::Fixed ? "fixed" : "layout";
}

ChunkingMode chunking_mode_from_string(std::string_view s) {
    if (s == "fixed") return ChunkingMode::Fixed;
    if (s == "layout") return ChunkingMode::Layout;
    throw std::invalid_argument("unknown chunking_mode: " + std::string(s));
}

nlohmann::ordered_json RagConfig::to_json() const {
    nlohmann::ordered_json json;
    json["config_id"] = config_id;
    json["template_id"] = template_id;
    json["rag_mode"] = lexrag::to_string(rag_mode);
    json["case_concurrency"] = case_concurrency;

    // retrieval fields are recorded as absent when rag_mode = none
    if (rag_mode == RagMode::Rag) {
        json["preprocessing"] = lexrag::to_string(preprocessing);
        json["embedding_model"] = embedding_model;
        json["chunking_mode"] = lexrag::to_string(chunking_mode);
        json["chunk_size"] = chunk_size;
        json["chunk_overlap"] = chunk_overlap;
        json["top_k"] = top_k;
        json["ef_search"] = ef_search;
        json["paper_mode"] = paper_mode;
        json["context_source_headers"] = context_source_headers;
        json["hnsw"] = {{"M", hnsw.M},
                        {"ef_construction", hnsw.ef_construction},
                        {"level_seed", hnsw.level_seed}};
        json["embedding"] = {{"kind", embedding.kind},
                             {"dim", embedding.dim},
                             {"seed", embedding.seed},
                             {"cache_dir", embedding.cache_dir},
                             {"endpoint", embedding.endpoint},
                             {"api_key_env", embedding.api_key_env}};
    } else if (rag_mode == RagMode::MockedRag) {
        json["context_source_headers"] = context_source_headers;
    }

    nlohmann::ordered_json llm_json;
    llm_json["kind"] = llm.kind;
    llm_json["model_id"] = llm.model_id;
    llm_json["max_attempts"] = llm.max_attempts;
    if (llm.kind == "scripted") {
        llm_json["script"] = llm.script;
    } else {
        llm_json["endpoint"] = llm.endpoint;
        llm_json["api_key_env"] = llm.api_key_env;
    }
    if (llm.temperature) llm_json["temperature"] = *llm.temperature;
    json["llm"] = llm_json;

    nlohmann::ordered_json paths_json;
    paths_json["templates_dir"] = paths.templates_dir;
    paths_json["countries"] = paths.countries;
    if (!paths.corpus_manifest.empty()) paths_json["corpus_manifest"] = paths.corpus_manifest;
    if (!paths.rules.empty()) paths_json["rules"] = paths.rules;
    if (!paths.chunks.empty()) paths_json["chunks"] = paths.chunks;
    if (!paths.index.empty()) paths_json["index"] = paths.index;
    json["paths"] = paths_json;
    return json;
}

RagConfig RagConfig::from_json(const nlohmann::json& json) {
    RagConfig config;
    config.config_id = json.at("config_id").get<std::string>();
    config.template_id = json.value("template_id", config.template_id);
    config.rag_mode = rag_mode_from_string(json.value("rag_mode", "rag"));
    config.case_concurrency = json.value("case_concurrency", 1);
    config.preprocessing =
        prep_variant_from_string(json.value("preprocessing", "prep-ext"));
    config.embedding_model = json.value("embedding_model", config.embedding_model);
    config.chunking_mode =
        chunking_mode_from_string(json.value("chunking_mode", "fixed"));
    config.chunk_size = json.value("chunk_size", config.chunk_size);
    config.chunk_overlap = json.value("chunk_overlap", config.chunk_overlap);
    config.top_k = json.value("top_k", config.top_k);
    config.ef_search = json.value("ef_search", config.ef_search);
    config.paper_mode = json.value("paper_mode", false);
    config.context_source_headers = json.value("context_source_headers", true);
    if (json.contains("hnsw")) {
        const auto& h = json["hnsw"];
        config.hnsw.M = h.value("M", config.hnsw.M);
        config.hnsw.ef_construction = h.value("ef_construction", config.hnsw.ef_construction);
        config.hnsw.level_seed = h.value("level_seed", config.hnsw.level_seed);
    }
    if (json.contains("llm")) {
        const auto& l = json["llm"];
        config.llm.kind = l.value("kind", "scripted");
        config.llm.script = l.value("script", "");
        config.llm.model_id = l.value("model_id", "scripted-mock");
        config.llm.max_attempts = l.value("max_attempts", 3);
        config.llm.endpoint = l.value("endpoint", "");
        config.llm.api_key_env = l.value("api_key_env", "");
        if (l.contains("temperature")) config.llm.temperature = l["temperature"].get<double>();
    }
    if (json.contains("embedding")) {
        const auto& e = json["embedding"];
        config.embedding.kind = e.value("kind", "mock");
        config.embedding.dim = e.value("dim", config.embedding.dim);
        config.embedding.seed = e.value("seed", config.embedding.seed);
        config.embedding.cache_dir = e.value("cache_dir", "");
        config.embedding.endpoint = e.value("endpoint", "");
        config.embedding.api_key_env = e.value("api_key_env", "");
    }
    if (json.contains("paths")) {
        const auto& p = json["paths"];
        config.paths.templates_dir = p.value("templates_dir", config.paths.templates_dir);
        config.paths.countries = p.value("countries", config.paths.countries);
        config.paths.corpus_manifest = p.value("corpus_manifest", "");
        config.paths.rules = p.value("rules", "");
        config.paths.chunks = p.value("chunks", "");
        config.paths.index = p.value("index", "");
    }
    if (config.chunk_overlap >= config.chunk_size) {
        throw std::invalid_argument("config " + config.config_id +
                                    ": chunk_overlap must be < chunk_size");
    }
    return config;
}

RagConfig RagConfig::load(const std::filesystem::path& path) {
    auto json = nlohmann::json::parse(read_file(path));
    RagConfig config = from_json(json);
    config.rebase_paths(path.parent_path());
    return config;
}

void RagConfig::rebase_paths(const std::filesystem::path& base) {
    auto rebase = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) {
            p = (base / p).string();
        }
    };
    rebase(paths.templates_dir);
    rebase(paths.countries);
    rebase(paths.corpus_manifest);
    rebase(paths.rules);
    rebase(paths.chunks);
    rebase(paths.index);
    rebase(llm.script);
    rebase(embedding.cache_dir);
}

std::string RagConfig::canonical() const {
    return to_json().dump();
}

std::string dataset_id_of(std::span<const CaseRecord> cases) {
    std::string material;
    for (const auto& record : cases) {
        material += record.case_id;
        material.push_back('\0');
        material += record.question;
        material.push_back('\0');
        material += record.gold_country;
        material.push_back('\0');
        for (const auto& chunk : record.gold_chunks) {
            material += chunk;
            material.push_back('\0');
        }
    }
    return hash_hex128(material);
}

// JSONL chunk artifacts written by the `chunk` subcommand.
std::vector<Chunk> load_chunks_jsonl(const std::filesystem::path& path) {
    std::vector<Chunk> chunks;
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto json = nlohmann::json::parse(line, nullptr, false);
        if (json.is_discarded()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid JSON chunk line");
        }
        Chunk chunk;
        chunk.chunk_id = json.at("chunk_id").get<std::string>();
        chunk.doc_id = json.at("doc_id").get<std::string>();
        chunk.ordinal = json.at("ordinal").get<int>();
        chunk.text = json.at("text").get<std::string>();
        chunk.token_start = json.value("token_start", 0u);
        chunk.token_len = json.value("token_len", 0u);
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

void save_chunks_jsonl(std::span<const Chunk> chunks,
                       const std::filesystem::path& path) {
    std::string out;
    for (const auto& chunk : chunks) {
        nlohmann::ordered_json json;
        json["chunk_id"] = chunk.chunk_id;
        json["doc_id"] = chunk.doc_id;
        json["ordinal"] = chunk.ordinal;
        json["text"] = chunk.text;
        json["token_start"] = chunk.token_start;
        json["token_len"] = chunk.token_len;
        out += json.dump();
        out.push_back('\n');
    }
    write_file(path, out);
}

RunEnv make_env(const RagConfig& config) {
    RunEnv env;
    env.templates = TemplateSet::load_dir(config.paths.templates_dir);
    env.countries = CountryTable::load(config.paths.countries);
    env.templates.get(config.template_id);  // unknown template fails here

    if (config.llm.kind == "scripted") {
        if (config.llm.script.empty()) {
            throw std::runtime_error("config " + config.config_id +
                                     ": scripted llm backend needs a script path");
        }
        env.llm = LlmBackend::scripted_from_file(config.llm.script, config.llm.model_id);
    } else if (config.llm.kind == "remote") {
        LlmBackend::RemoteConfig remote;
        remote.endpoint = config.llm.endpoint;
        remote.api_key_env = config.llm.api_key_env;
        DecodingConfig decoding;
        decoding.temperature = config.llm.temperature;
        env.llm = LlmBackend::remote(remote, config.llm.model_id, decoding);
    } else {
        throw std::runtime_error("config " + config.config_id + ": unknown llm kind '" +
                                 config.llm.kind + "'");
    }
    env.llm.set_max_attempts(config.llm.max_attempts);

    if (config.rag_mode != RagMode::Rag) return env;

    EmbeddingBackendConfig embed_config;
    if (config.embedding.kind == "mock") {
        embed_config.kind = EmbeddingBackendConfig::Kind::Mock;
    } else if (config.embedding.kind == "remote") {
        embed_config.kind = EmbeddingBackendConfig::Kind::Remote;
    } else {
        throw std::runtime_error("config " + config.config_id +
                                 ": unknown embedding kind '" + config.embedding.kind + "'");
    }
    embed_config.model_id = config.embedding_model;
    embed_config.mock_dim = config.embedding.dim;
    embed_config.mock_seed = config.embedding.seed;
    embed_config.endpoint = config.embedding.endpoint;
    embed_config.api_key_env = config.embedding.api_key_env;
    embed_config.cache_dir = config.embedding.cache_dir;
    env.embedder.emplace(std::move(embed_config));

    if (!config.paths.chunks.empty() && !config.paths.index.empty()) {
        env.chunks = load_chunks_jsonl(config.paths.chunks);
        env.index = VectorIndex::load(config.paths.index);
        return env;
    }

    if (config.paths.corpus_manifest.empty()) {
        throw std::runtime_error("config " + config.config_id +
                                 ": rag mode needs either prebuilt chunks+index paths "
                                 "or a corpus_manifest");
    }

    auto documents = load_corpus(config.paths.corpus_manifest);
    RuleSet rules;
    if (!config.paths.rules.empty()) rules = RuleSet::load(config.paths.rules);
    for (auto& doc : documents) {
        doc = preprocess(doc, config.preprocessing, rules);
    }
    for (const auto& doc : documents) {
        auto chunks = config.chunking_mode == ChunkingMode::Fixed
                          ? chunk_fixed(doc, config.chunk_size, config.chunk_overlap)
                          : chunk_layout(doc);
        env.chunks.insert(env.chunks.end(), chunks.begin(), chunks.end());
    }
    if (env.chunks.empty()) {
        throw std::runtime_error("config " + config.config_id +
                                 ": corpus produced no chunks");
    }

    std::vector<std::string> texts;
    texts.reserve(env.chunks.size());
    for (const auto& chunk : env.chunks) texts.push_back(chunk.text);
    auto vectors = env.embedder->embed_batch(texts);

    std::vector<ChunkVector> items;
    items.reserve(env.chunks.size());
    for (size_t i = 0; i < env.chunks.size(); ++i) {
        items.push_back({env.chunks[i].chunk_id, std::move(vectors[i].values)});
    }
    HnswParams params;
    params.M = config.hnsw.M;
    params.ef_construction = config.hnsw.ef_construction;
    params.ef_search = config.ef_search;
    params.level_seed = config.hnsw.level_seed;
    env.index = VectorIndex::build(std::move(items), params);
    return env;
}

namespace {

CaseRunResult run_one_case(const RagConfig& config, const CaseRecord& record,
                           RunEnv& env, const PromptTemplate& tmpl, int ef_search) {
    CaseRunResult result;
    result.case_id = record.case_id;
    result.verdict.case_id = record.case_id;

    std::vector<Chunk> contexts;
    if (config.rag_mode == RagMode::Rag) {
        auto query_vec = env.embedder->embed(record.question);
        auto scored = env.index->search(query_vec.values, config.top_k, ef_search);
        std::map<std::string, const Chunk*> by_id;
        for (const auto& chunk : env.chunks) by_id[chunk.chunk_id] = &chunk;
        for (const auto& hit : scored) {
            auto it = by_id.find(hit.chunk_id);
            if (it == by_id.end()) {
                throw std::runtime_error("index returned unknown chunk_id: " + hit.chunk_id);
            }
            contexts.push_back(*it->second);
        }
    } else if (config.rag_mode == RagMode::MockedRag) {
        if (record.gold_chunks.empty()) {
            result.excluded = true;
            result.exclusion_reason = "mocked-RAG oracle unavailable: no gold chunks";
            return result;
        }
        contexts = mocked_rag_contexts(record);
    }

    for (const auto& chunk : contexts) {
        result.answer.retrieval_trace.push_back(chunk.chunk_id);
    }

    ContextStyle style;
    style.source_headers = config.context_source_headers;
    result.transcript = render_prompt(tmpl, contexts, record.question, style);

    AskResult ask = env.llm.ask(result.transcript, record.case_id);
    result.attempts = ask.attempts;
    result.ask_error = ask.error;
    result.raw_response = ask.text;
    result.answer.raw_response = ask.text;

    if (!ask.ok) {
        result.verdict.format_failure = true;
        result.verdict.predicted_country = std::string(kUnresolvedCountry);
    } else {
        ParseOutcome parsed = parse_answer(ask.text);
        result.parse_status = parsed.status;
        result.parse_message = parsed.message;
        if (!parsed.ok()) {
            result.verdict.format_failure = true;
            result.verdict.predicted_country = std::string(kUnresolvedCountry);
        } else {
            result.answer.justification = parsed.answer.justification;
            result.answer.country_raw = parsed.answer.country_raw;
            result.answer.country = env.countries.normalize(parsed.answer.country_raw);
            result.verdict.predicted_country = result.answer.country;
            result.verdict.correct_country =
                result.answer.country != kUnresolvedCountry &&
                result.answer.country == record.gold_country;
        }
    }

    if (config.rag_mode != RagMode::None && !record.gold_chunks.empty()) {
        auto metrics = retrieval_hit_metrics(contexts, record.gold_chunks);
        result.verdict.retrieval_hits = metrics.hits;
        result.verdict.retrieval_gold_total = metrics.gold_total;
    }
    return result;
}

}  // namespace

RunRecord run_experiment(const RagConfig& config, std::span<const CaseRecord> cases,
                         RunEnv& env) {
    if (cases.empty()) {
        throw std::invalid_argument("run_experiment: empty dataset");
    }
    const PromptTemplate& tmpl = env.templates.get(config.template_id);
    if (config.rag_mode == RagMode::Rag) {
        if (!env.embedder || !env.index || env.chunks.empty()) {
            throw std::runtime_error("run_experiment: rag mode needs embedder, index "
                                     "and chunks in the environment");
        }
    }

    std::string ef_warning;
    int ef_search = clamp_ef_search(config.ef_search, config.paper_mode, &ef_warning);
    if (!ef_warning.empty()) {
        std::fprintf(stderr, "warning: %s\n", ef_warning.c_str());
    }

    RunRecord record;
    record.config = config;
    record.dataset_id = dataset_id_of(cases);
    std::string id_material = config.canonical();
    id_material.push_back('\0');
    id_material += record.dataset_id;
    record.run_id = hash_hex128(id_material);
    record.started = iso_utc_now();

    record.results.resize(cases.size());
    const int threads = std::max(1, config.case_concurrency);
    // results land in per-case slots, so evaluation order never depends
    // on completion order
    #pragma omp parallel for schedule(static) num_threads(threads)
    for (long i = 0; i < static_cast<long>(cases.size()); ++i) {
        const auto& record_case = cases[static_cast<size_t>(i)];
        CaseRunResult result;
        try {
            result = run_one_case(config, record_case, env, tmpl, ef_search);
        } catch (const std::exception& e) {
            // a per-case failure is recorded, the run completes
            result = CaseRunResult{};
            result.case_id = record_case.case_id;
            result.verdict.case_id = record_case.case_id;
            result.verdict.format_failure = true;
            result.verdict.predicted_country = std::string(kUnresolvedCountry);
            result.ask_error = std::string("case failed: ") + e.what();
        }
        record.results[static_cast<size_t>(i)] = std::move(result);
    }

    for (const auto& result : record.results) {
        if (result.excluded) continue;
        ++record.total;
        if (result.verdict.correct_country) ++record.correct;
    }
    record.finished = iso_utc_now();
    return record;
}

std::vector<CaseVerdict> RunRecord::included_verdicts() const {
    std::vector<CaseVerdict> verdicts;
    for (const auto& result : results) {
        if (!result.excluded) verdicts.push_back(result.verdict);
    }
    return verdicts;
}

nlohmann::ordered_json RunRecord::to_json() const {
    nlohmann::ordered_json json;
    json["run_id"] = run_id;
    json["config"] = config.to_json();
    json["dataset_id"] = dataset_id;
    json["started"] = started;
    json["finished"] = finished;
    json["correct"] = correct;
    json["total"] = total;
    json["cases"] = nlohmann::ordered_json::array();
    for (const auto& result : results) {
        nlohmann::ordered_json c;
        c["case_id"] = result.case_id;
        c["excluded"] = result.excluded;
        if (result.excluded) {
            c["exclusion_reason"] = result.exclusion_reason;
            json["cases"].push_back(c);
            continue;
        }
        c["transcript"] = nlohmann::ordered_json::array();
        for (const auto& msg : result.transcript) {
            c["transcript"].push_back({{"role", msg.role}, {"content", msg.content}});
        }
        c["raw_response"] = result.raw_response;
        c["attempts"] = result.attempts;
        c["ask_error"] = result.ask_error;
        c["parse_status"] = parse_status_to_string(result.parse_status);
        c["parse_message"] = result.parse_message;
        c["justification"] = result.answer.justification;
        c["country_raw"] = result.answer.country_raw;
        c["country"] = result.answer.country;
        c["retrieval_trace"] = result.answer.retrieval_trace;
        c["verdict"] = {{"predicted_country", result.verdict.predicted_country},
                        {"correct_country", result.verdict.correct_country},
                        {"format_failure", result.verdict.format_failure},
                        {"retrieval_hits", result.verdict.retrieval_hits},
                        {"retrieval_gold_total", result.verdict.retrieval_gold_total}};
        json["cases"].push_back(c);
    }
    return json;
}

RunRecord RunRecord::from_json(const nlohmann::json& json) {
    RunRecord record;
    record.run_id = json.at("run_id").get<std::string>();
    record.config = RagConfig::from_json(json.at("config"));
    record.dataset_id = json.at("dataset_id").get<std::string>();
    record.started = json.value("started", "");
    record.finished = json.value("finished", "");
    record.correct = json.at("correct").get<long long>();
    record.total = json.at("total").get<long long>();
    for (const auto& c : json.at("cases")) {
        CaseRunResult result;
        result.case_id = c.at("case_id").get<std::string>();
        result.excluded = c.value("excluded", false);
        result.verdict.case_id = result.case_id;
        if (result.excluded) {
            result.exclusion_reason = c.value("exclusion_reason", "");
            record.results.push_back(std::move(result));
            continue;
        }
        for (const auto& m : c.at("transcript")) {
            result.transcript.push_back(
                {m.at("role").get<std::string>(), m.at("content").get<std::string>()});
        }
        result.raw_response = c.value("raw_response", "");
        result.attempts = c.value("attempts", 0);
        result.ask_error = c.value("ask_error", "");
        result.parse_status = parse_status_from_string(c.value("parse_status", "no_json"));
        result.parse_message = c.value("parse_message", "");
        result.answer.justification = c.value("justification", "");
        result.answer.country_raw = c.value("country_raw", "");
        result.answer.country = c.value("country", "");
        result.answer.raw_response = result.raw_response;
        if (c.contains("retrieval_trace")) {
            result.answer.retrieval_trace =
                c["retrieval_trace"].get<std::vector<std::string>>();
        }
        const auto& v = c.at("verdict");
        result.verdict.predicted_country = v.value("predicted_country", "");
        result.verdict.correct_country = v.value("correct_country", false);
        result.verdict.format_failure = v.value("format_failure", false);
        result.verdict.retrieval_hits = v.value("retrieval_hits", -1);
        result.verdict.retrieval_gold_total = v.value("retrieval_gold_total", -1);
        record.results.push_back(std::move(result));
    }
    return record;
}

void RunRecord::save(const std::filesystem::path& runs_dir) const {
    auto dir = runs_dir / run_id;
    std::filesystem::create_directories(dir);
    write_file(dir / "record.json", to_json().dump(2) + "\n");
}

RunRecord RunRecord::load_dir(const std::filesystem::path& run_dir) {
    auto json = nlohmann::json::parse(read_file(run_dir / "record.json"));
    return from_json(json);
}

GridResult grid_search(std::span<const RagConfig> grid, std::span<const CaseRecord> cases,
                       const EnvFactory& env_factory,
                       const std::filesystem::path& runs_dir) {
    if (grid.empty()) {
        throw std::invalid_argument("grid_search: need at least one config");
    }
    for (size_t i = 0; i < grid.size(); ++i) {
        for (size_t j = i + 1; j < grid.size(); ++j) {
            if (grid[i].config_id == grid[j].config_id) {
                throw std::invalid_argument("duplicate config_id in grid: " +
                                            grid[i].config_id);
            }
        }
    }

    GridResult result;
    result.dataset_id = dataset_id_of(cases);
    for (const auto& config : grid) {
        RunEnv env = env_factory(config);
        RunRecord record = run_experiment(config, cases, env);
        if (!runs_dir.empty()) record.save(runs_dir);
        GridRow row;
        row.config_id = config.config_id;
        row.run_id = record.run_id;
        row.correct = record.correct;
        row.total = record.total;
        row.fraction = record.total == 0
                           ? 0.0
                           : static_cast<double>(record.correct) /
                                 static_cast<double>(record.total);
        row.percent = record.percent();
        result.rows.push_back(std::move(row));
    }

    std::sort(result.rows.begin(), result.rows.end(),
              [](const GridRow& a, const GridRow& b) {
                  if (a.fraction != b.fraction) return a.fraction > b.fraction;
                  return a.config_id < b.config_id;
              });
    if (!result.rows.empty()) {
        double best = result.rows.front().fraction;
        for (auto& row : result.rows) row.best = row.fraction == best;
    }
    return result;
}

FineTuneExport export_finetune(std::span<const CaseRecord> cases, double split_ratio,
                               uint64_t seed, const FineTuneJobConfig& job,
                               const std::filesystem::path& out_dir) {
    if (cases.empty()) {
        throw std::invalid_argument("export_finetune: empty case set");
    }
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
        throw std::invalid_argument("export_finetune: split_ratio must be in (0, 1)");
    }
    std::string missing;
    for (const auto& record : cases) {
        if (trim(record.gold_justification).empty()) {
            if (!missing.empty()) missing += ", ";
            missing += record.case_id;
        }
    }
    if (!missing.empty()) {
        throw std::runtime_error("export_finetune: cases lack a gold answer: " + missing);
    }

    std::vector<size_t> order(cases.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, seed);

    auto to_transcript = [](const CaseRecord& record) {
        ChatTranscript transcript;
        transcript.push_back({"system", ""});
        transcript.push_back({"user", record.question});
        transcript.push_back({"assistant", record.gold_justification});
        return transcript;
    };

    FineTuneExport result;
    result.split_ratio = split_ratio;
    result.seed = seed;
    size_t train_count = static_cast<size_t>(
        floor_split(split_ratio, static_cast<long long>(cases.size())));
    for (size_t i = 0; i < order.size(); ++i) {
        auto transcript = to_transcript(cases[order[i]]);
        if (i < train_count) result.train.push_back(std::move(transcript));
        else result.validation.push_back(std::move(transcript));
    }

    auto serialize = [](std::span<const ChatTranscript> transcripts) {
        std::string out;
        for (const auto& transcript : transcripts) {
            nlohmann::ordered_json line;
            line["messages"] = nlohmann::ordered_json::array();
            for (const auto& msg : transcript) {
                line["messages"].push_back({{"role", msg.role}, {"content", msg.content}});
            }
            out += line.dump();
            out.push_back('\n');
        }
        return out;
    };
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "train.jsonl", serialize(result.train));
    write_file(out_dir / "validation.jsonl", serialize(result.validation));

    nlohmann::ordered_json manifest;
    manifest["batch_size"] = job.batch_size;
    manifest["learning_rate_multiplier"] = job.learning_rate_multiplier;
    manifest["epochs"] = job.epochs;
    manifest["split_ratio"] = split_ratio;
    manifest["seed"] = seed;
    manifest["train_count"] = result.train.size();
    manifest["validation_count"] = result.validation.size();
    manifest["dataset_id"] = dataset_id_of(cases);
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

std::string render_run_report(const RunRecord& record) {
    std::string out;
    out += "run: " + record.run_id + "\n";
    out += "config: " + record.config.config_id + "\n";
    out += "dataset: " + record.dataset_id + "\n";
    out += "rag_mode: " + to_string(record.config.rag_mode) + "\n";
    out += "accuracy: " + std::to_string(record.correct) + "/" +
           std::to_string(record.total) + " (" + record.percent() + " %)\n";

    long long excluded = 0;
    for (const auto& result : record.results) {
        if (result.excluded) ++excluded;
    }
    if (excluded > 0) {
        out += "excluded: " + std::to_string(excluded) + "\n";
    }

    out += "cases:\n";
    for (const auto& result : record.results) {
        out += "  " + result.case_id;
        if (result.excluded) {
            out += "  excluded (" + result.exclusion_reason + ")\n";
            continue;
        }
        out += "  predicted=" + result.verdict.predicted_country;
        out += result.verdict.correct_country ? "  correct" : "  incorrect";
        if (result.verdict.format_failure) out += "  format-failure";
        if (result.verdict.retrieval_gold_total >= 0) {
            out += "  retrieval=" + std::to_string(result.verdict.retrieval_hits) + "/" +
                   std::to_string(result.verdict.retrieval_gold_total);
        }
        out += "\n";
    }
    return out;
}

std::string render_grid_report(const GridResult& grid) {
    std::string out;
    out += "grid results (dataset " + grid.dataset_id + ")\n";
    out += "  config                           accuracy     correct\n";
    for (const auto& row : grid.rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s %-32s %8s %%   %lld/%lld\n",
                      row.best ? "*" : " ", row.config_id.c_str(), row.percent.c_str(),
                      row.correct, row.total);
        out += line;
    }
    return out;
}

std::string render_paired_report(const RunRecord& a, const RunRecord& b) {
    auto verdicts_a = a.included_verdicts();
    auto verdicts_b = b.included_verdicts();
    ContingencyTable2x2 table = build_contingency(verdicts_a, verdicts_b);
    McNemarResult mcnemar = mcnemar_yates(table);

    std::string out;
    out += "paired comparison\n";
    out += "  A: " + a.run_id + " (" + a.config.config_id + ")\n";
    out += "  B: " + b.run_id + " (" + b.config.config_id + ")\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "contingency: a=%lld b=%lld c=%lld d=%lld\n"
                  "marginals: A correct %lld/%lld, B correct %lld/%lld\n",
                  table.a, table.b, table.c, table.d, table.a + table.b,
                  table.a + table.b + table.c + table.d, table.a + table.c,
                  table.a + table.b + table.c + table.d);
    out += buf;
    std::snprintf(buf, sizeof(buf), "mcnemar: statistic = %.4f, p = %.3f\n",
                  mcnemar.statistic, mcnemar.p_value);
    out += buf;
    return out;
}

nlohmann::ordered_json run_report_json(const RunRecord& record) {
    nlohmann::ordered_json json;
    json["run_id"] = record.run_id;
    json["config_id"] = record.config.config_id;
    json["dataset_id"] = record.dataset_id;
    json["correct"] = record.correct;
    json["total"] = record.total;
    json["percent"] = record.percent();
    json["verdicts"] = nlohmann::ordered_json::array();
    for (const auto& result : record.results) {
        nlohmann::ordered_json v;
        v["case_id"] = result.case_id;
        v["excluded"] = result.excluded;
        if (!result.excluded) {
            v["predicted_country"] = result.verdict.predicted_country;
            v["correct_country"] = result.verdict.correct_country;
            v["format_failure"] = result.verdict.format_failure;
            v["retrieval_hits"] = result.verdict.retrieval_hits;
            v["retrieval_gold_total"] = result.verdict.retrieval_gold_total;
        }
        json["verdicts"].push_back(v);
    }
    return json;
}

nlohmann::ordered_json grid_report_json(const GridResult& grid) {
    nlohmann::ordered_json json;
    json["dataset_id"] = grid.dataset_id;
    json["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : grid.rows) {
        json["rows"].push_back({{"config_id", row.config_id},
                                {"run_id", row.run_id},
                                {"correct", row.correct},
                                {"total", row.total},
                                {"percent", row.percent},
                                {"best", row.best}});
    }
    return json;
}

nlohmann::ordered_json paired_report_json(const RunRecord& a, const RunRecord& b) {
    ContingencyTable2x2 table = build_contingency(a.included_verdicts(),
                                                  b.included_verdicts());
    McNemarResult mcnemar = mcnemar_yates(table);
    nlohmann::ordered_json json;
    json["run_a"] = a.run_id;
    json["run_b"] = b.run_id;
    json["contingency"] = {{"a", table.a}, {"b", table.b}, {"c", table.c}, {"d", table.d}};
    json["mcnemar"] = {{"statistic", mcnemar.statistic}, {"p_value", mcnemar.p_value}};
    return json;
}

}  // namespace lexrag
