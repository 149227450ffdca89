#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lexrag/assistant.hpp"
#include "lexrag/corpus.hpp"
#include "lexrag/embedding.hpp"
#include "lexrag/evalkit.hpp"
#include "lexrag/util.hpp"
#include "lexrag/vecindex.hpp"

#include <json.hpp>

namespace lexrag {

enum class RagMode { None, Rag, MockedRag };
enum class ChunkingMode { Fixed, Layout };

std::string to_string(RagMode mode);
RagMode rag_mode_from_string(std::string_view s);
std::string to_string(ChunkingMode mode);
ChunkingMode chunking_mode_from_string(std::string_view s);

struct HnswConfig {
    int M = 16;
    int ef_construction = 200;
    uint64_t level_seed = 42;
};

struct LlmConfig {
    std::string kind = "scripted";  // scripted | remote
    std::string script;             // scripted: JSONL path
    std::string model_id = "scripted-mock";
    int max_attempts = 3;
    std::string endpoint;  // remote
    std::string api_key_env;
    std::optional<double> temperature;  // recorded; absent = backend default
};

struct EmbedConfig {
    std::string kind = "mock";  // mock | remote
    size_t dim = 256;
    uint64_t seed = 1;
    std::string cache_dir;
    std::string endpoint;
    std::string api_key_env;
};

struct ResourcePaths {
    std::string templates_dir = "data/templates";
    std::string countries = "data/countries.tsv";
    std::string corpus_manifest;  // build chunks+index from these ...
    std::string rules;
    std::string chunks;  // ... or load prebuilt artifacts
    std::string index;
};

// One experiment cell. Retrieval fields are ignored (and omitted from the
// serialized form) when rag_mode is none.
struct RagConfig {
    std::string config_id;
    PrepVariant preprocessing = PrepVariant::Ext;
    std::string embedding_model = "mock-trigram-256";
    size_t chunk_size = 1024;
    size_t chunk_overlap = 0;
    int top_k = 5;
    int ef_search = 500;
    ChunkingMode chunking_mode = ChunkingMode::Fixed;
    std::string template_id = std::string(kTemplatePlaceOfSupply);
    RagMode rag_mode = RagMode::Rag;
    bool paper_mode = false;            // clamp efSearch to [100, 1000]
    bool context_source_headers = true; // context joining deviation knob
    int case_concurrency = 1;
    HnswConfig hnsw;
    LlmConfig llm;
    EmbedConfig embedding;
    ResourcePaths paths;

    nlohmann::ordered_json to_json() const;
    static RagConfig from_json(const nlohmann::json& json);
    static RagConfig load(const std::filesystem::path& path);

    // resolves relative resource paths against a base directory
    void rebase_paths(const std::filesystem::path& base);

    // deterministic serialization used for run ids
    std::string canonical() const;
};

// Everything a run needs, loaded and validated up front (misconfiguration
// surfaces here, before any model call).
struct RunEnv {
    TemplateSet templates;
    CountryTable countries;
    LlmBackend llm = LlmBackend::scripted({});
    std::optional<EmbeddingBackend> embedder;
    std::vector<Chunk> chunks;
    std::optional<VectorIndex> index;
};

// Chunk artifacts (JSONL) exchanged between the chunk/index/ask steps.
std::vector<Chunk> load_chunks_jsonl(const std::filesystem::path& path);
void save_chunks_jsonl(std::span<const Chunk> chunks,
                       const std::filesystem::path& path);

// Builds the environment for one config: loads templates, the country
// table and the LLM backend; for rag mode also loads prebuilt
// chunks+index or builds them from the corpus manifest.
RunEnv make_env(const RagConfig& config);

struct CaseRunResult {
    std::string case_id;
    bool excluded = false;        // mocked-RAG case without gold chunks
    std::string exclusion_reason;
    ChatTranscript transcript;
    std::string raw_response;
    int attempts = 0;
    std::string ask_error;
    ParseStatus parse_status = ParseStatus::NoJson;
    std::string parse_message;
    AssistantAnswer answer;
    CaseVerdict verdict;
};

struct RunRecord {
    std::string run_id;
    RagConfig config;
    std::string dataset_id;
    std::string started;   // ISO 8601 UTC
    std::string finished;
    std::vector<CaseRunResult> results;
    long long correct = 0;
    long long total = 0;  // included cases

    std::string percent() const { return format_percent(correct, total); }
    std::vector<CaseVerdict> included_verdicts() const;

    nlohmann::ordered_json to_json() const;
    static RunRecord from_json(const nlohmann::json& json);
    void save(const std::filesystem::path& runs_dir) const;  // runs_dir/<run_id>/record.json
    static RunRecord load_dir(const std::filesystem::path& run_dir);
};

std::string dataset_id_of(std::span<const CaseRecord> cases);

// Runs one configuration over the dataset: per case retrieve (per
// rag_mode), render, ask, parse, score. Per-case failures are recorded;
// the run always completes.
RunRecord run_experiment(const RagConfig& config, std::span<const CaseRecord> cases,
                         RunEnv& env);

using EnvFactory = std::function<RunEnv(const RagConfig&)>;

struct GridRow {
    std::string config_id;
    std::string run_id;
    long long correct = 0;
    long long total = 0;
    double fraction = 0.0;
    std::string percent;
    bool best = false;
};

struct GridResult {
    std::string dataset_id;
    std::vector<GridRow> rows;  // sorted by accuracy descending
};

// One run per config, sequential cells; rows sorted by accuracy
// descending (ties by config_id), best rows flagged. Duplicate
// config_ids are an error. Records are saved under runs_dir when given.
GridResult grid_search(std::span<const RagConfig> grid, std::span<const CaseRecord> cases,
                       const EnvFactory& env_factory,
                       const std::filesystem::path& runs_dir = {});

struct FineTuneJobConfig {
    int batch_size = 1;
    double learning_rate_multiplier = 1.0;
    int epochs = 3;
};

struct FineTuneExport {
    std::vector<ChatTranscript> train;
    std::vector<ChatTranscript> validation;
    double split_ratio = 0.8;
    uint64_t seed = 0;
};

// Seeded shuffle, floor split; one conversation per line with messages
// [system(""), user(question), assistant(gold answer)]. Writes
// train.jsonl, validation.jsonl and a manifest.json carrying the job
// config for provenance (training itself runs externally).
FineTuneExport export_finetune(std::span<const CaseRecord> cases, double split_ratio,
                               uint64_t seed, const FineTuneJobConfig& job,
                               const std::filesystem::path& out_dir);

// Deterministic human-readable reports (no timestamps, golden-testable).
std::string render_run_report(const RunRecord& record);
std::string render_grid_report(const GridResult& grid);
// Contingency + McNemar block for paired runs; different case sets
// surface as a pairing error.
std::string render_paired_report(const RunRecord& a, const RunRecord& b);

nlohmann::ordered_json run_report_json(const RunRecord& record);
nlohmann::ordered_json grid_report_json(const GridResult& grid);
nlohmann::ordered_json paired_report_json(const RunRecord& a, const RunRecord& b);

}  // namespace lexrag
