#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lexrag/corpus.hpp"

namespace lexrag {

inline constexpr std::string_view kUnresolvedCountry = "UNRESOLVED";
inline constexpr std::string_view kTemplatePlaceOfSupply = "place-of-supply";
inline constexpr std::string_view kTemplateGeneralAnalysis = "general-analysis";

// Prompt templates live as UTF-8 resource files shaped like
//   system:
//   <instruction lines ...>
//
//   context: {{contexts}}
//   user: {{question}}
//   assistant:
// The context line is optional and is dropped entirely (not left empty)
// when no contexts are supplied.
struct PromptTemplate {
    std::string template_id;
    std::vector<std::string> system_lines;  // between "system:" and "user:"
    int context_line = -1;                  // index into system_lines, -1 if absent
    std::string user_line;                  // contains {{question}}

    static PromptTemplate load_file(const std::filesystem::path& path,
                                    std::string_view template_id);
};

// Loads the known template ids from a directory of <id>.txt files.
class TemplateSet {
public:
    static TemplateSet load_dir(const std::filesystem::path& dir);

    const PromptTemplate& get(std::string_view template_id) const;

private:
    std::vector<PromptTemplate> templates_;
};

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

using ChatTranscript = std::vector<ChatMessage>;

// How retrieved chunks are joined into the context slot: blank-line
// separated, each optionally preceded by a "[source: doc #n]" line.
struct ContextStyle {
    bool source_headers = true;
};

std::string join_contexts(std::span<const Chunk> contexts, const ContextStyle& style);

// Substitutes contexts and question into the template. Contexts must
// already be in retrieval-score order. Deterministic; empty contexts
// remove the context line.
ChatTranscript render_prompt(const PromptTemplate& tmpl, std::span<const Chunk> contexts,
                             std::string_view question,
                             const ContextStyle& style = {});

// Canonical listing-shaped serialization used for goldens, logs and
// prompt hashing.
std::string transcript_to_text(const ChatTranscript& transcript);

struct AskResult {
    bool ok = false;
    std::string text;
    int attempts = 0;
    std::string error;
};

struct DecodingConfig {
    std::optional<double> temperature;  // absent = backend default, recorded as such
    std::optional<double> top_p;
};

struct ScriptEntry {
    std::string response;
    int fail_times = 0;  // simulated transport failures before success
};

// Chat-completion backend: remote HTTP endpoint or scripted mock. The
// scripted mock resolves a canned response by routing key (case_id)
// first, then by prompt hash; unmapped prompts produce an explicit
// "unscripted case" error.
class LlmBackend {
public:
    enum class Kind { ScriptedMock, Remote };

    struct RemoteConfig {
        std::string endpoint;     // e.g. http://host:port/v1/chat/completions
        std::string api_key_env;
        int timeout_seconds = 60;
    };

    static LlmBackend scripted(std::map<std::string, ScriptEntry> by_key,
                               std::string model_id = "scripted-mock");
    // JSONL: {"case_id": ..., "response": ..., "fail_times"?: n} or
    //        {"prompt_hash": ..., "response": ...}
    static LlmBackend scripted_from_file(const std::filesystem::path& path,
                                         std::string model_id = "scripted-mock");
    static LlmBackend remote(RemoteConfig config, std::string model_id,
                             DecodingConfig decoding = {});

    Kind kind() const { return kind_; }
    const std::string& model_id() const { return model_id_; }
    const DecodingConfig& decoding() const { return decoding_; }
    int max_attempts() const { return max_attempts_; }
    void set_max_attempts(int attempts) { max_attempts_ = attempts; }

    // Transport errors are retried up to max_attempts; the attempt count
    // is always recorded. Exhausted retries return ok=false rather than
    // throwing, so a run records the failure per case and continues.
    AskResult ask(const ChatTranscript& transcript,
                  std::string_view routing_key = {}) const;

private:
    Kind kind_ = Kind::ScriptedMock;
    std::string model_id_;
    DecodingConfig decoding_;
    int max_attempts_ = 3;
    std::map<std::string, ScriptEntry> script_;
    RemoteConfig remote_;
    mutable std::map<std::string, int> failures_injected_;
    mutable std::mutex mutex_;

public:
    LlmBackend(const LlmBackend& other);
    LlmBackend& operator=(const LlmBackend&) = delete;
    LlmBackend(LlmBackend&& other) noexcept;
    LlmBackend& operator=(LlmBackend&& other) noexcept;

private:
    LlmBackend() = default;
};

struct AssistantAnswer {
    std::string justification;
    std::string country_raw;
    std::string country;  // ISO 3166-1 alpha-2 or UNRESOLVED; filled by normalize
    std::string raw_response;
    std::vector<std::string> retrieval_trace;  // chunk_ids used as context
};

enum class ParseStatus { Ok, NoJson, SchemaError };

struct ParseOutcome {
    ParseStatus status = ParseStatus::NoJson;
    AssistantAnswer answer;
    std::string message;

    bool ok() const { return status == ParseStatus::Ok; }
};

// Extracts the first JSON object from raw text (prose and code fences
// around it are fine) and requires string keys `justification` and
// `country`. Never throws: every outcome is a value or a typed error.
ParseOutcome parse_answer(std::string_view raw);

// Canonical formatter for answers produced by the harness itself;
// parse_answer(format_answer(j, c)) round-trips.
std::string format_answer(std::string_view justification, std::string_view country);

// German/English country-name alias table (data file, extensible).
class CountryTable {
public:
    // TSV lines: CODE \t alias \t alias ...
    static CountryTable load(const std::filesystem::path& path);

    // Case-insensitive alias lookup. Strings naming more than one
    // country resolve to UNRESOLVED (multi-country answers count as
    // wrong); bare alpha-2 codes pass through.
    std::string normalize(std::string_view country_raw) const;

private:
    struct Alias {
        std::string folded;
        std::string code;
    };
    std::vector<Alias> aliases_;
    std::vector<std::string> codes_;
};

}  // namespace lexrag
