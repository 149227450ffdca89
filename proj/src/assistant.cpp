#include "lexrag/assistant.hpp"

#include <algorithm>
#include <stdexcept>

#include "lexrag/util.hpp"

#include <httplib.h>
#include <json.hpp>

namespace lexrag {

namespace {

constexpr std::string_view kContextsSlot = "{{contexts}}";
constexpr std::string_view kQuestionSlot = "{{question}}";

bool is_known_template_id(std::string_view id) {
    return id == kTemplatePlaceOfSupply || id == kTemplateGeneralAnalysis;
}

std::string replace_slot(std::string_view line, std::string_view slot,
                         std::string_view value) {
    size_t pos = line.find(slot);
    if (pos == std::string_view::npos) return std::string(line);
    std::string out(line.substr(0, pos));
    out += value;
    out += line.substr(pos + slot.size());
    return out;
}

}  // namespace

PromptTemplate PromptTemplate::load_file(const std::filesystem::path& path,
                                         std::string_view template_id) {
    if (!is_known_template_id(template_id)) {
        throw std::runtime_error("unknown template_id: " + std::string(template_id));
    }
    auto lines = split_lines(read_file(path));
    if (lines.empty() || trim(lines.front()) != "system:") {
        throw std::runtime_error("template " + path.string() +
                                 " must start with a \"system:\" line");
    }

    PromptTemplate tmpl;
    tmpl.template_id = template_id;
    size_t i = 1;
    for (; i < lines.size(); ++i) {
        if (lines[i].rfind("user:", 0) == 0) break;
        tmpl.system_lines.push_back(lines[i]);
        if (lines[i].find(kContextsSlot) != std::string::npos) {
            tmpl.context_line = static_cast<int>(tmpl.system_lines.size()) - 1;
        }
    }
    if (i == lines.size()) {
        throw std::runtime_error("template " + path.string() + " lacks a \"user:\" line");
    }
    tmpl.user_line = lines[i];
    if (tmpl.user_line.find(kQuestionSlot) == std::string::npos) {
        throw std::runtime_error("template " + path.string() +
                                 " lacks the {{question}} placeholder");
    }
    return tmpl;
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
    TemplateSet set;
    for (std::string_view id : {kTemplatePlaceOfSupply, kTemplateGeneralAnalysis}) {
        set.templates_.push_back(
            PromptTemplate::load_file(dir / (std::string(id) + ".txt"), id));
    }
    return set;
}

const PromptTemplate& TemplateSet::get(std::string_view template_id) const {
    for (const auto& t : templates_) {
        if (t.template_id == template_id) return t;
    }
    throw std::runtime_error("unknown template_id: " + std::string(template_id));
}

std::string join_contexts(std::span<const Chunk> contexts, const ContextStyle& style) {
    std::string out;
    for (size_t i = 0; i < contexts.size(); ++i) {
        if (i > 0) out += "\n\n";
        if (style.source_headers) {
            out += "[source: " + contexts[i].doc_id + " #" +
                   std::to_string(contexts[i].ordinal) + "]\n";
        }
        out += contexts[i].text;
    }
    return out;
}

ChatTranscript render_prompt(const PromptTemplate& tmpl, std::span<const Chunk> contexts,
                             std::string_view question, const ContextStyle& style) {
    if (trim(question).empty()) {
        throw std::invalid_argument("render_prompt: question is empty");
    }

    std::vector<std::string> lines;
    lines.reserve(tmpl.system_lines.size());
    for (size_t i = 0; i < tmpl.system_lines.size(); ++i) {
        if (static_cast<int>(i) == tmpl.context_line) {
            if (contexts.empty()) continue;  // drop the whole line
            lines.push_back(replace_slot(tmpl.system_lines[i], kContextsSlot,
                                         join_contexts(contexts, style)));
        } else {
            lines.push_back(tmpl.system_lines[i]);
        }
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

    std::string system_content;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) system_content.push_back('\n');
        system_content += lines[i];
    }

    ChatTranscript transcript;
    transcript.push_back({"system", std::move(system_content)});
    std::string user = replace_slot(tmpl.user_line, kQuestionSlot, question);
    // strip the "user: " role marker; the role lives in the message
    if (user.rfind("user:", 0) == 0) {
        user.erase(0, 5);
        if (!user.empty() && user.front() == ' ') user.erase(0, 1);
    }
    transcript.push_back({"user", std::move(user)});
    return transcript;
}

std::string transcript_to_text(const ChatTranscript& transcript) {
    std::string out;
    for (const auto& msg : transcript) {
        if (msg.role == "system") {
            out += "system:\n" + msg.content + "\n";
        } else {
            out += msg.role + ": " + msg.content + "\n";
        }
    }
    out += "assistant:\n";
    return out;
}

LlmBackend::LlmBackend(const LlmBackend& other)
    : kind_(other.kind_),
      model_id_(other.model_id_),
      decoding_(other.decoding_),
      max_attempts_(other.max_attempts_),
      script_(other.script_),
      remote_(other.remote_) {}

LlmBackend::LlmBackend(LlmBackend&& other) noexcept
    : kind_(other.kind_),
      model_id_(std::move(other.model_id_)),
      decoding_(other.decoding_),
      max_attempts_(other.max_attempts_),
      script_(std::move(other.script_)),
      remote_(std::move(other.remote_)),
      failures_injected_(std::move(other.failures_injected_)) {}

LlmBackend& LlmBackend::operator=(LlmBackend&& other) noexcept {
    if (this != &other) {
        kind_ = other.kind_;
        model_id_ = std::move(other.model_id_);
        decoding_ = other.decoding_;
        max_attempts_ = other.max_attempts_;
        script_ = std::move(other.script_);
        remote_ = std::move(other.remote_);
        failures_injected_ = std::move(other.failures_injected_);
    }
    return *this;
}

LlmBackend LlmBackend::scripted(std::map<std::string, ScriptEntry> by_key,
                                std::string model_id) {
    LlmBackend backend;
    backend.kind_ = Kind::ScriptedMock;
    backend.model_id_ = std::move(model_id);
    backend.script_ = std::move(by_key);
    return backend;
}

LlmBackend LlmBackend::scripted_from_file(const std::filesystem::path& path,
                                          std::string model_id) {
    std::map<std::string, ScriptEntry> by_key;
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto json = nlohmann::json::parse(line, nullptr, false);
        if (json.is_discarded()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid JSON in script file");
        }
        ScriptEntry entry;
        entry.response = json.at("response").get<std::string>();
        entry.fail_times = json.value("fail_times", 0);
        std::string key;
        if (json.contains("case_id")) {
            key = json["case_id"].get<std::string>();
        } else if (json.contains("prompt_hash")) {
            key = json["prompt_hash"].get<std::string>();
        } else {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": script entry needs case_id or prompt_hash");
        }
        by_key[key] = std::move(entry);
    }
    return scripted(std::move(by_key), std::move(model_id));
}

LlmBackend LlmBackend::remote(RemoteConfig config, std::string model_id,
                              DecodingConfig decoding) {
    LlmBackend backend;
    backend.kind_ = Kind::Remote;
    backend.model_id_ = std::move(model_id);
    backend.remote_ = std::move(config);
    backend.decoding_ = decoding;
    return backend;
}

AskResult LlmBackend::ask(const ChatTranscript& transcript,
                          std::string_view routing_key) const {
    if (transcript.empty() || transcript.front().role != "system") {
        throw std::invalid_argument("transcript must start with a system message");
    }
    bool has_user = std::any_of(transcript.begin(), transcript.end(),
                                [](const ChatMessage& m) { return m.role == "user"; });
    if (!has_user) {
        throw std::invalid_argument("transcript lacks a user question");
    }

    if (kind_ == Kind::ScriptedMock) {
        std::string key(routing_key);
        auto it = script_.end();
        if (!key.empty()) it = script_.find(key);
        if (it == script_.end()) {
            key = hash_hex128(transcript_to_text(transcript));
            it = script_.find(key);
        }
        if (it == script_.end()) {
            AskResult result;
            result.ok = false;
            result.attempts = 1;
            result.error = "unscripted case: no canned response for '" +
                           std::string(routing_key) + "'";
            return result;
        }

        AskResult result;
        for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
            result.attempts = attempt;
            {
                std::lock_guard<std::mutex> lock(mutex_);
                int& injected = failures_injected_[it->first];
                if (injected < it->second.fail_times) {
                    ++injected;
                    result.error = "injected transport failure";
                    continue;
                }
            }
            result.ok = true;
            result.text = it->second.response;
            result.error.clear();
            return result;
        }
        result.ok = false;
        result.error = "transport failure after " + std::to_string(result.attempts) +
                       " attempts (injected)";
        return result;
    }

    // remote chat-completions call
    if (remote_.endpoint.empty()) {
        throw std::runtime_error("remote LLM backend has no endpoint configured");
    }
    auto scheme_end = remote_.endpoint.find("://");
    if (scheme_end == std::string::npos) {
        throw std::runtime_error("LLM endpoint must include a scheme: " + remote_.endpoint);
    }
    auto path_start = remote_.endpoint.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? remote_.endpoint
                                                       : remote_.endpoint.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/"
                                                       : remote_.endpoint.substr(path_start);

    nlohmann::ordered_json request;
    request["model"] = model_id_;
    request["messages"] = nlohmann::json::array();
    for (const auto& msg : transcript) {
        request["messages"].push_back({{"role", msg.role}, {"content", msg.content}});
    }
    if (decoding_.temperature) request["temperature"] = *decoding_.temperature;
    if (decoding_.top_p) request["top_p"] = *decoding_.top_p;
    std::string body = request.dump();

    AskResult result;
    for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
        result.attempts = attempt;
        httplib::Client client(base);
        client.set_connection_timeout(remote_.timeout_seconds);
        client.set_read_timeout(remote_.timeout_seconds);
        httplib::Headers headers;
        if (!remote_.api_key_env.empty()) {
            if (const char* token = std::getenv(remote_.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + token);
            }
        }
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            result.error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            result.error = "http status " + std::to_string(res->status);
            continue;
        }
        auto json = nlohmann::json::parse(res->body, nullptr, false);
        if (json.is_discarded() || !json.contains("choices") || json["choices"].empty()) {
            result.error = "malformed chat response";
            continue;
        }
        result.ok = true;
        result.text = json["choices"][0].at("message").at("content").get<std::string>();
        result.error.clear();
        return result;
    }
    result.ok = false;
    result.error = "request failed after " + std::to_string(result.attempts) +
                   " attempts (" + result.error + ")";
    return result;
}

namespace {

// Returns the end index (one past '}') of a balanced JSON object
// starting at `start`, or npos.
size_t find_balanced_object(std::string_view text, size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

}  // namespace

ParseOutcome parse_answer(std::string_view raw) {
    ParseOutcome outcome;
    outcome.answer.raw_response = std::string(raw);

    size_t pos = raw.find('{');
    nlohmann::json object;
    bool found = false;
    while (pos != std::string_view::npos) {
        size_t end = find_balanced_object(raw, pos);
        if (end == std::string_view::npos) {
            pos = raw.find('{', pos + 1);
            continue;
        }
        auto candidate = nlohmann::json::parse(raw.substr(pos, end - pos), nullptr, false);
        if (!candidate.is_discarded() && candidate.is_object()) {
            object = std::move(candidate);
            found = true;
            break;
        }
        pos = raw.find('{', pos + 1);
    }

    if (!found) {
        outcome.status = ParseStatus::NoJson;
        outcome.message = "no JSON object found in response";
        return outcome;
    }

    if (!object.contains("justification") || !object["justification"].is_string() ||
        trim(object["justification"].get<std::string>()).empty()) {
        outcome.status = ParseStatus::SchemaError;
        outcome.message = "missing or empty 'justification' key";
        return outcome;
    }
    if (!object.contains("country") || !object["country"].is_string()) {
        outcome.status = ParseStatus::SchemaError;
        outcome.message = "missing 'country' key";
        return outcome;
    }

    outcome.status = ParseStatus::Ok;
    outcome.answer.justification = object["justification"].get<std::string>();
    outcome.answer.country_raw = object["country"].get<std::string>();
    return outcome;
}

std::string format_answer(std::string_view justification, std::string_view country) {
    nlohmann::ordered_json out;
    out["justification"] = justification;
    out["country"] = country;
    return out.dump();
}

namespace {

// ASCII lowercase plus the German uppercase umlauts; enough for the
// alias table, which is under our control.
std::string fold_case(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c >= 'A' && c <= 'Z') {
            out.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (c == 0xC3 && i + 1 < s.size()) {
            unsigned char next = static_cast<unsigned char>(s[i + 1]);
            // Ä->ä, Ö->ö, Ü->ü (0x84->0xA4, 0x96->0xB6, 0x9C->0xBC)
            if (next == 0x84 || next == 0x96 || next == 0x9C) {
                out.push_back(static_cast<char>(0xC3));
                out.push_back(static_cast<char>(next + 0x20));
                ++i;
            } else {
                out.push_back(s[i]);
            }
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

bool word_byte(unsigned char c) {
    return c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z') ||
           (c >= 'a' && c <= 'z');
}

}  // namespace

CountryTable CountryTable::load(const std::filesystem::path& path) {
    CountryTable table;
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (start <= t.size()) {
            size_t tab = t.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(trim(std::string_view(t).substr(start)));
                break;
            }
            fields.push_back(trim(std::string_view(t).substr(start, tab - start)));
            start = tab + 1;
        }
        if (fields.size() < 2 || fields[0].size() != 2) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected CODE\\talias lines");
        }
        table.codes_.push_back(fields[0]);
        for (size_t i = 1; i < fields.size(); ++i) {
            if (fields[i].empty()) continue;
            table.aliases_.push_back({fold_case(fields[i]), fields[0]});
        }
    }
    return table;
}

std::string CountryTable::normalize(std::string_view country_raw) const {
    std::string t = trim(country_raw);
    if (t.empty()) return std::string(kUnresolvedCountry);
    std::string folded = fold_case(t);

    // bare alpha-2 code passthrough (exact, to avoid false hits on short
    // words inside prose)
    for (const auto& code : codes_) {
        if (folded == fold_case(code)) return code;
    }

    std::vector<std::string> hits;
    for (const auto& alias : aliases_) {
        size_t pos = folded.find(alias.folded);
        while (pos != std::string::npos) {
            bool left_ok = pos == 0 || !word_byte(static_cast<unsigned char>(folded[pos - 1]));
            size_t end = pos + alias.folded.size();
            bool right_ok =
                end == folded.size() || !word_byte(static_cast<unsigned char>(folded[end]));
            if (left_ok && right_ok) {
                if (std::find(hits.begin(), hits.end(), alias.code) == hits.end()) {
                    hits.push_back(alias.code);
                }
                break;
            }
            pos = folded.find(alias.folded, pos + 1);
        }
    }
    if (hits.size() == 1) return hits.front();
    return std::string(kUnresolvedCountry);
}

}  // namespace lexrag
