#include "lexrag/corpus.hpp"

#include <cstdio>
#include <regex>
#include <stdexcept>

#include "lexrag/tokenizer.hpp"
#include "lexrag/util.hpp"

#include <json.hpp>

namespace lexrag {

namespace {

std::regex compile_rule(const RemovalRule& rule) {
    try {
        return std::regex(rule.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw std::runtime_error("rule pattern does not compile: \"" + rule.pattern +
                                 "\" (" + e.what() + ")");
    }
}

std::string collapse_spaces(const std::string& line) {
    std::string out;
    out.reserve(line.size());
    bool prev_space = false;
    for (char c : line) {
        if (c == ' ') {
            if (!prev_space) out.push_back(c);
            prev_space = true;
        } else {
            out.push_back(c);
            prev_space = false;
        }
    }
    // drop trailing spaces left by an end-of-line removal
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string join_body_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

bool is_table_row(const std::string& line) {
    return line.find('|') != std::string::npos;
}

// Separator rows look like | --- | :---: |
bool is_table_separator(const std::string& line) {
    if (!is_table_row(line)) return false;
    bool has_dash = false;
    for (char c : line) {
        if (c == '-') {
            has_dash = true;
        } else if (c != '|' && c != ':' && c != ' ' && c != '\t') {
            return false;
        }
    }
    return has_dash;
}

std::vector<std::string> split_table_cells(const std::string& line) {
    std::string s = trim(line);
    if (!s.empty() && s.front() == '|') s.erase(s.begin());
    if (!s.empty() && s.back() == '|') s.pop_back();
    std::vector<std::string> cells;
    size_t start = 0;
    while (start <= s.size()) {
        size_t bar = s.find('|', start);
        if (bar == std::string::npos) {
            cells.push_back(trim(std::string_view(s).substr(start)));
            break;
        }
        cells.push_back(trim(std::string_view(s).substr(start, bar - start)));
        start = bar + 1;
    }
    return cells;
}

}  // namespace

std::string to_string(PrepVariant v) {
    return v == PrepVariant::Basic ? "prep-basic" : "prep-ext";
}

PrepVariant prep_variant_from_string(std::string_view s) {
    if (s == "prep-basic" || s == "basic") return PrepVariant::Basic;
    if (s == "prep-ext" || s == "ext") return PrepVariant::Ext;
    throw std::invalid_argument("unknown preprocessing variant: " + std::string(s));
}

RuleSet RuleSet::load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
}

RuleSet RuleSet::parse(std::string_view text, std::string_view origin) {
    RuleSet set;
    int line_no = 0;
    for (const auto& raw : split_lines(text)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        RuleKind kind;
        std::string_view rest;
        if (line.rfind("header:", 0) == 0) {
            kind = RuleKind::Header;
            rest = std::string_view(line).substr(7);
        } else if (line.rfind("footer:", 0) == 0) {
            kind = RuleKind::Footer;
            rest = std::string_view(line).substr(7);
        } else if (line.rfind("xref:", 0) == 0) {
            kind = RuleKind::Xref;
            rest = std::string_view(line).substr(5);
        } else {
            throw std::runtime_error(std::string(origin) + ":" + std::to_string(line_no) +
                                     ": rule line lacks a header:/footer:/xref: prefix");
        }
        if (rest.empty()) {
            throw std::runtime_error(std::string(origin) + ":" + std::to_string(line_no) +
                                     ": empty rule pattern");
        }
        set.rules.push_back({kind, std::string(rest)});
    }
    return set;
}

std::vector<RemovalRule> RuleSet::for_variant(PrepVariant v) const {
    std::vector<RemovalRule> out;
    for (const auto& r : rules) {
        if (r.kind == RuleKind::Xref && v == PrepVariant::Basic) continue;
        out.push_back(r);
    }
    return out;
}

SourceDocument strip_page_furniture(const SourceDocument& doc,
                                    std::span<const RemovalRule> rules) {
    std::vector<std::pair<std::regex, const RemovalRule*>> compiled;
    for (const auto& r : rules) {
        if (r.kind == RuleKind::Header || r.kind == RuleKind::Footer) {
            compiled.emplace_back(compile_rule(r), &r);
        }
    }
    if (compiled.empty()) return doc;

    SourceDocument out = doc;
    std::vector<std::string> kept;
    for (auto& line : split_lines(doc.body)) {
        bool matched = false;
        for (const auto& [re, rule] : compiled) {
            if (std::regex_search(line, re)) {
                matched = true;
                break;
            }
        }
        if (!matched) kept.push_back(std::move(line));
    }
    out.body = join_body_lines(kept);
    return out;
}

SourceDocument strip_cross_references(const SourceDocument& doc,
                                      std::span<const RemovalRule> rules) {
    std::vector<std::regex> compiled;
    for (const auto& r : rules) {
        if (r.kind == RuleKind::Xref) compiled.push_back(compile_rule(r));
    }
    if (compiled.empty()) return doc;

    SourceDocument out = doc;
    std::vector<std::string> result;
    for (auto& line : split_lines(doc.body)) {
        std::string s = line;
        bool touched = false;
        for (const auto& re : compiled) {
            std::string replaced = std::regex_replace(s, re, "");
            if (replaced != s) {
                s = std::move(replaced);
                touched = true;
            }
        }
        result.push_back(touched ? collapse_spaces(s) : std::move(s));
    }
    out.body = join_body_lines(result);
    return out;
}

SourceDocument tables_to_bullets(const SourceDocument& doc) {
    auto lines = split_lines(doc.body);
    std::vector<std::string> out_lines;
    size_t i = 0;
    while (i < lines.size()) {
        bool table_here = i + 1 < lines.size() && is_table_row(lines[i]) &&
                          !is_table_separator(lines[i]) && is_table_separator(lines[i + 1]);
        if (!table_here) {
            out_lines.push_back(lines[i]);
            ++i;
            continue;
        }

        const size_t table_start_line = i + 1;  // 1-based for messages
        auto headers = split_table_cells(lines[i]);
        i += 2;  // skip header + separator
        while (i < lines.size() && is_table_row(lines[i])) {
            auto cells = split_table_cells(lines[i]);
            if (cells.size() != headers.size()) {
                throw std::runtime_error(
                    "ragged table in document \"" + doc.doc_id + "\" starting at line " +
                    std::to_string(table_start_line) + ": row at line " +
                    std::to_string(i + 1) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(headers.size()));
            }
            std::string bullet = "- ";
            for (size_t col = 0; col < headers.size(); ++col) {
                if (col > 0) bullet += "; ";
                bullet += headers[col] + ": " + cells[col];
            }
            out_lines.push_back(std::move(bullet));
            ++i;
        }
    }
    SourceDocument out = doc;
    out.body = join_body_lines(out_lines);
    return out;
}

SourceDocument preprocess(const SourceDocument& doc, PrepVariant variant,
                          const RuleSet& rules) {
    if (doc.body.empty()) {
        throw std::invalid_argument("document " + doc.doc_id + " has an empty body");
    }
    auto active = rules.for_variant(variant);
    SourceDocument result = strip_page_furniture(doc, active);
    if (variant == PrepVariant::Ext) {
        result = strip_cross_references(result, active);
    }
    return tables_to_bullets(result);
}

namespace {

std::string make_chunk_id(const std::string& doc_id, int ordinal) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", ordinal);
    return doc_id + ":" + buf;
}

Chunk make_chunk(const SourceDocument& doc, int ordinal, std::string text,
                 size_t token_start, size_t token_len) {
    Chunk c;
    c.chunk_id = make_chunk_id(doc.doc_id, ordinal);
    c.doc_id = doc.doc_id;
    c.ordinal = ordinal;
    c.text = std::move(text);
    c.token_start = token_start;
    c.token_len = token_len;
    return c;
}

}  // namespace

std::vector<Chunk> chunk_fixed(const SourceDocument& doc, size_t chunk_size,
                               size_t overlap) {
    if (chunk_size == 0) {
        throw std::invalid_argument("chunk_size must be positive");
    }
    if (overlap >= chunk_size) {
        throw std::invalid_argument("chunk overlap (" + std::to_string(overlap) +
                                    ") must be smaller than chunk size (" +
                                    std::to_string(chunk_size) + ")");
    }
    TokenStream stream = tokenize(doc.body);
    std::vector<Chunk> chunks;
    if (stream.empty()) return chunks;

    const size_t total = stream.size();
    const size_t stride = chunk_size - overlap;
    size_t start = 0;
    int ordinal = 0;
    while (start < total) {
        size_t end = std::min(start + chunk_size, total);
        chunks.push_back(make_chunk(doc, ordinal++,
                                    stream.span_text(doc.body, start, end), start,
                                    end - start));
        if (end == total) break;
        start += stride;
    }
    return chunks;
}

std::vector<Chunk> chunk_layout(const SourceDocument& doc) {
    auto lines = split_lines(doc.body);

    auto is_heading = [](const std::string& line) {
        size_t hashes = 0;
        while (hashes < line.size() && line[hashes] == '#') ++hashes;
        return hashes >= 1 && hashes <= 6 && hashes < line.size() && line[hashes] == ' ';
    };

    std::vector<std::string> sections;
    std::string current;
    for (const auto& line : lines) {
        if (is_heading(line) && !current.empty()) {
            sections.push_back(std::move(current));
            current.clear();
        }
        if (!current.empty()) current.push_back('\n');
        current += line;
    }
    if (!current.empty()) sections.push_back(std::move(current));

    std::vector<Chunk> chunks;
    size_t token_start = 0;
    int ordinal = 0;
    for (const auto& section : sections) {
        TokenStream stream = tokenize(section);
        if (stream.empty()) continue;
        chunks.push_back(make_chunk(doc, ordinal++,
                                    stream.span_text(section, 0, stream.size()),
                                    token_start, stream.size()));
        token_start += stream.size();
    }
    return chunks;
}

std::vector<SourceDocument> load_corpus(const std::filesystem::path& manifest_path) {
    nlohmann::json manifest = nlohmann::json::parse(read_file(manifest_path));
    if (!manifest.contains("documents") || !manifest["documents"].is_array()) {
        throw std::runtime_error("corpus manifest " + manifest_path.string() +
                                 " lacks a \"documents\" array");
    }
    auto base = manifest_path.parent_path();
    std::vector<SourceDocument> docs;
    std::vector<std::string> seen_ids;
    for (const auto& entry : manifest["documents"]) {
        SourceDocument doc;
        doc.doc_id = entry.at("doc_id").get<std::string>();
        doc.title = entry.value("title", doc.doc_id);
        doc.page_count = entry.value("page_count", 0);
        auto path = base / entry.at("path").get<std::string>();
        doc.body = read_file(path);
        if (doc.body.empty()) {
            throw std::runtime_error("document " + doc.doc_id + " is empty: " +
                                     path.string());
        }
        for (const auto& id : seen_ids) {
            if (id == doc.doc_id) {
                throw std::runtime_error("duplicate doc_id in corpus manifest: " + id);
            }
        }
        seen_ids.push_back(doc.doc_id);
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace lexrag
