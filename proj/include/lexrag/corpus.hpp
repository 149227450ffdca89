#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lexrag {

struct SourceDocument {
    std::string doc_id;
    std::string title;
    std::string body;  // Markdown
    int page_count = 0;
};

enum class PrepVariant { Basic, Ext };

std::string to_string(PrepVariant v);
PrepVariant prep_variant_from_string(std::string_view s);

enum class RuleKind { Header, Footer, Xref };

// One removal rule. Header/footer rules drop whole lines whose text the
// regex matches; xref rules erase matching spans inside lines.
struct RemovalRule {
    RuleKind kind;
    std::string pattern;  // ECMAScript regex
};

// Rule files hold one kind-prefixed pattern per line:
//   header:^Amtsblatt .*$
//   footer:^Seite \d+$
//   xref:\(siehe [^)]*\)
// Blank lines and lines starting with '#' are ignored.
struct RuleSet {
    std::vector<RemovalRule> rules;

    static RuleSet load(const std::filesystem::path& path);
    static RuleSet parse(std::string_view text, std::string_view origin);

    // prep-basic applies header+footer rules; prep-ext additionally
    // applies xref rules, so its rule list is a strict superset.
    std::vector<RemovalRule> for_variant(PrepVariant v) const;
};

// Removes every line matching a header/footer rule; other lines are
// untouched. Idempotent.
SourceDocument strip_page_furniture(const SourceDocument& doc,
                                    std::span<const RemovalRule> rules);

// Erases spans matching xref rules inside lines, then collapses runs of
// spaces left behind. Idempotent for patterns that do not match their
// own residue.
SourceDocument strip_cross_references(const SourceDocument& doc,
                                      std::span<const RemovalRule> rules);

// Replaces every Markdown pipe table with a bullet list, one bullet per
// data row, "Header: cell" pairs in column order. Throws on ragged rows,
// naming the document and line.
SourceDocument tables_to_bullets(const SourceDocument& doc);

// Full preprocessing pipeline for one variant:
//   basic: furniture removal, then table conversion
//   ext:   furniture removal, cross-reference removal, table conversion
SourceDocument preprocess(const SourceDocument& doc, PrepVariant variant,
                          const RuleSet& rules);

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    int ordinal = 0;
    std::string text;  // join of the chunk's tokens
    size_t token_start = 0;
    size_t token_len = 0;
};

// Fixed token windows of chunk_size with the given overlap; the last
// chunk may be shorter and is always kept.
std::vector<Chunk> chunk_fixed(const SourceDocument& doc, size_t chunk_size,
                               size_t overlap);

// One chunk per Markdown-heading-delimited section, heading included.
// Preamble before the first heading becomes chunk 0; a document without
// headings yields a single chunk.
std::vector<Chunk> chunk_layout(const SourceDocument& doc);

// Corpus manifest: JSON {"documents": [{"doc_id","title","path","page_count"?}]}.
// Paths are resolved relative to the manifest's directory.
std::vector<SourceDocument> load_corpus(const std::filesystem::path& manifest_path);

}  // namespace lexrag
