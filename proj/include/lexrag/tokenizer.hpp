#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lexrag {

// Token stream produced by the harness tokenizer.
//
// Split rule (byte level, locale independent):
//   - ASCII letters, ASCII digits and every byte >= 0x80 (UTF-8
//     continuation and lead bytes, so umlauts and signs like the
//     section mark stay inside their word) are word bytes; maximal
//     runs of word bytes form one token.
//   - Every other non-whitespace ASCII byte is a single-byte token.
//   - ASCII whitespace separates tokens and is discarded.
//
// Join rule: tokens joined with a single space. The joined text is the
// normalized form; re-tokenizing it yields the same stream.
struct TokenStream {
    std::vector<std::string> tokens;
    std::vector<size_t> offsets;  // byte offset of each token in the source

    size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }

    // Raw source span covering tokens [first, last); boundaries sit on
    // token edges, so re-tokenizing the span yields exactly those tokens.
    std::string span_text(std::string_view source, size_t first, size_t last) const;
};

TokenStream tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

}  // namespace lexrag
