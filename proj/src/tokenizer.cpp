#include "lexrag/tokenizer.hpp"

namespace lexrag {

namespace {

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_word_byte(unsigned char c) {
    if (c >= 0x80) return true;
    if (c >= '0' && c <= '9') return true;
    if (c >= 'A' && c <= 'Z') return true;
    if (c >= 'a' && c <= 'z') return true;
    return false;
}

}  // namespace

TokenStream tokenize(std::string_view text) {
    TokenStream stream;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            size_t start = i;
            while (i < n && is_word_byte(static_cast<unsigned char>(text[i]))) {
                ++i;
            }
            stream.tokens.emplace_back(text.substr(start, i - start));
            stream.offsets.push_back(start);
        } else {
            stream.tokens.emplace_back(1, text[i]);
            stream.offsets.push_back(i);
            ++i;
        }
    }
    return stream;
}

std::string TokenStream::span_text(std::string_view source, size_t first,
                                   size_t last) const {
    if (first >= last || last > tokens.size()) return {};
    size_t begin = offsets[first];
    size_t end = offsets[last - 1] + tokens[last - 1].size();
    return std::string(source.substr(begin, end - begin));
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    size_t total = 0;
    for (const auto& t : tokens) total += t.size() + 1;
    out.reserve(total);
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace lexrag
