#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lexrag {

// 64-bit FNV-1a over raw bytes.
uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL);

// splitmix64 step; advances the state and returns the next value.
uint64_t splitmix64(uint64_t& state);

// Deterministic 32-hex-digit content hash (two salted FNV passes).
// Used for cache keys and run ids; not cryptographic.
std::string hash_hex128(std::string_view data);

// Small deterministic PRNG. All randomness in the project goes through
// this so results are identical across platforms and standard libraries.
class SplitMix {
public:
    explicit SplitMix(uint64_t seed) : state_(seed) {}
    uint64_t next() { return splitmix64(state_); }
    // Uniform draw in (0, 1].
    double next_unit();
    // Uniform integer in [0, bound).
    uint64_t next_below(uint64_t bound);

private:
    uint64_t state_;
};

// Fisher-Yates with SplitMix; deterministic for a given seed everywhere.
template <typename T>
void seeded_shuffle(std::vector<T>& items, uint64_t seed) {
    SplitMix rng(seed);
    for (size_t i = items.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Little-endian binary encoding used by the index and vector cache files.
class ByteWriter {
public:
    void u32(uint32_t v);
    void u64(uint64_t v);
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f32(float v);
    void str(std::string_view s);    // u32 length + bytes
    void raw(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}
    uint32_t u32();
    uint64_t u64();
    int32_t i32() { return static_cast<int32_t>(u32()); }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    float f32();
    std::string str();
    std::string raw(size_t n);
    bool done() const { return pos_ == data_.size(); }

private:
    void need(size_t n) const;
    std::string_view data_;
    size_t pos_ = 0;
};

// Splits on '\n'; a trailing newline does not produce an empty last line.
std::vector<std::string> split_lines(std::string_view text);

std::string trim(std::string_view s);

// "93.24"-style percentage of n/d, two decimals.
std::string format_percent(long long numerator, long long denominator);

// floor(ratio * n) with a guard against products landing just below an
// integer they mathematically equal (e.g. 0.29 * 100).
long long floor_split(double ratio, long long n);

}  // namespace lexrag
