#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lexrag/corpus.hpp"

namespace lexrag {

struct CaseRecord {
    std::string case_id;
    std::string question;
    std::string gold_country;  // ISO alpha-2
    std::string gold_justification;
    std::vector<std::string> gold_chunks;  // relevant text spans
    std::vector<std::string> tags;         // e.g. textbook | real-world
};

// JSONL, one case per line: {case_id, question, gold_country,
// gold_justification, gold_chunks[], tags[]}.
std::vector<CaseRecord> load_cases(const std::filesystem::path& path);
void save_cases(std::span<const CaseRecord> cases, const std::filesystem::path& path);

struct CaseVerdict {
    std::string case_id;
    std::string predicted_country;
    bool correct_country = false;
    bool format_failure = false;
    // -1 = not applicable (case declares no gold chunks / non-RAG run)
    int retrieval_hits = -1;
    int retrieval_gold_total = -1;
};

// Input view for scoring: what the harness extracted per case.
struct ScoredAnswer {
    std::string case_id;
    std::string country;  // normalized, may be UNRESOLVED
    bool format_failure = false;
};

struct AccuracyReport {
    long long correct = 0;
    long long total = 0;
    std::vector<CaseVerdict> verdicts;

    double fraction() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
    std::string percent() const;  // two decimals, e.g. "93.24"
};

// Accuracy = correct / |cases|. UNRESOLVED and format failures count as
// incorrect; a case with no answer is recorded as a format failure.
AccuracyReport score_place_of_supply(std::span<const CaseRecord> cases,
                                     std::span<const ScoredAnswer> answers);

struct HitMetrics {
    bool applicable = false;  // false when the case declares no gold chunks
    int hits = 0;
    int gold_total = 0;
    double recall = 0.0;
};

// A gold span counts as hit when some retrieved chunk covers at least
// `tau` of the span's tokens (multiset overlap).
HitMetrics retrieval_hit_metrics(std::span<const Chunk> retrieved,
                                 std::span<const std::string> gold_chunks,
                                 double tau = 0.6);

// Perfect-retrieval oracle: the case's gold chunks verbatim, in dataset
// order, bypassing the index. Throws when the case has no gold chunks
// (such cases are excluded from mocked-RAG runs and recorded).
std::vector<Chunk> mocked_rag_contexts(const CaseRecord& record);

struct ContingencyTable2x2 {
    long long a = 0;  // both correct
    long long b = 0;  // A correct, B wrong
    long long c = 0;  // A wrong, B correct
    long long d = 0;  // both wrong
};

ContingencyTable2x2 build_contingency(std::span<const CaseVerdict> verdicts_a,
                                      std::span<const CaseVerdict> verdicts_b);

struct McNemarResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// McNemar's test with Yates' continuity correction:
//   statistic = (|b-c| - 1)^2 / (b+c),   b+c = 0  ->  statistic 0, p 1
// p is the chi-square df=1 upper tail, erfc(sqrt(statistic/2)).
McNemarResult mcnemar_yates(const ContingencyTable2x2& table);

struct ReviewRecord {
    std::string case_id;
    std::string run_id;
    bool correct = false;  // grade: correct|incorrect
    std::string reviewer;
    std::string note;
};

std::vector<ReviewRecord> load_reviews(const std::filesystem::path& path);
void append_review(const ReviewRecord& review, const std::filesystem::path& path);

struct ReviewSummary {
    long long correct_count = 0;
    long long incorrect_count = 0;
    double fraction = 0.0;
    // paper-style percentage: no decimals when integral ("80"), else two
    std::string percent_correct;
    std::string percent_incorrect;
};

// Aggregates grades for one run; duplicate (case_id, run_id, reviewer)
// triples are a dedup error. Zero reviews yield an empty summary.
ReviewSummary aggregate_reviews(std::span<const ReviewRecord> reviews,
                                std::string_view run_id);

}  // namespace lexrag
