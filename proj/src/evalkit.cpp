#include "lexrag/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "lexrag/assistant.hpp"
#include "lexrag/tokenizer.hpp"
#include "lexrag/util.hpp"

#include <json.hpp>

namespace lexrag {

std::vector<CaseRecord> load_cases(const std::filesystem::path& path) {
    std::vector<CaseRecord> cases;
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto json = nlohmann::json::parse(line, nullptr, false);
        if (json.is_discarded()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid JSON case line");
        }
        CaseRecord record;
        record.case_id = json.at("case_id").get<std::string>();
        record.question = json.at("question").get<std::string>();
        record.gold_country = json.value("gold_country", "");
        record.gold_justification = json.value("gold_justification", "");
        if (json.contains("gold_chunks")) {
            record.gold_chunks = json["gold_chunks"].get<std::vector<std::string>>();
        }
        if (json.contains("tags")) {
            record.tags = json["tags"].get<std::vector<std::string>>();
        }
        cases.push_back(std::move(record));
    }
    return cases;
}

void save_cases(std::span<const CaseRecord> cases, const std::filesystem::path& path) {
    std::string out;
    for (const auto& record : cases) {
        nlohmann::ordered_json json;
        json["case_id"] = record.case_id;
        json["question"] = record.question;
        json["gold_country"] = record.gold_country;
        json["gold_justification"] = record.gold_justification;
        json["gold_chunks"] = record.gold_chunks;
        json["tags"] = record.tags;
        out += json.dump();
        out.push_back('\n');
    }
    write_file(path, out);
}

std::string AccuracyReport::percent() const {
    return format_percent(correct, total);
}

AccuracyReport score_place_of_supply(std::span<const CaseRecord> cases,
                                     std::span<const ScoredAnswer> answers) {
    if (cases.empty()) {
        throw std::invalid_argument("score_place_of_supply: empty case set");
    }
    std::map<std::string, const CaseRecord*> by_id;
    for (const auto& record : cases) by_id[record.case_id] = &record;

    std::map<std::string, const ScoredAnswer*> answer_by_id;
    for (const auto& answer : answers) {
        if (!by_id.count(answer.case_id)) {
            throw std::invalid_argument("answer for unknown case_id: " + answer.case_id);
        }
        if (answer_by_id.count(answer.case_id)) {
            throw std::invalid_argument("duplicate answer for case_id: " + answer.case_id);
        }
        answer_by_id[answer.case_id] = &answer;
    }

    AccuracyReport report;
    report.total = static_cast<long long>(cases.size());
    for (const auto& record : cases) {
        CaseVerdict verdict;
        verdict.case_id = record.case_id;
        auto it = answer_by_id.find(record.case_id);
        if (it == answer_by_id.end()) {
            verdict.format_failure = true;
            verdict.predicted_country = std::string(kUnresolvedCountry);
        } else {
            const ScoredAnswer& answer = *it->second;
            verdict.format_failure = answer.format_failure;
            verdict.predicted_country = answer.country;
            verdict.correct_country = !answer.format_failure &&
                                      answer.country != kUnresolvedCountry &&
                                      answer.country == record.gold_country;
        }
        if (verdict.correct_country) ++report.correct;
        report.verdicts.push_back(std::move(verdict));
    }
    return report;
}

namespace {

std::map<std::string, long long> token_counts(std::string_view text) {
    std::map<std::string, long long> counts;
    for (auto& token : tokenize(text).tokens) {
        ++counts[token];
    }
    return counts;
}

}  // namespace

HitMetrics retrieval_hit_metrics(std::span<const Chunk> retrieved,
                                 std::span<const std::string> gold_chunks,
                                 double tau) {
    HitMetrics metrics;
    if (gold_chunks.empty()) {
        metrics.applicable = false;
        return metrics;
    }
    metrics.applicable = true;
    metrics.gold_total = static_cast<int>(gold_chunks.size());

    std::vector<std::map<std::string, long long>> retrieved_counts;
    retrieved_counts.reserve(retrieved.size());
    for (const auto& chunk : retrieved) {
        retrieved_counts.push_back(token_counts(chunk.text));
    }

    for (const auto& gold : gold_chunks) {
        auto gold_counts = token_counts(gold);
        long long gold_total = 0;
        for (const auto& [token, count] : gold_counts) gold_total += count;
        if (gold_total == 0) continue;

        double best = 0.0;
        for (const auto& chunk_counts : retrieved_counts) {
            long long covered = 0;
            for (const auto& [token, count] : gold_counts) {
                auto it = chunk_counts.find(token);
                if (it != chunk_counts.end()) {
                    covered += std::min(count, it->second);
                }
            }
            best = std::max(best, static_cast<double>(covered) /
                                      static_cast<double>(gold_total));
        }
        if (best >= tau) ++metrics.hits;
    }
    metrics.recall = static_cast<double>(metrics.hits) /
                     static_cast<double>(metrics.gold_total);
    return metrics;
}

std::vector<Chunk> mocked_rag_contexts(const CaseRecord& record) {
    if (record.gold_chunks.empty()) {
        throw std::runtime_error("mocked-RAG oracle unavailable: case " + record.case_id +
                                 " has no gold chunks");
    }
    std::vector<Chunk> chunks;
    chunks.reserve(record.gold_chunks.size());
    for (size_t i = 0; i < record.gold_chunks.size(); ++i) {
        Chunk chunk;
        chunk.chunk_id = record.case_id + ":gold:" + std::to_string(i);
        chunk.doc_id = "gold:" + record.case_id;
        chunk.ordinal = static_cast<int>(i);
        chunk.text = record.gold_chunks[i];
        chunk.token_start = 0;
        chunk.token_len = tokenize(chunk.text).size();
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

ContingencyTable2x2 build_contingency(std::span<const CaseVerdict> verdicts_a,
                                      std::span<const CaseVerdict> verdicts_b) {
    std::map<std::string, bool> b_by_id;
    for (const auto& v : verdicts_b) b_by_id[v.case_id] = v.correct_country;

    std::set<std::string> only_a, only_b;
    for (const auto& v : verdicts_a) {
        if (!b_by_id.count(v.case_id)) only_a.insert(v.case_id);
    }
    {
        std::set<std::string> a_ids;
        for (const auto& v : verdicts_a) a_ids.insert(v.case_id);
        for (const auto& v : verdicts_b) {
            if (!a_ids.count(v.case_id)) only_b.insert(v.case_id);
        }
    }
    if (!only_a.empty() || !only_b.empty()) {
        std::string message = "contingency pairing error;";
        if (!only_a.empty()) {
            message += " only in A:";
            for (const auto& id : only_a) message += " " + id;
        }
        if (!only_b.empty()) {
            message += " only in B:";
            for (const auto& id : only_b) message += " " + id;
        }
        throw std::invalid_argument(message);
    }

    ContingencyTable2x2 table;
    for (const auto& v : verdicts_a) {
        bool a_correct = v.correct_country;
        bool b_correct = b_by_id.at(v.case_id);
        if (a_correct && b_correct) ++table.a;
        else if (a_correct && !b_correct) ++table.b;
        else if (!a_correct && b_correct) ++table.c;
        else ++table.d;
    }
    return table;
}

McNemarResult mcnemar_yates(const ContingencyTable2x2& table) {
    if (table.a < 0 || table.b < 0 || table.c < 0 || table.d < 0) {
        throw std::invalid_argument("contingency cells must be non-negative");
    }
    McNemarResult result;
    const double b = static_cast<double>(table.b);
    const double c = static_cast<double>(table.c);
    if (table.b + table.c == 0) {
        result.statistic = 0.0;
        result.p_value = 1.0;
        return result;
    }
    double diff = std::abs(b - c) - 1.0;
    result.statistic = diff * diff / (b + c);
    // chi-square upper tail with 1 degree of freedom
    result.p_value = std::erfc(std::sqrt(result.statistic / 2.0));
    return result;
}

std::vector<ReviewRecord> load_reviews(const std::filesystem::path& path) {
    std::vector<ReviewRecord> reviews;
    if (!std::filesystem::exists(path)) return reviews;
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto json = nlohmann::json::parse(line, nullptr, false);
        if (json.is_discarded()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid JSON review line");
        }
        ReviewRecord review;
        review.case_id = json.at("case_id").get<std::string>();
        review.run_id = json.at("run_id").get<std::string>();
        std::string grade = json.at("grade").get<std::string>();
        if (grade != "correct" && grade != "incorrect") {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": grade must be correct|incorrect");
        }
        review.correct = grade == "correct";
        review.reviewer = json.value("reviewer", "");
        review.note = json.value("note", "");
        reviews.push_back(std::move(review));
    }
    return reviews;
}

void append_review(const ReviewRecord& review, const std::filesystem::path& path) {
    nlohmann::ordered_json json;
    json["case_id"] = review.case_id;
    json["run_id"] = review.run_id;
    json["grade"] = review.correct ? "correct" : "incorrect";
    json["reviewer"] = review.reviewer;
    json["note"] = review.note;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to " + path.string());
    out << json.dump() << "\n";
}

namespace {

std::string review_percent(long long count, long long total) {
    double pct = 100.0 * static_cast<double>(count) / static_cast<double>(total);
    double rounded = std::round(pct);
    char buf[32];
    if (std::abs(pct - rounded) < 1e-9) {
        std::snprintf(buf, sizeof(buf), "%.0f", rounded);
    } else {
        std::snprintf(buf, sizeof(buf), "%.2f", pct);
    }
    return buf;
}

}  // namespace

ReviewSummary aggregate_reviews(std::span<const ReviewRecord> reviews,
                                std::string_view run_id) {
    ReviewSummary summary;
    std::set<std::pair<std::string, std::string>> seen;  // (case_id, reviewer)
    for (const auto& review : reviews) {
        if (review.run_id != run_id) continue;
        auto key = std::make_pair(review.case_id, review.reviewer);
        if (!seen.insert(key).second) {
            throw std::invalid_argument("duplicate review for case " + review.case_id +
                                        " by reviewer '" + review.reviewer + "' in run " +
                                        std::string(run_id));
        }
        if (review.correct) ++summary.correct_count;
        else ++summary.incorrect_count;
    }
    long long total = summary.correct_count + summary.incorrect_count;
    if (total == 0) return summary;
    summary.fraction = static_cast<double>(summary.correct_count) /
                       static_cast<double>(total);
    summary.percent_correct = review_percent(summary.correct_count, total);
    summary.percent_incorrect = review_percent(summary.incorrect_count, total);
    return summary;
}

}  // namespace lexrag
