// SPDX-License-Identifier: Apache-2.0
#include "bugprio/metrics.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace bugprio {

namespace {

constexpr std::array<const char*, 6> kBucketNames = {"0-100", "100-200", "200-300", "300-400", "400-500", ">500"};

std::size_t bucket_index(std::size_t words) {
    if (words > 500) {
        return 5;
    }
    return words == 0 ? 0 : (words - 1) / 100;
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport compute_metrics(std::span<const Priority> gold, std::span<const Priority> predicted) {
    if (gold.empty()) {
        throw std::invalid_argument("compute_metrics: empty evaluation set");
    }
    if (gold.size() != predicted.size()) {
        throw std::invalid_argument("compute_metrics: gold and predicted lengths differ");
    }
    EvalReport r;
    r.total = gold.size();
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++r.confusion[index_of(gold[i])][index_of(predicted[i])];
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < kNumPriorities; ++c) {
        std::size_t tp = r.confusion[c][c];
        std::size_t support = 0, predicted_c = 0;
        for (std::size_t k = 0; k < kNumPriorities; ++k) {
            support += r.confusion[c][k];
            predicted_c += r.confusion[k][c];
        }
        correct += tp;
        ClassMetrics& m = r.per_class[c];
        m.support = support;
        m.zero_support = support == 0;
        if (!m.zero_support) {
            m.precision = ratio(tp, predicted_c);
            m.recall = ratio(tp, support);
            const double pr = m.precision + m.recall;
            m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
        }
        const double w = ratio(support, r.total);
        r.weighted.precision += w * m.precision;
        r.weighted.recall += w * m.recall;
        r.weighted.f1 += w * m.f1;
    }
    r.accuracy = ratio(correct, r.total);
    return r;
}

std::string length_bucket(std::size_t words) { return kBucketNames[bucket_index(words)]; }

std::vector<BucketAccuracy> bucket_accuracy(std::span<const std::size_t> lengths, std::span<const Priority> gold,
                                            std::span<const Priority> predicted) {
    if (lengths.size() != gold.size() || gold.size() != predicted.size()) {
        throw std::invalid_argument("bucket_accuracy: input lengths differ");
    }
    std::array<BucketAccuracy, kBucketNames.size()> all{};
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        BucketAccuracy& b = all[bucket_index(lengths[i])];
        ++b.count;
        b.correct += gold[i] == predicted[i] ? 1 : 0;
    }
    std::vector<BucketAccuracy> out;
    for (std::size_t k = 0; k < all.size(); ++k) {
        if (all[k].count > 0) {
            all[k].name = kBucketNames[k];
            all[k].accuracy = ratio(all[k].correct, all[k].count);
            out.push_back(all[k]);
        }
    }
    return out;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["total"] = report.total;
    j["accuracy"] = report.accuracy;
    j["weighted"] = {{"precision", report.weighted.precision},
                     {"recall", report.weighted.recall},
                     {"f1", report.weighted.f1}};
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (Priority p : kAllPriorities) {
        const ClassMetrics& m = report.per_class[index_of(p)];
        per_class[std::string(to_string(p))] = {{"precision", m.precision},
                                                {"recall", m.recall},
                                                {"f1", m.f1},
                                                {"support", m.support},
                                                {"zero_support", m.zero_support}};
    }
    j["per_class"] = per_class;
    nlohmann::ordered_json confusion = nlohmann::ordered_json::array();
    for (const auto& row : report.confusion) {
        confusion.push_back(row);
    }
    j["confusion"] = confusion;
    nlohmann::ordered_json buckets = nlohmann::ordered_json::object();
    for (const BucketAccuracy& b : report.length_buckets) {
        buckets[b.name] = {{"count", b.count}, {"accuracy", b.accuracy}};
    }
    j["length_buckets"] = buckets;
    j["ties"] = report.ties;
    return j;
}

std::string render_report(const EvalReport& report) {
    std::string out = fmt::format("{:<8}{:>10}{:>10}{:>10}{:>10}\n", "class", "precision", "recall", "f1", "support");
    for (Priority p : kAllPriorities) {
        const ClassMetrics& m = report.per_class[index_of(p)];
        out += fmt::format("{:<8}{:>10.4f}{:>10.4f}{:>10.4f}{:>10}{}\n", to_string(p), m.precision, m.recall, m.f1,
                           m.support, m.zero_support ? "  (no support)" : "");
    }
    out += fmt::format("{:<8}{:>10.4f}{:>10.4f}{:>10.4f}{:>10}\n", "weighted", report.weighted.precision,
                       report.weighted.recall, report.weighted.f1, report.total);
    out += fmt::format("accuracy {:.4f}\n\nconfusion (rows gold, columns predicted)\n", report.accuracy);
    out += fmt::format("{:<6}", "");
    for (Priority p : kAllPriorities) {
        out += fmt::format("{:>7}", to_string(p));
    }
    out += '\n';
    for (Priority g : kAllPriorities) {
        out += fmt::format("{:<6}", to_string(g));
        for (std::size_t c = 0; c < kNumPriorities; ++c) {
            out += fmt::format("{:>7}", report.confusion[index_of(g)][c]);
        }
        out += '\n';
    }
    if (!report.length_buckets.empty()) {
        out += "\nlength bucket (words)  count  accuracy\n";
        for (const BucketAccuracy& b : report.length_buckets) {
            out += fmt::format("{:<22}{:>7}{:>10.4f}\n", b.name, b.count, b.accuracy);
        }
    }
    return out;
}

}  // namespace bugprio
