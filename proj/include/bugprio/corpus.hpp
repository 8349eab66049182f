// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bugprio {

enum class Priority : std::uint8_t { P1 = 0, P2, P3, P4, P5 };

inline constexpr std::size_t kNumPriorities = 5;
inline constexpr std::array<Priority, kNumPriorities> kAllPriorities = {Priority::P1, Priority::P2, Priority::P3,
                                                                        Priority::P4, Priority::P5};

std::string_view to_string(Priority p);
/// "P1".."P5"; anything else is nullopt.
std::optional<Priority> parse_priority(std::string_view text);
inline std::size_t index_of(Priority p) { return static_cast<std::size_t>(p); }

struct BugReport {
    std::string id;
    std::string summary;
    std::string description;
    std::optional<Priority> priority;

    bool operator==(const BugReport&) const = default;
};

/// One rejected line of a corpus file.
struct CorpusIssue {
    std::size_t line = 0;
    std::string message;
};

class CorpusError : public std::runtime_error {
public:
    CorpusError(std::string message, std::vector<CorpusIssue> issues = {})
        : std::runtime_error(std::move(message)), issues_(std::move(issues)) {}
    const std::vector<CorpusIssue>& issues() const noexcept { return issues_; }

private:
    std::vector<CorpusIssue> issues_;
};

struct CorpusLoad {
    std::vector<BugReport> reports;
    std::vector<CorpusIssue> issues;
};

/// Parses a JSONL corpus, keeping every valid record and one issue per bad line.
/// Throws CorpusError only when the file cannot be read.
CorpusLoad read_corpus(const std::filesystem::path& path);

/// Strict load: throws CorpusError listing every bad line if any line fails.
std::vector<BugReport> load_corpus(const std::filesystem::path& path);

/// Validates and converts one JSONL line. Throws std::invalid_argument on a bad record.
BugReport parse_report_line(std::string_view line);
std::string report_to_json_line(const BugReport& report);
void write_corpus(const std::filesystem::path& path, const std::vector<BugReport>& reports);

/// Summary, one space, description. Empty description yields the summary alone.
std::string compose_text(const BugReport& report);

struct DatasetSplit {
    std::vector<BugReport> train;
    std::vector<BugReport> valid;
    std::vector<BugReport> test;
    std::uint64_t seed = 0;
};

/// Seeded shuffle, then floor(0.8 N) / floor(0.1 N) / remainder.
DatasetSplit split_dataset(const std::vector<BugReport>& reports, std::uint64_t seed);

std::vector<BugReport> filter_labeled(const std::vector<BugReport>& reports);

struct LabelHistogram {
    std::array<std::size_t, kNumPriorities> counts{};

    std::size_t total() const;
    std::size_t operator[](Priority p) const { return counts[index_of(p)]; }
    bool operator==(const LabelHistogram&) const = default;
};

LabelHistogram label_histogram(const std::vector<BugReport>& reports);

/// Number of whitespace-delimited words.
std::size_t word_count(std::string_view text);

/// Label ratios of the reference training set (P1..P5).
inline constexpr std::array<std::size_t, kNumPriorities> kReferenceLabelCounts = {34544, 32569, 102634, 2935, 3906};

struct SyntheticCorpusOptions {
    std::size_t size = 500;
    std::uint64_t seed = 1;
    /// Relative class weights; apportioned to `size` by largest remainder.
    std::array<std::size_t, kNumPriorities> class_weights = kReferenceLabelCounts;
    /// Extra reports without a priority (pre-training only).
    std::size_t unlabeled = 0;
};

/// Per-class report counts for `size` reports under `weights`, largest remainder.
std::array<std::size_t, kNumPriorities> apportion(std::size_t size,
                                                  const std::array<std::size_t, kNumPriorities>& weights);

/// Generates bug-report-like records whose priority is signalled by
/// class-specific keywords embedded in otherwise shared filler text.
std::vector<BugReport> synthesize_corpus(const SyntheticCorpusOptions& options);

}  // namespace bugprio
