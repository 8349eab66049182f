// SPDX-License-Identifier: Apache-2.0
#include "bugprio/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bugprio/rng.hpp"

namespace bugprio {

namespace {

constexpr std::array<std::string_view, kNumPriorities> kPriorityNames = {"P1", "P2", "P3", "P4", "P5"};

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string_view to_string(Priority p) { return kPriorityNames[index_of(p)]; }

std::optional<Priority> parse_priority(std::string_view text) {
    for (std::size_t i = 0; i < kNumPriorities; ++i) {
        if (text == kPriorityNames[i]) {
            return static_cast<Priority>(i);
        }
    }
    return std::nullopt;
}

BugReport parse_report_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("record is not a JSON object");
    }
    auto string_field = [&](const char* name, bool required) -> std::string {
        auto it = j.find(name);
        if (it == j.end() || it->is_null()) {
            if (required) {
                throw std::invalid_argument(std::string("missing field \"") + name + "\"");
            }
            return {};
        }
        if (!it->is_string()) {
            throw std::invalid_argument(std::string("field \"") + name + "\" must be a string");
        }
        return it->get<std::string>();
    };
    BugReport r;
    r.id = string_field("id", true);
    r.summary = string_field("summary", true);
    r.description = string_field("description", false);
    if (is_blank(r.summary)) {
        throw std::invalid_argument("summary is empty");
    }
    if (auto it = j.find("priority"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            throw std::invalid_argument("field \"priority\" must be a string");
        }
        const std::string label = it->get<std::string>();
        r.priority = parse_priority(label);
        if (!r.priority) {
            throw std::invalid_argument("unknown priority \"" + label + "\"");
        }
    }
    return r;
}

std::string report_to_json_line(const BugReport& report) {
    nlohmann::ordered_json j;
    j["id"] = report.id;
    j["summary"] = report.summary;
    j["description"] = report.description;
    if (report.priority) {
        j["priority"] = std::string(to_string(*report.priority));
    }
    return j.dump();
}

CorpusLoad read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorpusError("cannot read corpus file " + path.string());
    }
    CorpusLoad result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (is_blank(line)) {
            continue;
        }
        try {
            result.reports.push_back(parse_report_line(line));
        } catch (const std::invalid_argument& e) {
            result.issues.push_back({line_no, e.what()});
        }
    }
    if (in.bad()) {
        throw CorpusError("I/O error while reading " + path.string());
    }
    return result;
}

std::vector<BugReport> load_corpus(const std::filesystem::path& path) {
    CorpusLoad load = read_corpus(path);
    if (!load.issues.empty()) {
        std::ostringstream os;
        os << path.string() << ": " << load.issues.size() << " invalid record(s)";
        for (const CorpusIssue& issue : load.issues) {
            os << "\n  line " << issue.line << ": " << issue.message;
        }
        throw CorpusError(os.str(), std::move(load.issues));
    }
    return std::move(load.reports);
}

void write_corpus(const std::filesystem::path& path, const std::vector<BugReport>& reports) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CorpusError("cannot write corpus file " + path.string());
    }
    for (const BugReport& r : reports) {
        out << report_to_json_line(r) << '\n';
    }
}

std::string compose_text(const BugReport& report) {
    if (report.description.empty()) {
        return report.summary;
    }
    return report.summary + " " + report.description;
}

DatasetSplit split_dataset(const std::vector<BugReport>& reports, std::uint64_t seed) {
    const std::size_t n = reports.size();
    if (n < 10) {
        throw std::invalid_argument("split_dataset: need at least 10 reports, got " + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_valid = n / 10;
    DatasetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        const BugReport& r = reports[order[i]];
        if (i < n_train) {
            split.train.push_back(r);
        } else if (i < n_train + n_valid) {
            split.valid.push_back(r);
        } else {
            split.test.push_back(r);
        }
    }
    return split;
}

std::vector<BugReport> filter_labeled(const std::vector<BugReport>& reports) {
    std::vector<BugReport> out;
    std::copy_if(reports.begin(), reports.end(), std::back_inserter(out),
                 [](const BugReport& r) { return r.priority.has_value(); });
    return out;
}

std::size_t LabelHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

LabelHistogram label_histogram(const std::vector<BugReport>& reports) {
    LabelHistogram h;
    for (const BugReport& r : reports) {
        if (r.priority) {
            ++h.counts[index_of(*r.priority)];
        }
    }
    return h;
}

std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_word) {
            ++count;
        }
        in_word = !space;
    }
    return count;
}

// ---------------------------------------------------------------- synthetic corpus

std::array<std::size_t, kNumPriorities> apportion(std::size_t size,
                                                  const std::array<std::size_t, kNumPriorities>& weights) {
    const std::size_t total = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
    if (total == 0) {
        throw std::invalid_argument("apportion: all class weights are zero");
    }
    std::array<std::size_t, kNumPriorities> counts{};
    std::array<std::size_t, kNumPriorities> remainders{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < kNumPriorities; ++i) {
        counts[i] = size * weights[i] / total;
        remainders[i] = size * weights[i] % total;
        assigned += counts[i];
    }
    std::array<std::size_t, kNumPriorities> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < size; ++k, ++assigned) {
        ++counts[order[k % kNumPriorities]];
    }
    return counts;
}

namespace {

constexpr std::array<std::array<std::string_view, 3>, kNumPriorities> kClassKeywords = {{
    {"crash", "dataloss", "segfault"},
    {"regression", "blocker", "freeze"},
    {"misbehaves", "incorrect", "flicker"},
    {"typo", "cosmetic", "wording"},
    {"wishlist", "someday", "nicety"},
}};

constexpr std::array<std::string_view, 48> kFiller = {
    "the",      "editor",   "when",     "opening",   "project",  "window",   "after",    "update",
    "build",    "menu",     "dialog",   "toolbar",   "file",     "with",     "and",      "in",
    "on",       "compiler", "debugger", "preferences", "panel",  "shows",    "click",    "button",
    "page",     "browser",  "tab",      "plugin",    "settings", "server",   "java",     "import",
    "source",   "view",     "while",    "using",     "option",   "text",     "status",   "line",
    "profile",  "cache",    "refresh",  "startup",   "search",   "index",    "layout",   "font",
};

std::string sentence(Rng& rng, std::size_t words, std::string_view keyword, bool capitalize) {
    const std::size_t slot = keyword.empty() ? words : rng.index(words);
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        std::string w(i == slot ? keyword : kFiller[rng.index(kFiller.size())]);
        if (i == 0 && capitalize && !w.empty()) {
            w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        }
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

}  // namespace

std::vector<BugReport> synthesize_corpus(const SyntheticCorpusOptions& options) {
    Rng rng(options.seed);
    const auto counts = apportion(options.size, options.class_weights);
    std::vector<std::optional<Priority>> labels;
    for (std::size_t c = 0; c < kNumPriorities; ++c) {
        labels.insert(labels.end(), counts[c], static_cast<Priority>(c));
    }
    labels.insert(labels.end(), options.unlabeled, std::nullopt);
    rng.shuffle(labels);

    std::vector<BugReport> reports;
    reports.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        BugReport r;
        r.id = "syn-" + std::to_string(i + 1);
        r.priority = labels[i];
        std::string_view kw_summary;
        std::string_view kw_description;
        if (labels[i]) {
            const auto& kws = kClassKeywords[index_of(*labels[i])];
            kw_summary = kws[rng.index(kws.size())];
            if (rng.uniform() < 0.7) {
                kw_description = kws[rng.index(kws.size())];
            }
        }
        r.summary = sentence(rng, 4 + rng.index(5), kw_summary, true);
        r.description = sentence(rng, 6 + rng.index(15), kw_description, true) + ".";
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace bugprio
