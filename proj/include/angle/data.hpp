#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace angle {

// One supervised pair. Labels live in [0, 1]; binary data uses {0, 1}.
// subset optionally names the evaluation slice a pair belongs to.
struct LabeledPair {
  std::string text1;
  std::string text2;
  double label = 0.0;
  std::string subset;
};

enum class PairFormat { Tsv, JsonLines };

PairFormat pair_format_from_string(const std::string& name);
std::string to_string(PairFormat format);

// TSV: text1<TAB>text2<TAB>label. JSONL: {"text1", "text2", "label",
// optional "subset"}. Malformed lines are collected and reported together;
// an empty dataset is an error.
std::vector<LabeledPair> load_pairs(const std::string& path, PairFormat format);

// Inverse of load_pairs; TSV refuses texts containing tabs or newlines.
void save_pairs(const std::string& path, std::span<const LabeledPair> pairs,
                PairFormat format);

// Case-folded (ASCII) with whitespace runs collapsed to single spaces and
// outer whitespace trimmed. The identity used for duplicate detection.
std::string normalize_text(const std::string& text);

// Shortest decimal form that parses back to exactly the same double. Used by
// every serializer so written files are deterministic and lossless.
std::string format_double(double v);

struct IssueRecord {
  std::string repo;
  std::int64_t number = 0;
  std::string title;
  std::string body;
  std::vector<std::string> comments;
};

// JSONL of {"repo", "number", "title", "body", "comments": [...]}.
std::vector<IssueRecord> load_issue_dump(const std::string& path);

struct IssuePairing {
  std::vector<LabeledPair> pairs;  // positives first, then negatives
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t dangling = 0;  // refs to unknown issues, plus self-references
};

// Scans comments for "duplicate of #<number>" (case-insensitive). Each
// resolved reference becomes a label-1 pair of title + "\n" + body texts,
// deduplicated symmetrically. Issues outside any duplicate pair are paired
// off by a seeded shuffle into label-0 negatives, at most one use per issue,
// until round(negative_ratio * positives) negatives exist.
IssuePairing pair_issues(std::span<const IssueRecord> records, std::uint64_t seed,
                         double negative_ratio);

struct DatasetStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t total = 0;
  std::size_t long_threshold = 0;
  double long_proportion = 0.0;  // fraction of texts with length > threshold
  std::vector<std::pair<double, std::size_t>> length_quantiles;
};

// Positive iff label >= 0.5. Lengths are measured per text (two per pair)
// with the supplied counter.
DatasetStats dataset_stats(std::span<const LabeledPair> pairs,
                           const std::function<std::size_t(const std::string&)>& token_len,
                           std::size_t long_threshold);

enum class NliRelation { Entailment, Contradiction, Neutral };

NliRelation nli_relation_from_string(const std::string& name);

// entailment -> label 1, contradiction -> label 0, neutral -> dropped.
std::optional<LabeledPair> nli_to_pair(std::string premise, std::string hypothesis,
                                       NliRelation relation);

}  // namespace angle
