#include "angle/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"

#include "angle/errors.hpp"
#include "angle/rng.hpp"

namespace angle {

namespace {

using Json = nlohmann::json;

std::string join_lines(const std::vector<std::size_t>& lines) {
  std::ostringstream os;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) os << ", ";
    os << lines[i];
  }
  return os.str();
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

bool parse_label(const std::string& field, double& out) {
  if (field.empty()) return false;
  const char* begin = field.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + field.size() && std::isfinite(out);
}

}  // namespace

PairFormat pair_format_from_string(const std::string& name) {
  if (name == "tsv") return PairFormat::Tsv;
  if (name == "jsonl") return PairFormat::JsonLines;
  throw ConfigError("unknown pair format: " + name);
}

std::string to_string(PairFormat format) {
  return format == PairFormat::Tsv ? "tsv" : "jsonl";
}

std::vector<LabeledPair> load_pairs(const std::string& path, PairFormat format) {
  std::ifstream in = open_or_throw(path);
  std::vector<LabeledPair> pairs;
  std::vector<std::size_t> bad;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == PairFormat::Tsv) {
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
          cols.push_back(line.substr(start));
          break;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
      }
      double label = 0.0;
      if (cols.size() != 3 || !parse_label(cols[2], label)) {
        bad.push_back(line_no);
        continue;
      }
      pairs.push_back({cols[0], cols[1], label, ""});
    } else {
      Json j = Json::parse(line, nullptr, false);
      if (!j.is_object() || !j.contains("text1") || !j.contains("text2") ||
          !j.contains("label") || !j["text1"].is_string() || !j["text2"].is_string()) {
        bad.push_back(line_no);
        continue;
      }
      double label = 0.0;
      if (j["label"].is_number()) {
        label = j["label"].get<double>();
      } else if (j["label"].is_string() && parse_label(j["label"].get<std::string>(), label)) {
        // numeric string accepted
      } else {
        bad.push_back(line_no);
        continue;
      }
      LabeledPair p{j["text1"].get<std::string>(), j["text2"].get<std::string>(), label, ""};
      if (j.contains("subset") && j["subset"].is_string()) {
        p.subset = j["subset"].get<std::string>();
      }
      pairs.push_back(std::move(p));
    }
  }
  if (!bad.empty()) {
    throw DataError(path + ": malformed lines: " + join_lines(bad));
  }
  if (pairs.empty()) throw DataError(path + ": no pairs found");
  return pairs;
}

void save_pairs(const std::string& path, std::span<const LabeledPair> pairs,
                PairFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& p : pairs) {
    if (format == PairFormat::Tsv) {
      auto clean = [&](const std::string& t) {
        if (t.find('\t') != std::string::npos || t.find('\n') != std::string::npos) {
          throw DataError("save_pairs: text contains tab or newline, use jsonl");
        }
        return t;
      };
      out << clean(p.text1) << '\t' << clean(p.text2) << '\t' << format_double(p.label) << '\n';
    } else {
      Json j{{"text1", p.text1}, {"text2", p.text2}, {"label", p.label}};
      if (!p.subset.empty()) j["subset"] = p.subset;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double failed");
  return std::string(buf, end);
}

std::string normalize_text(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  return out;
}

std::vector<IssueRecord> load_issue_dump(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<IssueRecord> records;
  std::vector<std::size_t> bad;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("number") || !j["number"].is_number_integer()) {
      bad.push_back(line_no);
      continue;
    }
    IssueRecord r;
    r.repo = j.value("repo", std::string());
    r.number = j["number"].get<std::int64_t>();
    r.title = j.value("title", std::string());
    r.body = j.value("body", std::string());
    if (j.contains("comments")) {
      if (!j["comments"].is_array()) {
        bad.push_back(line_no);
        continue;
      }
      bool ok = true;
      for (const auto& c : j["comments"]) {
        if (!c.is_string()) {
          ok = false;
          break;
        }
        r.comments.push_back(c.get<std::string>());
      }
      if (!ok) {
        bad.push_back(line_no);
        continue;
      }
    }
    records.push_back(std::move(r));
  }
  if (!bad.empty()) throw DataError(path + ": malformed lines: " + join_lines(bad));
  return records;
}

IssuePairing pair_issues(std::span<const IssueRecord> records, std::uint64_t seed,
                         double negative_ratio) {
  if (negative_ratio < 0.0) throw std::invalid_argument("pair_issues: negative_ratio < 0");
  std::map<std::pair<std::string, std::int64_t>, std::size_t> by_number;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_number[{records[i].repo, records[i].number}] = i;
  }

  static const std::regex dup_re("duplicate of #([0-9]+)", std::regex::icase);
  IssuePairing out;
  std::set<std::pair<std::size_t, std::size_t>> seen;  // canonical (lo, hi) index pairs
  std::vector<std::pair<std::size_t, std::size_t>> positive_pairs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const std::string& comment : records[i].comments) {
      auto begin = std::sregex_iterator(comment.begin(), comment.end(), dup_re);
      for (auto it = begin; it != std::sregex_iterator(); ++it) {
        std::int64_t target = std::strtoll((*it)[1].str().c_str(), nullptr, 10);
        auto found = by_number.find({records[i].repo, target});
        if (found == by_number.end() || found->second == i) {
          ++out.dangling;
          continue;
        }
        std::size_t a = std::min(i, found->second);
        std::size_t b = std::max(i, found->second);
        if (seen.insert({a, b}).second) positive_pairs.push_back({a, b});
      }
    }
  }

  auto issue_text = [&](std::size_t idx) {
    return records[idx].title + "\n" + records[idx].body;
  };
  std::vector<bool> in_positive(records.size(), false);
  for (auto [a, b] : positive_pairs) {
    out.pairs.push_back({issue_text(a), issue_text(b), 1.0, ""});
    in_positive[a] = in_positive[b] = true;
  }
  out.positives = positive_pairs.size();

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!in_positive[i]) rest.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(rest);
  std::size_t target = static_cast<std::size_t>(std::llround(negative_ratio * double(out.positives)));
  for (std::size_t i = 0; i + 1 < rest.size() && out.negatives < target; i += 2) {
    out.pairs.push_back({issue_text(rest[i]), issue_text(rest[i + 1]), 0.0, ""});
    ++out.negatives;
  }
  return out;
}

DatasetStats dataset_stats(std::span<const LabeledPair> pairs,
                           const std::function<std::size_t(const std::string&)>& token_len,
                           std::size_t long_threshold) {
  if (pairs.empty()) throw DataError("dataset_stats: empty dataset");
  DatasetStats s;
  s.total = pairs.size();
  s.long_threshold = long_threshold;
  std::vector<std::size_t> lengths;
  lengths.reserve(pairs.size() * 2);
  std::size_t long_count = 0;
  for (const auto& p : pairs) {
    if (p.label >= 0.5) {
      ++s.positives;
    } else {
      ++s.negatives;
    }
    for (const std::string* t : {&p.text1, &p.text2}) {
      std::size_t len = token_len(*t);
      lengths.push_back(len);
      if (len > long_threshold) ++long_count;
    }
  }
  s.long_proportion = static_cast<double>(long_count) / static_cast<double>(lengths.size());
  std::sort(lengths.begin(), lengths.end());
  for (double q : {0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0}) {
    std::size_t idx = q == 0.0 ? 0
                               : static_cast<std::size_t>(
                                     std::ceil(q * double(lengths.size()))) - 1;
    idx = std::min(idx, lengths.size() - 1);
    s.length_quantiles.push_back({q, lengths[idx]});
  }
  return s;
}

NliRelation nli_relation_from_string(const std::string& name) {
  if (name == "entailment") return NliRelation::Entailment;
  if (name == "contradiction") return NliRelation::Contradiction;
  if (name == "neutral") return NliRelation::Neutral;
  throw DataError("unknown NLI relation: " + name);
}

std::optional<LabeledPair> nli_to_pair(std::string premise, std::string hypothesis,
                                       NliRelation relation) {
  switch (relation) {
    case NliRelation::Entailment:
      return LabeledPair{std::move(premise), std::move(hypothesis), 1.0, ""};
    case NliRelation::Contradiction:
      return LabeledPair{std::move(premise), std::move(hypothesis), 0.0, ""};
    case NliRelation::Neutral:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace angle
