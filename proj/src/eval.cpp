#include "angle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "angle/errors.hpp"
#include "angle/objectives.hpp"

namespace angle {

namespace {

constexpr double kNormFloor = 1e-12;

void require_finite(std::span<const double> v, const char* who) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(who) + ": non-finite input");
  }
}

// Average 1-based ranks; runs of equal values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double cosine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw NumericError("cosine: inputs must be non-empty and equally sized");
  }
  double dot = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    sx += x[i] * x[i];
    sy += y[i] * y[i];
  }
  if (sx == 0.0 || sy == 0.0) throw NumericError("cosine: zero-norm input");
  return dot / (std::sqrt(sx + kNormFloor) * std::sqrt(sy + kNormFloor));
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("rank correlation: inputs differ in length");
  }
  if (x.size() < 2) throw NumericError("rank correlation: need at least two observations");
  require_finite(x, "rank correlation");
  require_finite(y, "rank correlation");

  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  // ranks always sum to n(n+1)/2, ties or not
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  if (vx == 0.0 || vy == 0.0) {
    throw NumericError("rank correlation: undefined for constant input");
  }
  return cov / std::sqrt(vx * vy);
}

EvalReport evaluate_sts(std::span<const NamedDataset> datasets, const Embedder& embed) {
  if (datasets.empty()) throw DataError("no evaluation datasets");
  if (!embed) throw ConfigError("evaluate_sts: no embedder supplied");

  EvalReport report;
  std::vector<double> all_gold;
  std::vector<double> all_sims;
  for (const NamedDataset& ds : datasets) {
    if (ds.pairs.empty()) throw DataError("evaluation dataset '" + ds.name + "' is empty");
    DatasetReport r;
    r.name = ds.name;
    r.pairs = ds.pairs.size();
    r.gold.reserve(ds.pairs.size());
    r.sims.reserve(ds.pairs.size());
    for (const LabeledPair& p : ds.pairs) {
      const std::vector<double> ex = embed(p.text1);
      const std::vector<double> ey = embed(p.text2);
      r.gold.push_back(p.label);
      r.sims.push_back(cosine(ex, ey));
    }
    r.spearman_x100 = 100.0 * spearman(r.sims, r.gold);
    all_gold.insert(all_gold.end(), r.gold.begin(), r.gold.end());
    all_sims.insert(all_sims.end(), r.sims.begin(), r.sims.end());
    report.per_dataset.push_back(std::move(r));
  }
  report.spearman_all_x100 = 100.0 * spearman(all_sims, all_gold);
  return report;
}

Histogram density_histogram(std::span<const double> values, double lo, double hi,
                            std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram: need at least one bin");
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw ConfigError("histogram: range must satisfy lo < hi");
  }
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  edges[0] = lo;
  edges[bins] = hi;

  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (!std::isfinite(v) || v < lo || v > hi) {
      throw NumericError("histogram: value " + format_double(v) + " outside [" +
                         format_double(lo) + ", " + format_double(hi) + "]");
    }
    // largest edge not above v; hi itself stays in the last bin
    std::size_t bin = 0;
    for (std::size_t i = bins - 1; i > 0; --i) {
      if (v >= edges[i]) {
        bin = i;
        break;
      }
    }
    h.counts[bin] += 1;
  }
  return h;
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open histogram output: " + path);
  out << "bin_lo,bin_hi,count\n";
  const std::size_t bins = h.counts.size();
  for (std::size_t i = 0; i < bins; ++i) {
    const double a =
        h.lo + (h.hi - h.lo) * static_cast<double>(i) / static_cast<double>(bins);
    const double b = i + 1 == bins
                         ? h.hi
                         : h.lo + (h.hi - h.lo) * static_cast<double>(i + 1) /
                                      static_cast<double>(bins);
    out << format_double(a) << ',' << format_double(b) << ',' << h.counts[i] << '\n';
  }
  if (!out.flush()) throw DataError("failed while writing histogram: " + path);
}

namespace {

std::vector<std::size_t> topk_impl(const std::vector<std::vector<double>>& corpus,
                                   std::span<const double> query, std::size_t k,
                                   std::size_t exclude) {
  std::vector<double> score(corpus.size(), 0.0);
  std::vector<std::size_t> idx;
  idx.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (i == exclude) continue;
    score[i] = cosine(corpus[i], query);
    idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

std::vector<std::size_t> retrieve_topk(const std::vector<std::vector<double>>& corpus,
                                       std::span<const double> query, std::size_t k) {
  if (corpus.empty()) throw DataError("retrieval corpus is empty");
  return topk_impl(corpus, query, k, npos);
}

double strict_accuracy(const std::vector<std::vector<double>>& corpus,
                       std::span<const RetrievalCase> cases) {
  if (cases.empty()) throw DataError("no retrieval cases");
  std::size_t hits = 0;
  for (const RetrievalCase& c : cases) {
    if (c.query >= corpus.size()) throw DataError("retrieval case: query row out of range");
    if (c.relevant.empty()) throw DataError("retrieval case: no relevant rows");
    std::vector<std::size_t> got =
        topk_impl(corpus, corpus[c.query], c.relevant.size(), c.query);
    std::vector<std::size_t> want(c.relevant.begin(), c.relevant.end());
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    hits += got == want ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

std::vector<RetrievalCase> group_retrieval_cases(std::span<const std::size_t> group_ids) {
  std::unordered_map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < group_ids.size(); ++i) {
    members[group_ids[i]].push_back(i);
  }
  std::vector<RetrievalCase> cases;
  for (std::size_t i = 0; i < group_ids.size(); ++i) {
    const std::vector<std::size_t>& g = members[group_ids[i]];
    if (g.size() < 2) continue;
    RetrievalCase c;
    c.query = i;
    for (std::size_t m : g) {
      if (m != i) c.relevant.push_back(m);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<SaturationRow> saturation_report(std::size_t points) {
  if (points < 2) throw ConfigError("saturation sweep: need at least two points");
  const double lo = 0.005;
  const double hi = std::numbers::pi - 0.005;
  std::vector<SaturationRow> rows;
  rows.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    SaturationRow r;
    r.theta = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    r.cos_grad =
        saturation_gradient_probe(r.theta, ProbeObjective::Cosine).derivative_magnitude;
    r.angle_grad =
        saturation_gradient_probe(r.theta, ProbeObjective::Angle).derivative_magnitude;
    rows.push_back(r);
  }
  return rows;
}

void write_saturation_csv(std::span<const SaturationRow> rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open saturation output: " + path);
  out << "theta,cos_grad,angle_grad\n";
  for (const SaturationRow& r : rows) {
    out << format_double(r.theta) << ',' << format_double(r.cos_grad) << ','
        << format_double(r.angle_grad) << '\n';
  }
  if (!out.flush()) throw DataError("failed while writing saturation sweep: " + path);
}

}  // namespace angle
