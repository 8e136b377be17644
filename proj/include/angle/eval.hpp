#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "angle/data.hpp"

namespace angle {

// Graph-free cosine with the same 1e-12 norm floor as the differentiable
// version; exactly zero vectors are rejected.
double cosine(std::span<const double> x, std::span<const double> y);

// Rank correlation with average ranks on ties. Constant input has no defined
// rank ordering and is rejected. Computed as cov / sqrt(vx * vy) in one sqrt,
// which reproduces the closed-form tie-free value bit for bit.
double spearman(std::span<const double> x, std::span<const double> y);

using Embedder = std::function<std::vector<double>(const std::string&)>;

struct NamedDataset {
  std::string name;
  std::vector<LabeledPair> pairs;
};

struct DatasetReport {
  std::string name;
  std::size_t pairs = 0;
  double spearman_x100 = 0.0;
  std::vector<double> gold;  // labels, dataset order
  std::vector<double> sims;  // model cosine per pair, same order
};

struct EvalReport {
  std::vector<DatasetReport> per_dataset;
  // Correlation over the concatenation of every dataset, not a mean of the
  // per-dataset scores.
  double spearman_all_x100 = 0.0;
};

EvalReport evaluate_sts(std::span<const NamedDataset> datasets, const Embedder& embed);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

// Equal-width bins over [lo, hi]. A value sitting exactly on an interior edge
// counts toward the higher bin; hi itself counts toward the last bin.
// Values outside [lo, hi] are rejected.
Histogram density_histogram(std::span<const double> values, double lo, double hi,
                            std::size_t bins);

void write_histogram_csv(const Histogram& h, const std::string& path);

// Indices of the k corpus rows most cosine-similar to the query, in
// descending score order; equal scores break toward the lower index.
// k is clamped to the corpus size.
std::vector<std::size_t> retrieve_topk(const std::vector<std::vector<double>>& corpus,
                                       std::span<const double> query, std::size_t k);

// One strict-retrieval unit: a corpus row queries for its co-duplicates.
struct RetrievalCase {
  std::size_t query = 0;
  std::vector<std::size_t> relevant;  // gold row ids, never containing query
};

// Fraction of cases whose top-|relevant| retrieval (query row excluded from
// the candidates) equals the relevant set exactly. Order within the top-k
// does not matter; one wrong member makes the whole case a miss.
double strict_accuracy(const std::vector<std::vector<double>>& corpus,
                       std::span<const RetrievalCase> cases);

// One case per member of every group with >= 2 members; singletons yield no
// case. group_ids[i] is row i's duplicate-group id.
std::vector<RetrievalCase> group_retrieval_cases(std::span<const std::size_t> group_ids);

struct SaturationRow {
  double theta = 0.0;
  double cos_grad = 0.0;    // |d cos(x, y(theta)) / d theta|
  double angle_grad = 0.0;  // |d angle-difference / d theta|
};

// Gradient magnitudes of both scoring heads on the unit-circle pair
// x = (1, 0), y = (cos theta, sin theta), swept over `points` thetas evenly
// spaced on [0.005, pi - 0.005].
std::vector<SaturationRow> saturation_report(std::size_t points);

void write_saturation_csv(std::span<const SaturationRow> rows, const std::string& path);

}  // namespace angle
