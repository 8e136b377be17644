#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "angle/autodiff.hpp"

namespace angle {

// Temperatures and mixing weights for the three objective terms:
// loss = w1 * cosine ranking + w2 * in-batch negatives + w3 * angle ranking.
// A term with weight 0 is never evaluated.
struct LossConfig {
  double tau_cos = 0.05;
  double tau_ibn = 0.05;
  double tau_angle = 1.0;
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;

  void validate() const;
};

// A batch of encoded texts plus the supervision structure over its rows.
// reps is (n_rows, d) inside some live Graph. pair_rows/labels run parallel
// over labeled pairs; anchors lists (anchor_row, positive_row) for pairs that
// supply in-batch positives; duplicate_group partitions rows by identical
// source text so textual duplicates can be masked out of softmax denominators.
struct ScoredBatch {
  Tensor reps;
  std::vector<double> labels;
  std::vector<std::array<std::size_t, 2>> pair_rows;
  std::vector<std::array<std::size_t, 2>> anchors;
  std::vector<std::size_t> duplicate_group;

  void validate() const;
};

// cos(x, y) over rank-1 rows. Norms carry a 1e-12 floor inside the sqrt so the
// gradient stays finite near zero; exactly zero-norm input is rejected (the
// optional row ids only label the error message).
Tensor cosine_similarity(Graph& g, Tensor x, Tensor y, std::size_t row_x = npos,
                         std::size_t row_y = npos);

// log(1 + sum over ordered pairs with label_hi > label_lo of
// exp((score_lo - score_hi) / tau)), via logsumexp over {0} and the scaled
// differences. Ties contribute nothing; no qualifying pair -> exactly 0.
Tensor pairwise_rank_loss(Graph& g, Tensor scores, std::span<const double> labels,
                          double tau);

Tensor cosine_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg);

// Complex-space angle difference between rows x and y, treating the first
// half of each vector as real parts and the second half as imaginary parts:
//   z_k = a_k + i b_k,  w_k = c_k + i d_k
//   z_k / w_k ~ re_k + i im_k with re_k = a_k c_k + b_k d_k,
//                               im_k = b_k c_k - a_k d_k
// aggregated as |sum_k re_k + sum_k im_k| / (|x| * |y|). Identical rows give
// exactly 1; for 2-d rows this is sqrt(2)*|cos(theta + pi/4)| in the rotation
// angle theta between them.
Tensor angle_difference(Graph& g, Tensor x, Tensor y);

// Ranking loss over angle differences. Scores enter the shared kernel negated
// (smaller angle difference = more similar), so a qualifying ordered pair
// contributes exp((delta_hi - delta_lo) / tau_angle).
Tensor angle_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg);

// In-batch-negative softmax over anchor/positive cosines. The denominator for
// anchor i ranges over every anchor's positive except other positives that
// share a duplicate group with anchor i's own positive.
Tensor ibn_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg);

// w1 * cosine + w2 * ibn + w3 * angle. Zero-weight terms are skipped entirely;
// an anchor-less batch contributes an empty (zero) ibn sum.
Tensor combined_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg);

enum class ProbeObjective { Cosine, Angle };

struct ProbeResult {
  double derivative_magnitude = 0.0;
  // True when the angle objective's |.| sits exactly at its kink, where the
  // subgradient convention reports 0.
  bool at_abs_kink = false;
};

// |d score / d theta| for the pair x = (1, 0), y = (cos theta, sin theta),
// computed through the autodiff graph with theta as the leaf.
ProbeResult saturation_gradient_probe(double theta, ProbeObjective objective);

}  // namespace angle
