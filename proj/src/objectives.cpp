#include "angle/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "angle/errors.hpp"

namespace angle {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kMaskedScore = -1e9;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double sum_squares(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

// sqrt(sum(x^2) + floor) as a graph node; rejects exactly zero-norm input.
Tensor row_norm(Graph& g, Tensor x, const char* who, std::size_t row) {
  if (sum_squares(x.values()) == 0.0) {
    std::string where = row == npos ? "" : " at row " + std::to_string(row);
    throw NumericError(std::string(who) + ": zero-norm input" + where);
  }
  Tensor sq = g.sum(g.mul(x, x), 0);
  return g.sqrt(g.add_scalar(sq, kNormFloor));
}

Tensor row_of(Graph& g, Tensor reps, std::size_t row) {
  std::size_t d = reps.shape()[1];
  return g.reshape(g.select_rows(reps, {row}), {d});
}

// (k,) tensor from k scalar-shaped tensors.
Tensor stack_scalars(Graph& g, const std::vector<Tensor>& xs) {
  Tensor out = g.reshape(xs[0], {1});
  for (std::size_t i = 1; i < xs.size(); ++i) {
    out = g.concat_cols(out, g.reshape(xs[i], {1}));
  }
  return out;
}

// Pre-|.| value of angle_difference, exposed so the probe can detect the kink.
Tensor angle_ratio(Graph& g, Tensor x, Tensor y) {
  require(x.shape().size() == 1 && y.shape().size() == 1 && x.shape() == y.shape(),
          "angle_difference: rank-1 rows of equal shape required, got " +
              shape_str(x.shape()) + " and " + shape_str(y.shape()));
  require(x.shape()[0] % 2 == 0,
          "angle_difference: even dimension required, got " + shape_str(x.shape()));

  auto [a, b] = g.split_half(x);
  auto [c, d] = g.split_half(y);
  Tensor re = g.add(g.mul(a, c), g.mul(b, d));
  Tensor im = g.sub(g.mul(b, c), g.mul(a, d));
  Tensor num = g.add(g.sum(re, 0), g.sum(im, 0));
  Tensor nx = row_norm(g, x, "angle_difference", npos);
  Tensor ny = row_norm(g, y, "angle_difference", npos);
  return g.div(num, g.mul(nx, ny));
}

}  // namespace

void LossConfig::validate() const {
  if (tau_cos <= 0.0 || tau_ibn <= 0.0 || tau_angle <= 0.0) {
    throw ConfigError("loss: temperatures must be > 0");
  }
  if (w1 < 0.0 || w2 < 0.0 || w3 < 0.0) {
    throw ConfigError("loss: weights must be >= 0");
  }
  if (w1 == 0.0 && w2 == 0.0 && w3 == 0.0) {
    throw ConfigError("loss: at least one weight must be > 0");
  }
}

void ScoredBatch::validate() const {
  require(reps.valid() && reps.shape().size() == 2,
          "batch: reps must be a (rows, d) tensor");
  std::size_t rows = reps.shape()[0];
  require(labels.size() == pair_rows.size(), "batch: labels/pair_rows size mismatch");
  require(duplicate_group.size() == rows, "batch: duplicate_group must cover every row");
  for (const auto& p : pair_rows) {
    require(p[0] < rows && p[1] < rows, "batch: pair row out of range");
  }
  for (const auto& a : anchors) {
    require(a[0] < rows && a[1] < rows, "batch: anchor row out of range");
  }
}

Tensor cosine_similarity(Graph& g, Tensor x, Tensor y, std::size_t row_x,
                         std::size_t row_y) {
  require(x.shape().size() == 1 && y.shape().size() == 1 && x.shape() == y.shape(),
          "cosine_similarity: rank-1 rows of equal shape required, got " +
              shape_str(x.shape()) + " and " + shape_str(y.shape()));
  Tensor nx = row_norm(g, x, "cosine_similarity", row_x);
  Tensor ny = row_norm(g, y, "cosine_similarity", row_y);
  Tensor dot = g.sum(g.mul(x, y), 0);
  return g.div(dot, g.mul(nx, ny));
}

Tensor pairwise_rank_loss(Graph& g, Tensor scores, std::span<const double> labels,
                          double tau) {
  require(tau > 0.0, "pairwise_rank_loss: tau must be > 0");
  require(scores.shape().size() == 1, "pairwise_rank_loss: scores must be rank-1, got " +
                                          shape_str(scores.shape()));
  std::size_t n = scores.shape()[0];
  require(labels.size() == n, "pairwise_rank_loss: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " scores");

  // Strictly ordered label pairs only; ties are excluded.
  std::vector<std::size_t> hi, lo;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[i] > labels[j]) {
        hi.push_back(i);
        lo.push_back(j);
      }
    }
  }
  if (hi.empty()) return g.scalar(0.0);

  Tensor s_hi = g.select_rows(scores, std::move(hi));
  Tensor s_lo = g.select_rows(scores, std::move(lo));
  Tensor diffs = g.scale(g.sub(s_lo, s_hi), 1.0 / tau);
  Tensor with_zero = g.concat_cols(g.constant({1}, {0.0}), diffs);
  return g.logsumexp(with_zero, 0);
}

Tensor cosine_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg) {
  batch.validate();
  require(!batch.pair_rows.empty(), "cosine_objective: batch has no labeled pairs");
  std::vector<Tensor> scores;
  scores.reserve(batch.pair_rows.size());
  for (const auto& p : batch.pair_rows) {
    Tensor x = row_of(g, batch.reps, p[0]);
    Tensor y = row_of(g, batch.reps, p[1]);
    scores.push_back(cosine_similarity(g, x, y, p[0], p[1]));
  }
  return pairwise_rank_loss(g, stack_scalars(g, scores), batch.labels, cfg.tau_cos);
}

Tensor angle_difference(Graph& g, Tensor x, Tensor y) {
  return g.abs(angle_ratio(g, x, y));
}

Tensor angle_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg) {
  batch.validate();
  require(!batch.pair_rows.empty(), "angle_objective: batch has no labeled pairs");
  std::vector<Tensor> scores;
  scores.reserve(batch.pair_rows.size());
  for (const auto& p : batch.pair_rows) {
    Tensor x = row_of(g, batch.reps, p[0]);
    Tensor y = row_of(g, batch.reps, p[1]);
    // Negated: a smaller angle difference ranks as more similar.
    scores.push_back(g.scale(angle_difference(g, x, y), -1.0));
  }
  return pairwise_rank_loss(g, stack_scalars(g, scores), batch.labels, cfg.tau_angle);
}

Tensor ibn_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg) {
  batch.validate();
  require(!batch.anchors.empty(), "ibn_objective: batch has no anchors");
  std::size_t k = batch.anchors.size();
  std::size_t d = batch.reps.shape()[1];

  std::vector<std::size_t> anchor_rows(k), positive_rows(k);
  for (std::size_t i = 0; i < k; ++i) {
    anchor_rows[i] = batch.anchors[i][0];
    positive_rows[i] = batch.anchors[i][1];
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto check_row = [&](std::size_t r) {
      const auto& vals = batch.reps.values();
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += vals[r * d + j] * vals[r * d + j];
      if (acc == 0.0) {
        throw NumericError("ibn_objective: zero-norm input at row " + std::to_string(r));
      }
    };
    check_row(anchor_rows[i]);
    check_row(positive_rows[i]);
  }

  auto normalized = [&](const std::vector<std::size_t>& rows) {
    Tensor sel = g.select_rows(batch.reps, rows);
    Tensor norms = g.sqrt(g.add_scalar(g.sum(g.mul(sel, sel), 1), kNormFloor));
    return g.div(sel, g.broadcast_col(norms, d));
  };
  Tensor a_hat = normalized(anchor_rows);
  Tensor p_hat = normalized(positive_rows);

  // scores[i][j] = cos(anchor_i, positive_j) / tau, with excluded denominator
  // entries pushed to -1e9 so their exp() underflows to exactly zero. The
  // diagonal (an anchor's own positive) is never masked.
  Tensor scores = g.scale(g.matmul(a_hat, g.transpose(p_hat)), 1.0 / cfg.tau_ibn);
  std::vector<double> mask(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t own_group = batch.duplicate_group[positive_rows[i]];
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i && batch.duplicate_group[positive_rows[j]] == own_group) {
        mask[i * k + j] = kMaskedScore;
      }
    }
  }
  Tensor masked = g.add(scores, g.constant({k, k}, std::move(mask)));

  Tensor denom = g.logsumexp(masked, 1);  // (k,)
  std::vector<double> eye(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
  Tensor numer = g.sum(g.mul(masked, g.constant({k, k}, std::move(eye))), 1);
  return g.sum(g.sub(denom, numer), 0);
}

Tensor combined_objective(Graph& g, const ScoredBatch& batch, const LossConfig& cfg) {
  cfg.validate();
  batch.validate();
  std::vector<Tensor> terms;
  if (cfg.w1 > 0.0) terms.push_back(g.scale(cosine_objective(g, batch, cfg), cfg.w1));
  if (cfg.w2 > 0.0 && !batch.anchors.empty()) {
    terms.push_back(g.scale(ibn_objective(g, batch, cfg), cfg.w2));
  }
  if (cfg.w3 > 0.0) terms.push_back(g.scale(angle_objective(g, batch, cfg), cfg.w3));
  if (terms.empty()) return g.scalar(0.0);
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  return total;
}

ProbeResult saturation_gradient_probe(double theta, ProbeObjective objective) {
  Graph g;
  Tensor th = g.leaf({}, {theta}, true);
  Tensor y = g.concat_cols(g.reshape(g.cos(th), {1}), g.reshape(g.sin(th), {1}));
  Tensor x = g.constant({2}, {1.0, 0.0});

  ProbeResult out;
  Tensor score;
  if (objective == ProbeObjective::Cosine) {
    score = cosine_similarity(g, x, y);
  } else {
    Tensor ratio = angle_ratio(g, x, y);
    out.at_abs_kink = ratio.value() == 0.0;
    score = g.abs(ratio);
  }
  g.backward(score);
  out.derivative_magnitude = std::abs(th.grad()[0]);
  return out;
}

}  // namespace angle
