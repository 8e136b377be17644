#include "doctest.h"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "angle/autodiff.hpp"
#include "angle/errors.hpp"
#include "angle/objectives.hpp"
#include "angle/rng.hpp"

using namespace angle;

namespace {

Tensor reps_from(Graph& g, const std::vector<std::vector<double>>& rows,
                 bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return g.leaf({rows.size(), rows[0].size()}, flat, requires_grad);
}

ScoredBatch pair_batch(Tensor reps, std::vector<double> labels, bool with_anchors) {
  ScoredBatch b;
  b.reps = reps;
  b.labels = std::move(labels);
  const std::size_t rows = reps.shape()[0];
  for (std::size_t k = 0; 2 * k + 1 < rows; ++k) {
    b.pair_rows.push_back({2 * k, 2 * k + 1});
    if (with_anchors && b.labels[k] == 1.0) b.anchors.push_back({2 * k, 2 * k + 1});
  }
  b.duplicate_group.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) b.duplicate_group[r] = r;
  return b;
}

// y vector at rotation angle theta from (1, 0)
std::vector<double> on_circle(double theta) { return {std::cos(theta), std::sin(theta)}; }

}  // namespace

TEST_CASE("pairwise_rank_loss matches the two-score closed form") {
  Graph g;
  Tensor scores = g.leaf({2}, {0.9, 0.1});
  const std::vector<double> labels = {1.0, 0.0};
  const double got = pairwise_rank_loss(g, scores, labels, 1.0).value();
  // one qualifying pair: exp((0.1 - 0.9) / 1)
  CHECK(got == doctest::Approx(std::log1p(std::exp(-0.8))).epsilon(1e-12));
}

TEST_CASE("pairwise_rank_loss matches a brute-force double loop") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 71);
    const std::size_t n = 2 + rng.uniform_index(5);
    std::vector<double> scores(n);
    std::vector<double> labels(n);
    const double grades[3] = {0.0, 0.5, 1.0};
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-1.0, 1.0);
      labels[i] = grades[rng.uniform_index(3)];
    }
    for (double tau : {1.0, 0.05}) {
      double sum = 0.0;
      for (std::size_t hi = 0; hi < n; ++hi) {
        for (std::size_t lo = 0; lo < n; ++lo) {
          if (labels[hi] > labels[lo]) sum += std::exp((scores[lo] - scores[hi]) / tau);
        }
      }
      const double expected = std::log1p(sum);
      Graph g;
      const double got = pairwise_rank_loss(g, g.leaf({n}, scores), labels, tau).value();
      CHECK(got == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("pairwise_rank_loss with no qualifying pair is exactly zero with zero gradient") {
  Graph g;
  Tensor scores = g.leaf({3}, {0.5, -0.2, 0.9}, true);
  const std::vector<double> labels = {0.7, 0.7, 0.7};  // ties qualify nothing
  Tensor loss = pairwise_rank_loss(g, scores, labels, 0.05);
  CHECK(loss.value() == 0.0);
  g.backward(loss);
  CHECK(scores.grad() == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("cosine_similarity fixed geometry") {
  Graph g;
  Tensor x = g.leaf({2}, {3.0, 4.0});
  Tensor y = g.leaf({2}, {3.0, 4.0});
  CHECK(cosine_similarity(g, x, y).value() == doctest::Approx(1.0).epsilon(1e-12));

  Tensor e1 = g.leaf({2}, {1.0, 0.0});
  Tensor e2 = g.leaf({2}, {0.0, 1.0});
  CHECK(cosine_similarity(g, e1, e2).value() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor neg = g.leaf({2}, {-3.0, -4.0});
  CHECK(cosine_similarity(g, x, neg).value() == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cosine_similarity is invariant to positive rescaling") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 17);
    const std::size_t d = 2 + rng.uniform_index(7);
    std::vector<double> x(d), y(d);
    for (std::size_t i = 0; i < d; ++i) {
      // |v| >= 1 per coordinate keeps sum of squares >= 1, far above the floor
      x[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.0, 2.0);
      y[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.0, 2.0);
    }
    const double a = rng.uniform(0.75, 1.5);
    const double b = rng.uniform(0.75, 1.5);
    Graph g;
    const double base = cosine_similarity(g, g.leaf({d}, x), g.leaf({d}, y)).value();
    std::vector<double> xs = x, ys = y;
    for (double& v : xs) v *= a;
    for (double& v : ys) v *= b;
    const double scaled = cosine_similarity(g, g.leaf({d}, xs), g.leaf({d}, ys)).value();
    CHECK(std::abs(scaled - base) <= 1e-10);
  }
}

TEST_CASE("cosine_similarity rejects zero-norm rows with the row id") {
  Graph g;
  Tensor x = g.leaf({2}, {0.0, 0.0});
  Tensor y = g.leaf({2}, {1.0, 0.0});
  try {
    cosine_similarity(g, x, y, 3, 4);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("cosine_objective on an ideal and an inverted two-pair batch") {
  // pair 0: identical rows (cos 1), pair 1: orthogonal rows (cos 0)
  auto run = [](std::vector<double> labels) {
    Graph g;
    Tensor reps = reps_from(
        g, {{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
    ScoredBatch b = pair_batch(reps, std::move(labels), false);
    LossConfig cfg;  // tau_cos = 0.05
    return cosine_objective(g, b, cfg).value();
  };
  // correctly ordered: exp((0 - 1) / 0.05)
  CHECK(run({1.0, 0.0}) == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  // inverted: exp((1 - 0) / 0.05)
  CHECK(run({0.0, 1.0}) == doctest::Approx(std::log1p(std::exp(20.0))).epsilon(1e-12));
}

TEST_CASE("angle_difference fixed geometry") {
  Graph g;
  Tensor x = g.leaf({2}, {1.0, 0.0});
  CHECK(angle_difference(g, x, x).value() == doctest::Approx(1.0).epsilon(1e-9));

  Tensor y45 = g.leaf({2}, on_circle(std::numbers::pi / 4));
  CHECK(angle_difference(g, x, y45).value() == doctest::Approx(0.0).epsilon(1e-9));

  Tensor y135 = g.leaf({2}, on_circle(3 * std::numbers::pi / 4));
  CHECK(angle_difference(g, x, y135).value() ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("angle_difference of 2-d rotations follows sqrt(2)|cos(theta + pi/4)|") {
  Graph g;
  Tensor x = g.leaf({2}, {1.0, 0.0});
  for (int i = 0; i <= 16; ++i) {
    const double theta = -std::numbers::pi + 2 * std::numbers::pi * i / 16.0;
    Tensor y = g.leaf({2}, on_circle(theta));
    const double expected = std::sqrt(2.0) * std::abs(std::cos(theta + std::numbers::pi / 4));
    CHECK(angle_difference(g, x, y).value() == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("angle_difference matches a std::complex oracle on random rows") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed * 3 + 1);
    const std::size_t half = 2 + rng.uniform_index(4);
    std::vector<double> x(2 * half), y(2 * half);
    for (auto* v : {&x, &y}) {
      for (double& e : *v) {
        e = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.5, 3.0);
      }
    }
    std::complex<double> s{0.0, 0.0};
    double nx = 0.0, ny = 0.0;
    for (std::size_t k = 0; k < half; ++k) {
      const std::complex<double> z{x[k], x[half + k]};
      const std::complex<double> w{y[k], y[half + k]};
      s += z * std::conj(w);
      nx += std::norm(z);
      ny += std::norm(w);
    }
    const double expected = std::abs(s.real() + s.imag()) / std::sqrt(nx * ny);

    Graph g;
    const double got = angle_difference(g, g.leaf({2 * half}, x), g.leaf({2 * half}, y)).value();
    CHECK(got == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("angle_objective ranks by negated angle difference") {
  // choose rotations giving angle differences 0.2 and 0.9 exactly (up to fp)
  const double theta_a = std::acos(0.2 / std::sqrt(2.0)) - std::numbers::pi / 4;
  const double theta_b = std::acos(0.9 / std::sqrt(2.0)) - std::numbers::pi / 4;
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.0}, on_circle(theta_a),
                              {1.0, 0.0}, on_circle(theta_b)});
  ScoredBatch b = pair_batch(reps, {1.0, 0.0}, false);
  LossConfig cfg;
  cfg.tau_angle = 1.0;
  // scores are negated differences: exp(((-0.9) - (-0.2)) / 1) reversed by label
  // order gives exp((0.2 - 0.9)) ... the qualifying pair contributes exp(-0.7)
  const double got = angle_objective(g, b, cfg).value();
  CHECK(got == doctest::Approx(std::log1p(std::exp(-0.7))).epsilon(1e-9));
}

TEST_CASE("ibn_objective on two orthogonal positives") {
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}});
  ScoredBatch b = pair_batch(reps, {1.0, 1.0}, true);
  REQUIRE(b.anchors.size() == 2);

  LossConfig cfg;
  cfg.tau_ibn = 1.0;
  // each anchor: positive at cos 1, the other pair's positive at cos 0
  const double expected = 2.0 * std::log1p(std::exp(-1.0));
  CHECK(ibn_objective(g, b, cfg).value() == doctest::Approx(expected).epsilon(1e-9));

  // sharper temperature on a well-separated batch shrinks the loss
  LossConfig sharp;
  sharp.tau_ibn = 0.05;
  CHECK(ibn_objective(g, b, sharp).value() < ibn_objective(g, b, cfg).value());
}

TEST_CASE("ibn_objective masks same-group positives out of the denominator") {
  Graph g;
  // the two positives are duplicates of each other (same group), so each
  // anchor's denominator keeps only its own positive -> loss exactly 0
  Tensor reps = reps_from(g, {{1.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}, {0.8, 0.6}});
  ScoredBatch b = pair_batch(reps, {1.0, 1.0}, true);
  b.duplicate_group = {0, 1, 2, 1};
  LossConfig cfg;
  CHECK(ibn_objective(g, b, cfg).value() == 0.0);

  // identical batch without the shared group keeps the competing term
  ScoredBatch open = pair_batch(reps, {1.0, 1.0}, true);
  CHECK(ibn_objective(g, open, cfg).value() > 0.0);
}

TEST_CASE("ibn_objective requires anchors") {
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.0}, {1.0, 0.0}});
  ScoredBatch b = pair_batch(reps, {0.0}, true);  // label 0 -> no anchors
  LossConfig cfg;
  CHECK_THROWS_AS(ibn_objective(g, b, cfg), std::invalid_argument);
}

TEST_CASE("combined_objective is the weighted sum of its parts") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 200);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < 6; ++r) {
      std::vector<double> row(4);
      for (double& v : row) v = rng.uniform(-1.0, 1.0) + (rng.uniform() < 0.5 ? -1.1 : 1.1);
      rows.push_back(row);
    }
    const double grades[3] = {0.0, 0.5, 1.0};
    std::vector<double> labels(3);
    for (double& l : labels) l = grades[rng.uniform_index(3)];
    labels[0] = 1.0;  // guarantee at least one anchor

    LossConfig cfg;
    cfg.w1 = rng.uniform(0.1, 2.0);
    cfg.w2 = rng.uniform(0.1, 2.0);
    cfg.w3 = rng.uniform(0.1, 2.0);

    Graph g;
    Tensor reps = reps_from(g, rows);
    ScoredBatch b = pair_batch(reps, labels, true);
    const double combined = combined_objective(g, b, cfg).value();
    const double parts = cfg.w1 * cosine_objective(g, b, cfg).value() +
                         cfg.w2 * ibn_objective(g, b, cfg).value() +
                         cfg.w3 * angle_objective(g, b, cfg).value();
    CHECK(combined == doctest::Approx(parts).epsilon(1e-12));
  }
}

TEST_CASE("combined_objective skips zero-weight terms entirely") {
  // odd embedding width: angle_difference would reject it, so the only way
  // this passes is for the angle term to never be built
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.0, 0.0}, {0.9, 0.1, 0.0},
                              {0.0, 1.0, 0.0}, {0.1, 0.9, 0.2}});
  ScoredBatch b = pair_batch(reps, {1.0, 0.0}, true);
  LossConfig cfg;
  cfg.w3 = 0.0;
  CHECK_NOTHROW(combined_objective(g, b, cfg));
  LossConfig with_angle;
  CHECK_THROWS_AS(combined_objective(g, b, with_angle), std::invalid_argument);
}

TEST_CASE("combined_objective treats an anchor-less batch as a zero ibn term") {
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.2}, {0.9, 0.1}, {0.2, 1.0}, {0.1, 0.9}});
  ScoredBatch b = pair_batch(reps, {0.5, 0.0}, true);  // no label-1 pairs
  REQUIRE(b.anchors.empty());
  LossConfig cfg;
  const double combined = combined_objective(g, b, cfg).value();
  const double without_ibn = cfg.w1 * cosine_objective(g, b, cfg).value() +
                             cfg.w3 * angle_objective(g, b, cfg).value();
  CHECK(combined == doctest::Approx(without_ibn).epsilon(1e-12));
}

TEST_CASE("objective gradients pass finite differences on small random batches") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 909);
    const std::size_t pairs = 2 + rng.uniform_index(2);
    const std::size_t rows = 2 * pairs;
    const std::size_t d = 4;
    std::vector<double> flat(rows * d);
    for (double& v : flat) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.6, 1.6);
    std::vector<double> labels(pairs);
    const double grades[3] = {0.0, 0.5, 1.0};
    for (double& l : labels) l = grades[rng.uniform_index(3)];
    labels[0] = 1.0;

    auto build_batch = [&](Graph& g, Tensor reps) {
      ScoredBatch b;
      b.reps = reps;
      b.labels = labels;
      for (std::size_t k = 0; k < pairs; ++k) {
        b.pair_rows.push_back({2 * k, 2 * k + 1});
        if (labels[k] == 1.0) b.anchors.push_back({2 * k, 2 * k + 1});
      }
      b.duplicate_group.resize(rows);
      for (std::size_t r = 0; r < rows; ++r) b.duplicate_group[r] = r;
      return b;
    };

    LossConfig cfg;
    auto fn = [&](Graph& g, Tensor x) {
      return combined_objective(g, build_batch(g, x), cfg);
    };
    CHECK(finite_difference_check(fn, {rows, d}, flat, 1e-5) <= 1e-4);
  }
}

TEST_CASE("loss config validation") {
  LossConfig bad_tau;
  bad_tau.tau_ibn = 0.0;
  CHECK_THROWS_AS(bad_tau.validate(), ConfigError);

  LossConfig bad_weight;
  bad_weight.w1 = -0.1;
  CHECK_THROWS_AS(bad_weight.validate(), ConfigError);

  LossConfig all_zero;
  all_zero.w1 = all_zero.w2 = all_zero.w3 = 0.0;
  CHECK_THROWS_AS(all_zero.validate(), ConfigError);
}

TEST_CASE("scored batch validation") {
  Graph g;
  Tensor reps = reps_from(g, {{1.0, 0.0}, {0.0, 1.0}});
  ScoredBatch b = pair_batch(reps, {1.0}, false);
  CHECK_NOTHROW(b.validate());

  ScoredBatch short_groups = b;
  short_groups.duplicate_group.pop_back();
  CHECK_THROWS_AS(short_groups.validate(), std::invalid_argument);

  ScoredBatch bad_row = b;
  bad_row.pair_rows[0] = {0, 9};
  CHECK_THROWS_AS(bad_row.validate(), std::invalid_argument);

  ScoredBatch label_mismatch = b;
  label_mismatch.labels.push_back(0.5);
  CHECK_THROWS_AS(label_mismatch.validate(), std::invalid_argument);
}

TEST_CASE("saturation probe derivatives match the closed forms") {
  // cosine head: |d cos(theta)/d theta| = |sin(theta)|
  const ProbeResult mid = saturation_gradient_probe(std::numbers::pi / 2, ProbeObjective::Cosine);
  CHECK(mid.derivative_magnitude == doctest::Approx(1.0).epsilon(1e-12));

  const ProbeResult flat = saturation_gradient_probe(0.01, ProbeObjective::Cosine);
  CHECK(flat.derivative_magnitude == doctest::Approx(std::sin(0.01)).epsilon(1e-9));

  // angle head: |d sqrt(2) cos(theta + pi/4) / d theta| = |sin(theta) + cos(theta)|
  for (double theta : {0.01, 0.5, 1.3, 2.2, std::numbers::pi - 0.01}) {
    const ProbeResult r = saturation_gradient_probe(theta, ProbeObjective::Angle);
    CHECK(r.at_abs_kink == false);
    CHECK(r.derivative_magnitude ==
          doctest::Approx(std::abs(std::sin(theta) + std::cos(theta))).epsilon(1e-9));
  }
}
