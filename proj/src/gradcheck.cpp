#include "gradcheck.hpp"

#include <chrono>
#include <cmath>

namespace csr {

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so a 1e-5 perturbation cannot cross the
// relu kink.
Tensor<double> rand_tensor_no_zero(std::vector<int> shape, Rng& rng,
                                   double margin = 0.05) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(margin, 1.0);
    t[i] = rng.bernoulli(0.5) ? v : -v;
  }
  return t;
}

// Values whose pooling windows have a clear top-1 margin so argmax is stable
// under perturbation: distinct multiples of a coarse grid, shuffled.
Tensor<double> rand_tensor_distinct(std::vector<int> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  std::vector<double> vals(t.size());
  for (size_t i = 0; i < vals.size(); ++i)
    vals[i] = 0.01 * static_cast<double>(i) - 0.005 * static_cast<double>(vals.size());
  rng.shuffle(vals);
  for (size_t i = 0; i < t.size(); ++i) t[i] = vals[i];
  return t;
}

// loss = sum(out * W) for a fixed random weighting W, turning any-tensor
// outputs into a scalar that exercises every output coordinate.
int weighted_sum_loss(Tape<double>& t, int out, const Tensor<double>& weights) {
  int w = t.leaf(weights);
  return t.sum(t.mul(out, w));
}

}  // namespace

double run_grad_check(const GradCheck& check, Rng& rng, int points, double h) {
  // Analytic pass.
  std::vector<Tensor<double>> inputs = check.inputs;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<int> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in, true));
    int loss = check.build(tape, leaves);
    tape.backward(loss);
    for (int v : leaves) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    Tape<double> tape;
    std::vector<int> leaves;
    for (const auto& in : ins) leaves.push_back(tape.leaf(in, true));
    int loss = check.build(tape, leaves);
    return tape.value(loss)[0];
  };

  double max_rel = 0.0;
  for (int p = 0; p < points; ++p) {
    size_t which =
        static_cast<size_t>(rng.uniform_int(static_cast<int>(inputs.size())));
    if (inputs[which].size() == 0) continue;
    size_t coord =
        static_cast<size_t>(rng.uniform_int(static_cast<int>(inputs[which].size())));

    std::vector<Tensor<double>> plus = inputs;
    plus[which][coord] += h;
    std::vector<Tensor<double>> minus = inputs;
    minus[which][coord] -= h;
    double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
    double a = analytic[which][coord];
    double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

std::vector<GradCheck> standard_grad_checks(uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheck> checks;

  {
    GradCheck c{"matmul",
                {rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({3, 5}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.matmul(l[0], l[1]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"affine",
                {rand_tensor({2, 6}, rng), rand_tensor({6, 4}, rng),
                 rand_tensor({4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({2, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.affine(l[0], l[1], l[2]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"conv2d_s1",
                {rand_tensor({6, 7, 2}, rng), rand_tensor({3, 3, 2, 3}, rng),
                 rand_tensor({3}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({4, 5, 3}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.conv2d(l[0], l[1], l[2], 1, 1), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"conv2d_s2_nobias",
                {rand_tensor({7, 9, 2}, rng), rand_tensor({3, 3, 2, 4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({3, 4, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.conv2d(l[0], l[1], kNoVar, 2, 2), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"maxpool2d", {rand_tensor_distinct({6, 6, 2}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 3, 2}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.maxpool2d(l[0], 2, 2, 2, 2), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"relu", {rand_tensor_no_zero({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.relu(l[0]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"tanh", {rand_tensor({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.tanh_op(l[0]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"sigmoid", {rand_tensor({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.sigmoid(l[0]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"softmax", {rand_tensor({3, 5}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 5}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.softmax(l[0]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"concat_axis0",
                {rand_tensor({2, 3}, rng), rand_tensor({3, 3}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({5, 3}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.concat(l[0], l[1], 0), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"concat_axis1",
                {rand_tensor({2, 3}, rng), rand_tensor({2, 4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({2, 7}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.concat(l[0], l[1], 1), w);
    };
    checks.push_back(std::move(c));
  }
  {
    // Repeated index 3 checks gradient accumulation into shared rows.
    GradCheck c{"embedding_gather", {rand_tensor({6, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({4, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.embedding_gather(l[0], {0, 3, 5, 3}), w);
    };
    checks.push_back(std::move(c));
  }
  {
    // Fixed rng seed inside the build so the mask is identical on rebuilds.
    GradCheck c{"dropout", {rand_tensor({4, 5}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({4, 5}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      Rng mask_rng(12345);
      return weighted_sum_loss(t, t.dropout(l[0], 0.3, true, mask_rng), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"masked_cross_entropy_mean", {rand_tensor({4, 5}, rng)}, nullptr};
    c.build = [](Tape<double>& t, const std::vector<int>& l) {
      return t.masked_cross_entropy_with_logits(l[0], {1, 0, 4, 2}, {1, 1, 0, 1},
                                                Reduction::Mean);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"masked_cross_entropy_sum", {rand_tensor({4, 5}, rng)}, nullptr};
    c.build = [](Tape<double>& t, const std::vector<int>& l) {
      return t.masked_cross_entropy_with_logits(l[0], {2, 3, 1, 0}, {1, 0, 1, 1},
                                                Reduction::Sum);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"add", {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.add(l[0], l[1]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"mul", {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.mul(l[0], l[1]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"one_minus", {rand_tensor({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.one_minus(l[0]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"add_rowvec",
                {rand_tensor({3, 4}, rng), rand_tensor({1, 4}, rng)},
                nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.add_rowvec(l[0], l[1]), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"row", {rand_tensor({4, 5}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({1, 5}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.row(l[0], 2), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"reshape", {rand_tensor({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({2, 6}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.reshape(l[0], {2, 6}), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"scale", {rand_tensor({3, 4}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 4}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      return weighted_sum_loss(t, t.scale(l[0], 0.37), w);
    };
    checks.push_back(std::move(c));
  }
  {
    GradCheck c{"sum", {rand_tensor({3, 4}, rng)}, nullptr};
    c.build = [](Tape<double>& t, const std::vector<int>& l) { return t.sum(l[0]); };
    checks.push_back(std::move(c));
  }
  {
    // Fan-out: the same var feeds two branches; gradients must accumulate.
    GradCheck c{"fanout_reuse", {rand_tensor({3, 3}, rng)}, nullptr};
    Tensor<double> w = rand_tensor({3, 3}, rng);
    c.build = [w](Tape<double>& t, const std::vector<int>& l) {
      int a = t.tanh_op(l[0]);
      int b = t.add(t.sigmoid(l[0]), a);
      return weighted_sum_loss(t, t.mul(b, a), w);
    };
    checks.push_back(std::move(c));
  }
  return checks;
}

GradCheckReport run_grad_check_suite(const std::vector<GradCheck>& checks,
                                     uint64_t seed, int points_per_check) {
  auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  Rng point_rng(derive_seed(seed, 1, 0));
  for (const GradCheck& c : checks) {
    GradCheckRow row;
    row.name = c.name;
    row.points = points_per_check;
    row.max_rel_err = run_grad_check(c, point_rng, points_per_check);
    report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
    report.total_points += points_per_check;
    report.rows.push_back(std::move(row));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

GradCheckReport run_standard_grad_checks(uint64_t seed, int points_per_check) {
  return run_grad_check_suite(standard_grad_checks(seed), seed, points_per_check);
}

}  // namespace csr
