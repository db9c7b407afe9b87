#pragma once
// Central finite-difference validation of the autodiff primitives.
//
// Each check rebuilds a small double-precision graph around randomly chosen
// coordinates and compares the analytic gradient with (f(x+h)-f(x-h))/2h.
// Inputs are sampled away from the kinks of relu/maxpool so the difference
// quotient is valid.

#include <functional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace csr {

struct GradCheck {
  std::string name;
  // Owned input tensors; every one is created as a needs-grad leaf.
  std::vector<Tensor<double>> inputs;
  // Builds the graph from the leaf vars and returns a scalar loss var.
  std::function<int(Tape<double>&, const std::vector<int>&)> build;
};

struct GradCheckRow {
  std::string name;
  int points = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double max_rel_err = 0.0;
  int total_points = 0;
  double seconds = 0.0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

// Evaluates one check at `points` random coordinates; returns max relative
// error between analytic and numeric derivative.
double run_grad_check(const GradCheck& check, Rng& rng, int points, double h = 1e-5);

// The standard suite: one check per primitive op (plus stride/reduction
// variants). Deterministic given the seed.
std::vector<GradCheck> standard_grad_checks(uint64_t seed);

// Runs an arbitrary list of checks with a shared point-sampling stream
// derived from the seed.
GradCheckReport run_grad_check_suite(const std::vector<GradCheck>& checks,
                                     uint64_t seed, int points_per_check = 10);

// Runs the full standard suite (10 points per check by default).
GradCheckReport run_standard_grad_checks(uint64_t seed, int points_per_check = 10);

}  // namespace csr
