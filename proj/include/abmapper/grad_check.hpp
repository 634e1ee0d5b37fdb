#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "abmapper/tensor.hpp"

namespace abm::nn {

/// One finite-difference check: a scalar loss recomputable from the current
/// contents of the `wrt` tensors, plus the analytic gradients for each.
/// The loss closure must read the tensors through the stored pointers so the
/// checker can perturb them in place.
struct FdProblem {
  std::string name;
  std::vector<Tensor*> wrt;
  std::function<double()> loss;
  std::function<std::vector<Tensor>()> analytic;
};

// Central differences against the analytic gradients. Relative error is
// norm-based per tensor: |a - fd| / max(|a| + |fd|, 1e-8); returns the max
// over all wrt tensors.
double fd_max_rel_err(FdProblem& problem, float eps);

struct BlockReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  bool all_pass() const {
    for (const auto& b : blocks)
      if (!b.pass) return false;
    return !blocks.empty();
  }
};

// Randomized per-layer checks (dense, conv3x3, relu, softmax, birecurrent,
// attention), `trials` randomized shapes each. The end-to-end network checks
// are appended by the models layer; see models::append_network_gradchecks.
GradCheckReport run_layer_gradchecks(int trials, float eps, double tol, uint64_t seed,
                                     std::ostream* log);

}  // namespace abm::nn
