#pragma once

#include <map>
#include <string>
#include <vector>

#include "csi/grad/graph.hpp"
#include "csi/rng.hpp"

namespace csi::grad {

// Central-difference gradient check for a scalar-output graph.
//
// Perturbs coordinates of the tensor bound to `wrt` (an input or, via its
// name, a parameter) and compares (f(x+e)-f(x-e))/2e against backward().
// Relative error uses denominator max(|a|,|b|,1e-8). When `probes` > 0
// only that many randomly chosen coordinates are tested (for big graphs);
// 0 means every coordinate.
struct FiniteDiffResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

FiniteDiffResult finite_diff_check(const Graph& graph,
                                   const std::map<std::string, Tensor>& inputs,
                                   const std::string& wrt,
                                   double epsilon,
                                   int probes = 0,
                                   std::uint64_t probe_seed = 7);

} // namespace csi::grad
