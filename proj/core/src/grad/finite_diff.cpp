#include "csi/grad/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "csi/error.hpp"

namespace csi::grad {

namespace {

double eval_scalar(const Graph& g, const std::map<std::string, Tensor>& inputs) {
    const Evaluation ev = g.evaluate(inputs);
    if (!ev.output().shape().empty()) throw ShapeError("finite_diff_check requires a scalar-output graph");
    return ev.output()[0];
}

} // namespace

FiniteDiffResult finite_diff_check(const Graph& graph,
                                   const std::map<std::string, Tensor>& inputs,
                                   const std::string& wrt,
                                   double epsilon,
                                   int probes,
                                   std::uint64_t probe_seed) {
    const auto named = graph.named_nodes();
    const auto it = named.find(wrt);
    if (it == named.end()) throw ShapeError("finite_diff_check: unknown name '" + wrt + "'");
    const Node& target = graph.node(it->second);

    Evaluation ev = graph.evaluate(inputs);
    if (!ev.output().shape().empty()) throw ShapeError("finite_diff_check requires a scalar-output graph");
    const Tensor analytic = ev.backward({wrt}).at(wrt);

    // Mutable copy of whichever tensor we are probing.
    const bool is_param = target.op == Op::Param;
    Tensor base = is_param ? *target.storage : inputs.at(wrt);

    std::vector<std::size_t> coords;
    if (probes > 0 && static_cast<std::size_t>(probes) < base.size()) {
        Rng rng(probe_seed);
        coords.reserve(static_cast<std::size_t>(probes));
        for (int i = 0; i < probes; ++i) coords.push_back(static_cast<std::size_t>(rng.uniform_index(base.size())));
    } else {
        coords.resize(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) coords[i] = i;
    }

    std::map<std::string, Tensor> bound = inputs;
    FiniteDiffResult result;
    for (const std::size_t i : coords) {
        const double saved = base[i];
        auto eval_at = [&](double v) {
            base[i] = v;
            double out;
            if (is_param) {
                *target.storage = base;
                out = eval_scalar(graph, bound);
            } else {
                bound[wrt] = base;
                out = eval_scalar(graph, bound);
            }
            return out;
        };
        const double fp = eval_at(saved + epsilon);
        const double fm = eval_at(saved - epsilon);
        base[i] = saved;
        if (is_param) {
            *target.storage = base;
        } else {
            bound[wrt] = base;
        }
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
        ++result.checked;
    }
    return result;
}

} // namespace csi::grad
