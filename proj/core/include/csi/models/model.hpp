#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "csi/data/dataset.hpp"
#include "csi/grad/graph.hpp"
#include "csi/grad/optim.hpp"

namespace csi::models {

enum class Family { LargeCnn, LargeGru, TinyTcnHead, TinyGruHead };

const char* family_str(Family f);
Family family_from_str(const std::string& s);
bool is_tiny(Family f);

struct ModelSpec {
    Family family = Family::LargeCnn;
    data::Dims dims;
    int n_classes = 2;
    int width = 0;        // 0 = family default
    int latent_dim = 0;   // tiny families only, 0 = default
    std::string name = "model";

    int effective_width() const;
    int effective_latent() const;
};

// A classifier: spec + named parameter tensors + graph builders.
//
// Parameters live in shared storage referenced by every cached graph, so a
// single training writer and concurrent read-only evaluations see the same
// values. Movable, not copyable (clone() deep-copies parameters).
class Model {
public:
    Model(ModelSpec spec, std::vector<grad::NamedParam> params,
          std::vector<std::string> encoder_names);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelSpec& spec() const { return spec_; }
    long capacity() const;   // trainable parameter count

    const std::vector<grad::NamedParam>& parameters() const { return params_; }
    std::vector<grad::NamedParam> encoder_parameters() const;
    std::vector<grad::NamedParam> head_parameters() const;

    // Appends the model body to `g`, input node x of shape (B,A,K,T),
    // returns the logits node (B,C). Parameter nodes are created on first
    // use within that graph.
    grad::NodeId append_logits(grad::Graph& g, grad::NodeId x) const;

    // Cached graph: input "x":(B,A,K,T) -> logits (B,C) as output.
    const grad::Graph& logits_graph(int batch) const;

    struct LossGraph {
        const grad::Graph* graph;
        grad::NodeId logits;
        grad::NodeId ce_vec;   // per-sample CE (B)
        grad::NodeId loss;     // mean CE, scalar output
    };
    // Cached graph: inputs "x":(B,A,K,T), "y":(B,C) one-hot.
    LossGraph loss_graph(int batch) const;

    grad::Tensor logits(const grad::Tensor& x_batch) const;
    std::vector<int> predict(const std::vector<data::CsiSample>& samples, int batch = 64) const;

    Model clone(const std::string& new_name = "") const;

    // Deep snapshot / restore of parameter values.
    std::vector<grad::Tensor> snapshot() const;
    void restore(const std::vector<grad::Tensor>& snap);

private:
    ModelSpec spec_;
    std::vector<grad::NamedParam> params_;
    std::vector<std::string> encoder_names_;
    mutable std::mutex cache_mutex_;
    mutable std::map<int, std::unique_ptr<grad::Graph>> logits_cache_;
    mutable std::map<int, std::pair<std::unique_ptr<grad::Graph>, LossGraph>> loss_cache_;
};

// Builds an initialized model. He-uniform for conv/linear weights, uniform
// +-1/sqrt(H) for recurrent weights, zero biases; deterministic in `seed`.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Batch packing helpers shared by training and attacks.
grad::Tensor pack_batch(std::span<const data::CsiSample> samples);
grad::Tensor pack_batch_idx(const std::vector<data::CsiSample>& samples, std::span<const std::size_t> idx);
grad::Tensor pack_onehot(std::span<const int> labels, int n_classes);

} // namespace csi::models
