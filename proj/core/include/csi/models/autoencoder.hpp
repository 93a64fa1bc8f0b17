#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "csi/data/dataset.hpp"
#include "csi/grad/graph.hpp"
#include "csi/grad/optim.hpp"
#include "csi/models/model.hpp"
#include "csi/models/train.hpp"

namespace csi::models {

struct AutoencoderSpec {
    data::Dims dims;
    int width = 16;
    int latent_dim = 8;
};

// Bottleneck autoencoder over the time axis: the dilated-conv encoder is
// the one reused by the tiny classifiers; the decoder upsamples back to
// the input length and is dropped after pretraining.
class Autoencoder {
public:
    Autoencoder(AutoencoderSpec spec, std::vector<grad::NamedParam> params,
                std::vector<std::string> encoder_names);
    Autoencoder(Autoencoder&&) = default;
    Autoencoder& operator=(Autoencoder&&) = default;
    Autoencoder(const Autoencoder&) = delete;
    Autoencoder& operator=(const Autoencoder&) = delete;

    const AutoencoderSpec& spec() const { return spec_; }
    const std::vector<grad::NamedParam>& parameters() const { return params_; }
    std::vector<grad::NamedParam> encoder_parameters() const;
    grad::Shape latent_shape() const;   // (latent_dim, T')

    struct ReconGraph {
        const grad::Graph* graph;
        grad::NodeId latent;
        grad::NodeId recon;
        grad::NodeId mse;          // plain reconstruction term
        grad::NodeId loss;         // mse + mask-weighted term, scalar output
    };
    // Inputs: "x":(B,A,K,T), "mask":(B,C,T) already carrying the focus
    // weight (zeros disable the term).
    ReconGraph recon_graph(int batch) const;

    struct ProbeGraph {
        const grad::Graph* graph;
        grad::NodeId latent;
        grad::NodeId probe;        // sum(v * z), scalar output
    };
    // Inputs: "x":(B,A,K,T), "v": latent-shaped batch (B,L,T').
    ProbeGraph probe_graph(int batch) const;

    std::vector<grad::Tensor> snapshot() const;
    void restore(const std::vector<grad::Tensor>& snap);

private:
    AutoencoderSpec spec_;
    std::vector<grad::NamedParam> params_;
    std::vector<std::string> encoder_names_;
    mutable std::mutex cache_mutex_;
    mutable std::map<int, std::pair<std::unique_ptr<grad::Graph>, ReconGraph>> recon_cache_;
    mutable std::map<int, std::pair<std::unique_ptr<grad::Graph>, ProbeGraph>> probe_cache_;
};

Autoencoder build_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed);

struct PretrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
};

// Mixed-loss pretraining: MSE + annealed mask-weighted MSE + contractive
// penalty lambda ||dz/dx||_F^2 (stochastic trace probe, applied every 4
// steps to half of each batch), Adam with gradient clipping.
PretrainHistory pretrain_autoencoder(Autoencoder& ae, const data::DatasetSplit& split,
                                     const TrainHyper& hyper);

// Exact per-batch contractive penalty value ||dz/dx||_F^2 estimated with
// `probes` random probes (or exactly, probing every latent coordinate,
// when probes == 0). Used by the trainer and by tests.
double contractive_penalty(const Autoencoder& ae, const grad::Tensor& x_batch,
                           int probes, std::uint64_t seed);

// Builds a tiny classifier whose encoder parameters are cloned from the
// pretrained autoencoder (the two heads of one seed share the same
// pretrained weights without aliasing them).
Model make_tiny_classifier(const Autoencoder& ae, Family head_family, int n_classes,
                           const std::string& name, std::uint64_t seed);

// Two-phase fine-tuning: phase A trains the head with the encoder frozen;
// phase B unfreezes everything with a lower encoder rate and
// reduce-on-plateau. Returns per-epoch stats; best validation parameters
// are restored.
TrainHistory finetune_head(Model& classifier, const data::DatasetSplit& split, const TrainHyper& hyper);

} // namespace csi::models
