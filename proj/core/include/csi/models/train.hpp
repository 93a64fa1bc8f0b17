#pragma once

#include <cstdint>
#include <vector>

#include "csi/data/dataset.hpp"
#include "csi/models/model.hpp"

namespace csi::models {

struct TrainHyper {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    int max_epochs = 100;
    int patience = 25;
    int min_epochs = 40;
    int batch_size = 32;
    std::uint64_t seed = 1;

    // autoencoder pretraining
    double contractive_lambda = 2e-4;
    double mask_focus_start = 1.0;       // annealed to 0 over mask_focus_frac
    double mask_focus_frac = 0.4;        // fraction of training
    double grad_clip = 1.0;

    // two-phase fine-tuning
    int phase_a_epochs = 10;
    int phase_b_epochs = 30;
    double head_lr = 2e-3;
    double encoder_lr = 2e-4;
    double plateau_factor = 0.5;
    int plateau_patience = 5;

    void validate() const;
};

struct EpochStats {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

// Mean CE and accuracy over a sample set, batched.
struct EvalLoss {
    double loss = 0.0;
    double acc = 0.0;
};
EvalLoss eval_loss(const Model& model, const std::vector<data::CsiSample>& samples, int batch = 64);

// Clean supervised training: Adam, early stopping on validation loss,
// best-epoch parameters restored. Throws NumericError on divergence with
// the epoch index in the message.
TrainHistory train_clean(Model& model, const data::DatasetSplit& split, const TrainHyper& hyper);

} // namespace csi::models
