#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "csi/grad/tensor.hpp"

namespace csi::grad {

// One trainable tensor with its name as used in graphs.
struct NamedParam {
    std::string name;
    std::shared_ptr<Tensor> value;
};

// Adam with optional coupled weight decay (decay added to the gradient,
// matching the common framework default) and optional global-norm clipping.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.0;   // 0 = off
};

class Adam {
public:
    // Each group has its own learning rate; moments are kept per parameter.
    struct Group {
        std::vector<NamedParam> params;
        double lr;
    };

    Adam(std::vector<NamedParam> params, AdamConfig cfg);
    Adam(std::vector<Group> groups, AdamConfig cfg);

    // Applies one update from named gradients. Gradients missing from the
    // map are treated as zero. Returns the pre-clip global gradient norm.
    double step(const std::map<std::string, Tensor>& grads);

    // Multiplies every group's learning rate, used by plateau scheduling.
    void scale_lr(double factor);
    double lr_of_group(std::size_t g) const { return groups_[g].lr; }

private:
    struct State {
        Tensor m;
        Tensor v;
    };
    std::vector<Group> groups_;
    AdamConfig cfg_;
    std::map<std::string, State> state_;
    long t_ = 0;
};

// Early-stopping schedule: no-improvement epochs are only counted from
// min_epochs onward, so the run always lasts at least min_epochs and at
// most best-epoch-bounded min_epochs+patience when the metric is flat.
class EarlyStopper {
public:
    EarlyStopper(int patience, int min_epochs);

    // Feed one epoch's validation metric (lower is better).
    // Returns true if this epoch is the new best.
    bool observe(double metric);

    bool should_stop() const;
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_metric_; }
    int epoch() const { return epoch_; }

private:
    int patience_;
    int min_epochs_;
    int epoch_ = 0;
    int stale_ = 0;
    int best_epoch_ = -1;
    double best_metric_ = 0.0;
};

// Reduce-on-plateau: multiply lr by `factor` after `patience` consecutive
// non-improving epochs.
class PlateauScheduler {
public:
    PlateauScheduler(double factor, int patience);
    // Returns true if the rate was reduced this epoch.
    bool observe(double metric, Adam& optimizer);

private:
    double factor_;
    int patience_;
    int stale_ = 0;
    bool seen_ = false;
    double best_ = 0.0;
};

} // namespace csi::grad
