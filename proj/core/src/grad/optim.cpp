#include "csi/grad/optim.hpp"

#include <cmath>

#include "csi/error.hpp"

namespace csi::grad {

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg)
    : Adam(std::vector<Group>{Group{std::move(params), cfg.lr}}, cfg) {}

Adam::Adam(std::vector<Group> groups, AdamConfig cfg) : groups_(std::move(groups)), cfg_(cfg) {
    for (const Group& g : groups_) {
        for (const NamedParam& p : g.params) {
            if (!p.value) throw ShapeError("Adam: parameter '" + p.name + "' has no storage");
            state_[p.name] = State{Tensor::zeros(p.value->shape()), Tensor::zeros(p.value->shape())};
        }
    }
}

double Adam::step(const std::map<std::string, Tensor>& grads) {
    double sq = 0.0;
    for (const Group& g : groups_) {
        for (const NamedParam& p : g.params) {
            const auto it = grads.find(p.name);
            if (it == grads.end()) continue;
            for (std::size_t i = 0; i < it->second.size(); ++i) {
                const double gv = it->second[i] + cfg_.weight_decay * (*p.value)[i];
                sq += gv * gv;
            }
        }
    }
    const double norm = std::sqrt(sq);
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Group& g : groups_) {
        for (NamedParam& p : g.params) {
            const auto it = grads.find(p.name);
            if (it == grads.end()) continue;
            State& st = state_[p.name];
            Tensor& w = *p.value;
            const Tensor& grad = it->second;
            if (!w.same_shape(grad)) {
                throw ShapeError("Adam: gradient shape mismatch for '" + p.name + "'");
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gv = (grad[i] + cfg_.weight_decay * w[i]) * clip;
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gv;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gv * gv;
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                w[i] -= g.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }
    return norm;
}

void Adam::scale_lr(double factor) {
    for (Group& g : groups_) g.lr *= factor;
}

EarlyStopper::EarlyStopper(int patience, int min_epochs)
    : patience_(patience), min_epochs_(min_epochs) {
    if (patience < 1 || min_epochs < 1) throw ConfigError("EarlyStopper: patience and min_epochs must be >= 1");
}

bool EarlyStopper::observe(double metric) {
    ++epoch_;
    const bool improved = best_epoch_ < 0 || metric < best_metric_;
    if (improved) {
        best_metric_ = metric;
        best_epoch_ = epoch_;
        stale_ = 0;
    } else if (epoch_ > min_epochs_) {
        ++stale_;
    }
    return improved;
}

bool EarlyStopper::should_stop() const {
    return epoch_ >= min_epochs_ && stale_ >= patience_;
}

PlateauScheduler::PlateauScheduler(double factor, int patience) : factor_(factor), patience_(patience) {
    if (factor <= 0.0 || factor >= 1.0 || patience < 1) throw ConfigError("PlateauScheduler: bad factor/patience");
}

bool PlateauScheduler::observe(double metric, Adam& optimizer) {
    if (!seen_ || metric < best_) {
        best_ = metric;
        seen_ = true;
        stale_ = 0;
        return false;
    }
    if (++stale_ >= patience_) {
        optimizer.scale_lr(factor_);
        stale_ = 0;
        return true;
    }
    return false;
}

} // namespace csi::grad
