#include "csi/models/train.hpp"

#include <algorithm>
#include <cmath>

#include "csi/error.hpp"
#include "csi/metrics/metrics.hpp"
#include "csi/rng.hpp"

namespace csi::models {

using grad::Tensor;

void TrainHyper::validate() const {
    if (lr <= 0.0 || weight_decay < 0.0) throw ConfigError("TrainHyper: lr must be > 0, weight_decay >= 0");
    if (max_epochs < 1 || batch_size < 1) throw ConfigError("TrainHyper: max_epochs and batch_size must be >= 1");
    if (patience < 1 || min_epochs < 1) throw ConfigError("TrainHyper: patience and min_epochs must be >= 1");
    if (patience > max_epochs) throw ConfigError("TrainHyper: patience must not exceed max_epochs");
    if (head_lr <= 0.0 || encoder_lr <= 0.0) throw ConfigError("TrainHyper: phase learning rates must be > 0");
    if (phase_a_epochs < 0 || phase_b_epochs < 0) throw ConfigError("TrainHyper: phase epochs must be >= 0");
}

EvalLoss eval_loss(const Model& model, const std::vector<data::CsiSample>& samples, int batch) {
    if (samples.empty()) throw ConfigError("eval_loss: empty sample set");
    const int c = model.spec().n_classes;
    double loss_sum = 0.0;
    std::size_t hits = 0;
    std::size_t pos = 0;
    while (pos < samples.size()) {
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch), samples.size() - pos);
        const Model::LossGraph lg = model.loss_graph(static_cast<int>(take));
        std::vector<int> labels(take);
        for (std::size_t i = 0; i < take; ++i) labels[i] = samples[pos + i].label;
        const Tensor x = pack_batch(std::span<const data::CsiSample>(samples.data() + pos, take));
        const Tensor y = pack_onehot(labels, c);
        const grad::Evaluation ev = lg.graph->evaluate({{"x", x}, {"y", y}});
        const Tensor& ce = ev.value(lg.ce_vec);
        const Tensor& logits = ev.value(lg.logits);
        for (std::size_t i = 0; i < take; ++i) {
            loss_sum += ce[i];
            if (metrics::argmax(logits.data() + i * static_cast<std::size_t>(c), c) == labels[i]) ++hits;
        }
        pos += take;
    }
    EvalLoss out;
    out.loss = loss_sum / static_cast<double>(samples.size());
    out.acc = static_cast<double>(hits) / static_cast<double>(samples.size());
    return out;
}

TrainHistory train_clean(Model& model, const data::DatasetSplit& split, const TrainHyper& hyper) {
    hyper.validate();
    if (split.train.empty() || split.val.empty()) throw ConfigError("train_clean: empty train or val split");

    grad::AdamConfig acfg;
    acfg.lr = hyper.lr;
    acfg.weight_decay = hyper.weight_decay;
    grad::Adam opt(model.parameters(), acfg);
    grad::EarlyStopper stopper(hyper.patience, hyper.min_epochs);

    std::vector<std::string> wrt;
    for (const auto& p : model.parameters()) wrt.push_back(p.name);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const int c = model.spec().n_classes;

    TrainHistory history;
    std::vector<Tensor> best = model.snapshot();

    for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        Rng rng(Rng::derive(hyper.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double train_loss = 0.0;
        std::size_t hits = 0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size),
                                                           order.size() - pos);
            const Model::LossGraph lg = model.loss_graph(static_cast<int>(take));
            std::vector<int> labels(take);
            for (std::size_t i = 0; i < take; ++i) labels[i] = split.train[order[pos + i]].label;
            const Tensor x = pack_batch_idx(split.train, std::span<const std::size_t>(order.data() + pos, take));
            const Tensor y = pack_onehot(labels, c);

            grad::Evaluation ev = [&] {
                try {
                    return lg.graph->evaluate({{"x", x}, {"y", y}});
                } catch (const NumericError& e) {
                    throw NumericError("train_clean diverged at epoch " + std::to_string(epoch) + ": " + e.what());
                }
            }();
            const double batch_loss = ev.output()[0];
            if (!std::isfinite(batch_loss)) {
                throw NumericError("train_clean diverged at epoch " + std::to_string(epoch));
            }
            train_loss += batch_loss * static_cast<double>(take);
            const Tensor& logits = ev.value(lg.logits);
            for (std::size_t i = 0; i < take; ++i) {
                if (metrics::argmax(logits.data() + i * static_cast<std::size_t>(c), c) == labels[i]) ++hits;
            }
            opt.step(ev.backward(wrt));
            pos += take;
        }

        const EvalLoss val = eval_loss(model, split.val);
        EpochStats st;
        st.train_loss = train_loss / static_cast<double>(order.size());
        st.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
        st.val_loss = val.loss;
        st.val_acc = val.acc;
        st.lr = opt.lr_of_group(0);
        history.epochs.push_back(st);

        if (stopper.observe(val.loss)) best = model.snapshot();
        if (stopper.should_stop()) break;
    }

    model.restore(best);
    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best_metric();
    return history;
}

} // namespace csi::models
