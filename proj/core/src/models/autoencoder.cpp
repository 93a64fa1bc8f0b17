#include "csi/models/autoencoder.hpp"

#include <algorithm>
#include <cmath>

#include "builders.hpp"
#include "csi/error.hpp"
#include "csi/rng.hpp"

namespace csi::models {

using grad::Graph;
using grad::NamedParam;
using grad::NodeId;
using grad::Shape;
using grad::Tensor;

using detail::conv_block;
using detail::GraphParams;
using detail::ParamBuilder;

Autoencoder::Autoencoder(AutoencoderSpec spec, std::vector<NamedParam> params,
                         std::vector<std::string> encoder_names)
    : spec_(std::move(spec)), params_(std::move(params)), encoder_names_(std::move(encoder_names)) {}

std::vector<NamedParam> Autoencoder::encoder_parameters() const {
    std::vector<NamedParam> out;
    for (const NamedParam& p : params_) {
        if (std::find(encoder_names_.begin(), encoder_names_.end(), p.name) != encoder_names_.end()) {
            out.push_back(p);
        }
    }
    return out;
}

grad::Shape Autoencoder::latent_shape() const {
    return {spec_.latent_dim, detail::tiny_latent_len(spec_.dims.packets)};
}

namespace {

// Decoder: upsample x2, conv k3 relu, upsample x2, conv k5 back to input
// channels. Encoder rounding can overshoot the length by a few packets;
// the tail is cropped.
NodeId decoder_graph(Graph& g, GraphParams& pp, NodeId z, int t_target) {
    NodeId h = g.upsample1d(z, 2);
    h = conv_block(g, pp, "dec.c1", h, 1, 1, true);
    h = g.upsample1d(h, 2);
    h = conv_block(g, pp, "dec.c2", h, 1, 1, false);
    const Shape& sh = g.node(h).shape;
    if (sh[2] < t_target) {
        throw ShapeError("decoder output shorter than input (" + std::to_string(sh[2]) + " < " +
                         std::to_string(t_target) + ")");
    }
    if (sh[2] > t_target) h = g.crop_time(h, t_target);
    return h;
}

} // namespace

Autoencoder::ReconGraph Autoencoder::recon_graph(int batch) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = recon_cache_.find(batch);
    if (it != recon_cache_.end()) return it->second.second;

    const int a = spec_.dims.antennas, k = spec_.dims.subcarriers, t = spec_.dims.packets;
    const int ci = a * k;
    auto g = std::make_unique<Graph>();
    GraphParams pp{*g, params_, {}};
    const NodeId x4 = g->input("x", {batch, a, k, t});
    const NodeId mask = g->input("mask", {batch, ci, t});
    const NodeId x = g->reshape(x4, {batch, ci, t});
    const NodeId z = detail::tiny_encoder_graph(*g, pp, x);
    NodeId recon = decoder_graph(*g, pp, z, t);
    const NodeId mse = g->squared_error(recon, x);
    const NodeId diff = g->sub(recon, x);
    const NodeId sq = g->mul(diff, diff);
    const NodeId masked = g->reduce_mean(g->mul(mask, sq));
    const NodeId loss = g->add(mse, masked);
    g->set_output(loss);
    ReconGraph rg{g.get(), z, recon, mse, loss};
    recon_cache_[batch] = {std::move(g), rg};
    return rg;
}

Autoencoder::ProbeGraph Autoencoder::probe_graph(int batch) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = probe_cache_.find(batch);
    if (it != probe_cache_.end()) return it->second.second;

    const int a = spec_.dims.antennas, k = spec_.dims.subcarriers, t = spec_.dims.packets;
    const Shape lat = latent_shape();
    auto g = std::make_unique<Graph>();
    GraphParams pp{*g, params_, {}};
    const NodeId x4 = g->input("x", {batch, a, k, t});
    const NodeId v = g->input("v", {batch, lat[0], lat[1]});
    const NodeId x = g->reshape(x4, {batch, a * k, t});
    const NodeId z = detail::tiny_encoder_graph(*g, pp, x);
    const NodeId probe = g->reduce_sum(g->mul(z, v));
    g->set_output(probe);
    ProbeGraph pg{g.get(), z, probe};
    probe_cache_[batch] = {std::move(g), pg};
    return pg;
}

std::vector<Tensor> Autoencoder::snapshot() const {
    std::vector<Tensor> snap;
    for (const NamedParam& p : params_) snap.push_back(*p.value);
    return snap;
}

void Autoencoder::restore(const std::vector<Tensor>& snap) {
    if (snap.size() != params_.size()) throw ShapeError("Autoencoder::restore: snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) *params_[i].value = snap[i];
}

Autoencoder build_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed) {
    const int a = spec.dims.antennas, k = spec.dims.subcarriers, t = spec.dims.packets;
    if (a < 1 || k < 1 || t < 1) throw ConfigError("build_autoencoder: dims must be positive");
    const int ci = a * k;
    if (spec.latent_dim < 1 || spec.width < 1) throw ConfigError("build_autoencoder: width/latent must be >= 1");
    if (spec.latent_dim >= ci * 4) {
        // latent sequence has T/4 steps; latent_dim >= 4*Ci means no bottleneck
        throw ConfigError("build_autoencoder: latent_dim " + std::to_string(spec.latent_dim) +
                          " does not form a bottleneck for " + std::to_string(ci) + " channels");
    }
    if (detail::tiny_latent_len(t) < 5) {
        throw ConfigError("build_autoencoder: packets >= 20 required, got " + std::to_string(t));
    }
    ParamBuilder pb(Rng::derive(seed, "ae-init"));
    detail::tiny_encoder_params(pb, ci, spec.width, spec.latent_dim);
    std::vector<std::string> encoder_names;
    for (const NamedParam& p : pb.params) encoder_names.push_back(p.name);
    pb.conv("dec.c1", spec.width, spec.latent_dim, 3);
    pb.conv("dec.c2", ci, spec.width, 5);
    return Autoencoder(spec, std::move(pb.params), std::move(encoder_names));
}

namespace {

// Per-batch mask tensor: one contiguous temporal window of width 10% of T
// per sample, scaled so the masked term equals
// focus_weight * mean over masked cells of the squared error.
Tensor make_mask(int batch, int ci, int t, double focus_weight, Rng& rng) {
    Tensor mask = Tensor::zeros({batch, ci, t});
    if (focus_weight <= 0.0) return mask;
    const int width = std::max(1, t / 10);
    const double cell_fraction = static_cast<double>(width) / static_cast<double>(t);
    const double scale = focus_weight / cell_fraction;
    for (int b = 0; b < batch; ++b) {
        const int start = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(t - width + 1)));
        for (int c = 0; c < ci; ++c) {
            double* row = mask.data() + grad::idx3(ci, t, b, c, 0);
            for (int q = 0; q < width; ++q) row[start + q] = scale;
        }
    }
    return mask;
}

double recon_eval(const Autoencoder& ae, const std::vector<data::CsiSample>& samples, int batch) {
    double total = 0.0;
    std::size_t pos = 0;
    const int ci = ae.spec().dims.antennas * ae.spec().dims.subcarriers;
    while (pos < samples.size()) {
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch), samples.size() - pos);
        const auto rg = ae.recon_graph(static_cast<int>(take));
        const Tensor x = pack_batch(std::span<const data::CsiSample>(samples.data() + pos, take));
        const Tensor mask = Tensor::zeros({static_cast<int>(take), ci, ae.spec().dims.packets});
        const auto ev = rg.graph->evaluate({{"x", x}, {"mask", mask}});
        total += ev.value(rg.mse)[0] * static_cast<double>(take);
        pos += take;
    }
    return total / static_cast<double>(samples.size());
}

} // namespace

double contractive_penalty(const Autoencoder& ae, const Tensor& x_batch, int probes, std::uint64_t seed) {
    const int batch = x_batch.dim(0);
    const auto pg = ae.probe_graph(batch);
    const Shape lat = ae.latent_shape();
    const std::size_t lat_numel = static_cast<std::size_t>(lat[0]) * static_cast<std::size_t>(lat[1]);

    if (probes == 0) {
        // exact: iterate every latent coordinate
        double total = 0.0;
        for (std::size_t q = 0; q < lat_numel; ++q) {
            Tensor v = Tensor::zeros({batch, lat[0], lat[1]});
            for (int b = 0; b < batch; ++b) v[static_cast<std::size_t>(b) * lat_numel + q] = 1.0;
            const auto ev = pg.graph->evaluate({{"x", x_batch}, {"v", v}});
            const Tensor gx = ev.backward({"x"}).at("x");
            total += gx.l2_norm() * gx.l2_norm();
        }
        return total / static_cast<double>(batch);
    }

    Rng rng(seed);
    double total = 0.0;
    for (int p = 0; p < probes; ++p) {
        Tensor v = Tensor::zeros({batch, lat[0], lat[1]});
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal();
        const auto ev = pg.graph->evaluate({{"x", x_batch}, {"v", v}});
        const Tensor gx = ev.backward({"x"}).at("x");
        total += gx.l2_norm() * gx.l2_norm();
    }
    return total / (static_cast<double>(probes) * static_cast<double>(batch));
}

PretrainHistory pretrain_autoencoder(Autoencoder& ae, const data::DatasetSplit& split,
                                     const TrainHyper& hyper) {
    hyper.validate();
    if (split.train.empty() || split.val.empty()) {
        throw ConfigError("pretrain_autoencoder: empty train or val split");
    }
    const int ci = ae.spec().dims.antennas * ae.spec().dims.subcarriers;
    const int t = ae.spec().dims.packets;
    const Shape lat = ae.latent_shape();
    const std::size_t lat_numel = static_cast<std::size_t>(lat[0]) * static_cast<std::size_t>(lat[1]);

    grad::AdamConfig acfg;
    acfg.lr = hyper.lr;
    acfg.weight_decay = hyper.weight_decay;
    acfg.clip_norm = hyper.grad_clip;
    grad::Adam opt(ae.parameters(), acfg);
    grad::EarlyStopper stopper(hyper.patience, std::min(hyper.min_epochs, hyper.max_epochs));

    std::vector<std::string> wrt;
    for (const auto& p : ae.parameters()) wrt.push_back(p.name);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    PretrainHistory history;
    std::vector<Tensor> best = ae.snapshot();
    long step = 0;

    for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        Rng rng(Rng::derive(hyper.seed, "ae-epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        // mask focus annealed start -> 0 over the first mask_focus_frac of
        // the run, measured in epochs
        const double progress = static_cast<double>(epoch - 1) /
                                std::max(1.0, static_cast<double>(hyper.max_epochs));
        const double focus = hyper.mask_focus_frac > 0.0
                                 ? hyper.mask_focus_start * std::max(0.0, 1.0 - progress / hyper.mask_focus_frac)
                                 : 0.0;

        double train_loss = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size),
                                                           order.size() - pos);
            const auto rg = ae.recon_graph(static_cast<int>(take));
            const Tensor x = pack_batch_idx(split.train, std::span<const std::size_t>(order.data() + pos, take));
            const Tensor mask = make_mask(static_cast<int>(take), ci, t, focus, rng);
            grad::Evaluation ev = rg.graph->evaluate({{"x", x}, {"mask", mask}});
            const double batch_loss = ev.output()[0];
            if (!std::isfinite(batch_loss)) {
                throw NumericError("pretrain_autoencoder diverged at epoch " + std::to_string(epoch));
            }
            std::map<std::string, Tensor> grads = ev.backward(wrt);
            double penalty = 0.0;

            // contractive term every 4th step on half the batch
            if (hyper.contractive_lambda > 0.0 && step % 4 == 0) {
                const std::size_t half = std::max<std::size_t>(1, take / 2);
                std::vector<std::size_t> sub(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                             order.begin() + static_cast<std::ptrdiff_t>(pos + half));
                const Tensor xs = pack_batch_idx(split.train, sub);
                const auto pg = ae.probe_graph(static_cast<int>(half));
                Tensor v = Tensor::zeros({static_cast<int>(half), lat[0], lat[1]});
                for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal();

                std::vector<std::string> wrt_x = wrt;
                wrt_x.push_back("x");
                const auto ev0 = pg.graph->evaluate({{"x", xs}, {"v", v}});
                auto g0 = ev0.backward(wrt_x);
                const Tensor& q = g0.at("x");
                double qsq = 0.0;
                for (std::size_t i = 0; i < q.size(); ++i) qsq += q[i] * q[i];
                penalty = hyper.contractive_lambda * qsq / static_cast<double>(half);

                // d/dtheta ||q||^2 via finite-difference Hessian-vector
                // product: (grad_theta s(x+h q) - grad_theta s(x)) * 2/h
                const double qnorm = std::sqrt(qsq);
                if (qnorm > 1e-12) {
                    const double h = 1e-3 / qnorm;
                    Tensor xh = xs;
                    xh.add_scaled(q, h);
                    const auto evh = pg.graph->evaluate({{"x", xh}, {"v", v}});
                    auto gh = evh.backward(wrt);
                    const double coeff = hyper.contractive_lambda * 2.0 / (h * static_cast<double>(half));
                    for (const std::string& name : wrt) {
                        Tensor& dst = grads.at(name);
                        const Tensor& a = gh.at(name);
                        const Tensor& b = g0.at(name);
                        for (std::size_t i = 0; i < dst.size(); ++i) {
                            dst[i] += coeff * (a[i] - b[i]);
                        }
                    }
                }
            }

            train_loss += (batch_loss + penalty) * static_cast<double>(take);
            opt.step(grads);
            ++step;
            pos += take;
        }

        const double val = recon_eval(ae, split.val, hyper.batch_size);
        history.train_loss.push_back(train_loss / static_cast<double>(order.size()));
        history.val_loss.push_back(val);
        if (stopper.observe(val)) best = ae.snapshot();
        if (stopper.should_stop()) break;
    }
    ae.restore(best);
    history.best_epoch = stopper_unreachable(history);
    return history;
}

Model make_tiny_classifier(const Autoencoder& ae, Family head_family, int n_classes,
                           const std::string& name, std::uint64_t seed) {
    if (!is_tiny(head_family)) throw ConfigError("make_tiny_classifier: head family must be tiny");
    ModelSpec spec;
    spec.family = head_family;
    spec.dims = ae.spec().dims;
    spec.n_classes = n_classes;
    spec.width = ae.spec().width;
    spec.latent_dim = ae.spec().latent_dim;
    spec.name = name;
    Model m = build_model(spec, seed);
    // overwrite the fresh encoder with the pretrained one (deep copy)
    auto pretrained = ae.encoder_parameters();
    for (const NamedParam& dst : m.encoder_parameters()) {
        bool found = false;
        for (const NamedParam& src : pretrained) {
            if (src.name == dst.name) {
                *dst.value = *src.value;
                found = true;
                break;
            }
        }
        if (!found) throw ShapeError("make_tiny_classifier: encoder parameter '" + dst.name + "' missing");
    }
    return m;
}

TrainHistory finetune_head(Model& classifier, const data::DatasetSplit& split, const TrainHyper& hyper) {
    hyper.validate();
    if (!is_tiny(classifier.spec().family)) throw ConfigError("finetune_head: model is not a tiny classifier");
    const auto heads = classifier.head_parameters();
    const auto encs = classifier.encoder_parameters();
    if (heads.empty() || encs.empty()) throw ConfigError("finetune_head: missing parameter groups");

    std::vector<std::string> head_names, all_names;
    for (const auto& p : heads) head_names.push_back(p.name);
    for (const auto& p : classifier.parameters()) all_names.push_back(p.name);

    const int c = classifier.spec().n_classes;
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainHistory history;

    auto run_epoch = [&](grad::Adam& opt, const std::vector<std::string>& wrt, int epoch_tag) {
        Rng rng(Rng::derive(hyper.seed, "ft-epoch", static_cast<std::uint64_t>(epoch_tag)));
        rng.shuffle(order);
        double train_loss = 0.0;
        std::size_t hits = 0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size),
                                                           order.size() - pos);
            const Model::LossGraph lg = classifier.loss_graph(static_cast<int>(take));
            std::vector<int> labels(take);
            for (std::size_t i = 0; i < take; ++i) labels[i] = split.train[order[pos + i]].label;
            const Tensor x = pack_batch_idx(split.train, std::span<const std::size_t>(order.data() + pos, take));
            const Tensor y = pack_onehot(labels, c);
            grad::Evaluation ev = lg.graph->evaluate({{"x", x}, {"y", y}});
            const double batch_loss = ev.output()[0];
            if (!std::isfinite(batch_loss)) {
                throw NumericError("finetune_head diverged at epoch " + std::to_string(epoch_tag));
            }
            train_loss += batch_loss * static_cast<double>(take);
            const Tensor& logits = ev.value(lg.logits);
            for (std::size_t i = 0; i < take; ++i) {
                if (metrics_argmax_row(logits, i, c) == labels[i]) ++hits;
            }
            opt.step(ev.backward(wrt));
            pos += take;
        }
        EpochStats st;
        st.train_loss = train_loss / static_cast<double>(order.size());
        st.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
        const EvalLoss val = eval_loss(classifier, split.val);
        st.val_loss = val.loss;
        st.val_acc = val.acc;
        st.lr = opt.lr_of_group(0);
        history.epochs.push_back(st);
        return val.loss;
    };

    // Phase A: frozen encoder, head only
    {
        grad::AdamConfig acfg;
        acfg.lr = hyper.head_lr;
        acfg.weight_decay = hyper.weight_decay;
        grad::Adam opt(heads, acfg);
        for (int e = 1; e <= hyper.phase_a_epochs; ++e) run_epoch(opt, head_names, e);
    }

    // Phase B: everything trainable, lower encoder rate, plateau schedule
    {
        grad::AdamConfig acfg;
        acfg.lr = hyper.head_lr;
        acfg.weight_decay = hyper.weight_decay;
        std::vector<grad::Adam::Group> groups;
        groups.push_back({heads, hyper.head_lr});
        groups.push_back({encs, hyper.encoder_lr});
        grad::Adam opt(std::move(groups), acfg);
        grad::PlateauScheduler plateau(hyper.plateau_factor, hyper.plateau_patience);

        double best_val = 0.0;
        bool has_best = false;
        std::vector<Tensor> best_snap;
        for (int e = 1; e <= hyper.phase_b_epochs; ++e) {
            const double val = run_epoch(opt, all_names, 1000 + e);
            if (!has_best || val < best_val) {
                best_val = val;
                has_best = true;
                best_snap = classifier.snapshot();
                history.best_epoch = static_cast<int>(history.epochs.size());
                history.best_val_loss = val;
            }
            plateau.observe(val, opt);
        }
        if (has_best) classifier.restore(best_snap);
    }
    return history;
}

} // namespace csi::models
