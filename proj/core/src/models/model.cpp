#include "csi/models/model.hpp"

#include <algorithm>
#include <cmath>

#include "builders.hpp"
#include "csi/error.hpp"
#include "csi/metrics/metrics.hpp"
#include "csi/rng.hpp"

namespace csi::models {

using grad::Graph;
using grad::NamedParam;
using grad::NodeId;
using grad::Shape;
using grad::Tensor;

using detail::conv_block;
using detail::conv_out_len;
using detail::dense_block;
using detail::GraphParams;
using detail::gru_block;
using detail::ParamBuilder;

const char* family_str(Family f) {
    switch (f) {
        case Family::LargeCnn: return "large-cnn";
        case Family::LargeGru: return "large-gru";
        case Family::TinyTcnHead: return "tiny-tcn-head";
        case Family::TinyGruHead: return "tiny-gru-head";
    }
    return "?";
}

Family family_from_str(const std::string& s) {
    if (s == "large-cnn") return Family::LargeCnn;
    if (s == "large-gru") return Family::LargeGru;
    if (s == "tiny-tcn-head") return Family::TinyTcnHead;
    if (s == "tiny-gru-head") return Family::TinyGruHead;
    throw ConfigError("unknown model family '" + s + "'");
}

bool is_tiny(Family f) {
    return f == Family::TinyTcnHead || f == Family::TinyGruHead;
}

int ModelSpec::effective_width() const {
    if (width > 0) return width;
    switch (family) {
        case Family::LargeCnn: return 64;
        case Family::LargeGru: return 96;
        case Family::TinyTcnHead: return 16;
        case Family::TinyGruHead: return 16;
    }
    return 16;
}

int ModelSpec::effective_latent() const {
    return latent_dim > 0 ? latent_dim : 8;
}

Model::Model(ModelSpec spec, std::vector<NamedParam> params, std::vector<std::string> encoder_names)
    : spec_(std::move(spec)), params_(std::move(params)), encoder_names_(std::move(encoder_names)) {}

long Model::capacity() const {
    long total = 0;
    for (const NamedParam& p : params_) total += static_cast<long>(p.value->size());
    return total;
}

std::vector<NamedParam> Model::encoder_parameters() const {
    std::vector<NamedParam> out;
    for (const NamedParam& p : params_) {
        if (std::find(encoder_names_.begin(), encoder_names_.end(), p.name) != encoder_names_.end()) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<NamedParam> Model::head_parameters() const {
    std::vector<NamedParam> out;
    for (const NamedParam& p : params_) {
        if (std::find(encoder_names_.begin(), encoder_names_.end(), p.name) == encoder_names_.end()) {
            out.push_back(p);
        }
    }
    return out;
}

grad::NodeId Model::append_logits(Graph& g, NodeId x) const {
    const int a = spec_.dims.antennas, k = spec_.dims.subcarriers, t = spec_.dims.packets;
    const Shape& sx = g.node(x).shape;
    if (sx.size() != 4 || sx[1] != a || sx[2] != k || sx[3] != t) {
        throw ShapeError("append_logits: input must be (B," + std::to_string(a) + "," +
                         std::to_string(k) + "," + std::to_string(t) + ")");
    }
    const int batch = sx[0];
    const int ci = a * k;
    GraphParams pp{g, params_, {}};
    NodeId h = g.reshape(x, {batch, ci, t});

    switch (spec_.family) {
        case Family::LargeCnn: {
            h = conv_block(g, pp, "net.c1", h, 2, 1, true);
            h = conv_block(g, pp, "net.c2", h, 2, 1, true);
            h = conv_block(g, pp, "net.c3", h, 2, 1, true);
            h = conv_block(g, pp, "net.c4", h, 1, 1, true);
            h = conv_block(g, pp, "net.c5", h, 1, 1, true);
            const Shape& sh = g.node(h).shape;
            h = g.reshape(h, {batch, sh[1] * sh[2]});
            h = dense_block(g, pp, "net.f1", h, true);
            h = dense_block(g, pp, "net.f2", h, false);
            break;
        }
        case Family::LargeGru: {
            h = gru_block(g, pp, "net.g1", h);
            h = g.last_time(h);
            h = dense_block(g, pp, "net.f1", h, true);
            h = dense_block(g, pp, "net.f2", h, false);
            break;
        }
        case Family::TinyTcnHead: {
            h = detail::tiny_encoder_graph(g, pp, h);
            h = conv_block(g, pp, "head.c1", h, 1, 1, true);
            h = conv_block(g, pp, "head.c2", h, 1, 2, true);
            h = g.global_avg_pool_time(h);
            h = dense_block(g, pp, "head.f1", h, false);
            break;
        }
        case Family::TinyGruHead: {
            h = detail::tiny_encoder_graph(g, pp, h);
            h = gru_block(g, pp, "head.g1", h);
            h = g.last_time(h);
            h = dense_block(g, pp, "head.f1", h, false);
            break;
        }
    }
    return h;
}

const Graph& Model::logits_graph(int batch) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = logits_cache_.find(batch);
    if (it != logits_cache_.end()) return *it->second;
    auto g = std::make_unique<Graph>();
    const NodeId x = g->input("x", {batch, spec_.dims.antennas, spec_.dims.subcarriers, spec_.dims.packets});
    const NodeId logits = append_logits(*g, x);
    g->set_output(logits);
    const Graph& ref = *g;
    logits_cache_[batch] = std::move(g);
    return ref;
}

Model::LossGraph Model::loss_graph(int batch) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = loss_cache_.find(batch);
    if (it != loss_cache_.end()) return it->second.second;
    auto g = std::make_unique<Graph>();
    const NodeId x = g->input("x", {batch, spec_.dims.antennas, spec_.dims.subcarriers, spec_.dims.packets});
    const NodeId y = g->input("y", {batch, spec_.n_classes});
    const NodeId logits = append_logits(*g, x);
    const NodeId ce = g->cross_entropy(logits, y);
    const NodeId loss = g->reduce_mean(ce);
    g->set_output(loss);
    LossGraph lg{g.get(), logits, ce, loss};
    loss_cache_[batch] = {std::move(g), lg};
    return lg;
}

Tensor Model::logits(const Tensor& x_batch) const {
    const Graph& g = logits_graph(x_batch.dim(0));
    return g.evaluate({{"x", x_batch}}).output();
}

std::vector<int> Model::predict(const std::vector<data::CsiSample>& samples, int batch) const {
    std::vector<int> out;
    out.reserve(samples.size());
    std::size_t pos = 0;
    while (pos < samples.size()) {
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch), samples.size() - pos);
        const Tensor x = pack_batch(std::span<const data::CsiSample>(samples.data() + pos, take));
        const Tensor l = logits(x);
        for (std::size_t i = 0; i < take; ++i) {
            out.push_back(metrics::argmax(l.data() + i * static_cast<std::size_t>(spec_.n_classes),
                                          spec_.n_classes));
        }
        pos += take;
    }
    return out;
}

Model Model::clone(const std::string& new_name) const {
    ModelSpec spec = spec_;
    if (!new_name.empty()) spec.name = new_name;
    std::vector<NamedParam> params;
    params.reserve(params_.size());
    for (const NamedParam& p : params_) {
        params.push_back({p.name, std::make_shared<Tensor>(*p.value)});
    }
    return Model(std::move(spec), std::move(params), encoder_names_);
}

std::vector<Tensor> Model::snapshot() const {
    std::vector<Tensor> snap;
    snap.reserve(params_.size());
    for (const NamedParam& p : params_) snap.push_back(*p.value);
    return snap;
}

void Model::restore(const std::vector<Tensor>& snap) {
    if (snap.size() != params_.size()) throw ShapeError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) *params_[i].value = snap[i];
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    const int a = spec.dims.antennas, k = spec.dims.subcarriers, t = spec.dims.packets;
    if (a < 1 || k < 1 || t < 1) throw ConfigError("build_model: dims must be positive");
    if (spec.n_classes < 2) throw ConfigError("build_model: need at least 2 classes");
    const int ci = a * k;
    const int w = spec.effective_width();
    const int latent = spec.effective_latent();

    ParamBuilder pb(Rng::derive(seed, "init", static_cast<std::uint64_t>(spec.family)));
    std::vector<std::string> encoder_names;

    switch (spec.family) {
        case Family::LargeCnn: {
            if (t < 16) {
                throw ConfigError("build_model: large-cnn needs packets >= 16, got " + std::to_string(t));
            }
            const int c[5] = {w, w + 8, w + 16, w + 24, w + 32};
            pb.conv("net.c1", c[0], ci, 5);
            pb.conv("net.c2", c[1], c[0], 5);
            pb.conv("net.c3", c[2], c[1], 3);
            pb.conv("net.c4", c[3], c[2], 3);
            pb.conv("net.c5", c[4], c[3], 3);
            int tt = conv_out_len(t, 5, 2, 1);
            tt = conv_out_len(tt, 5, 2, 1);
            tt = conv_out_len(tt, 3, 2, 1);
            pb.dense("net.f1", 128, c[4] * tt);
            pb.dense("net.f2", spec.n_classes, 128);
            break;
        }
        case Family::LargeGru: {
            pb.gru("net.g1", w, ci);
            pb.dense("net.f1", 64, w);
            pb.dense("net.f2", spec.n_classes, 64);
            break;
        }
        case Family::TinyTcnHead:
        case Family::TinyGruHead: {
            if (detail::tiny_latent_len(t) < 5) {
                throw ConfigError("build_model: tiny encoder needs packets >= 20, got " + std::to_string(t));
            }
            detail::tiny_encoder_params(pb, ci, w, latent);
            for (const NamedParam& p : pb.params) encoder_names.push_back(p.name);
            if (spec.family == Family::TinyTcnHead) {
                pb.conv("head.c1", w, latent, 3);
                pb.conv("head.c2", w, w, 3);
                pb.dense("head.f1", spec.n_classes, w);
            } else {
                pb.gru("head.g1", 24, latent);
                pb.dense("head.f1", spec.n_classes, 24);
            }
            break;
        }
    }
    return Model(spec, std::move(pb.params), std::move(encoder_names));
}

Tensor pack_batch(std::span<const data::CsiSample> samples) {
    if (samples.empty()) throw ConfigError("pack_batch: empty batch");
    const Tensor& first = samples[0].amplitudes;
    const int a = first.dim(0), k = first.dim(1), t = first.dim(2);
    Tensor out = Tensor::zeros({static_cast<int>(samples.size()), a, k, t});
    const std::size_t per = first.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].amplitudes.same_shape(first)) throw ShapeError("pack_batch: inconsistent shapes");
        std::copy(samples[i].amplitudes.data(), samples[i].amplitudes.data() + per, out.data() + i * per);
    }
    return out;
}

Tensor pack_batch_idx(const std::vector<data::CsiSample>& samples, std::span<const std::size_t> idx) {
    if (idx.empty()) throw ConfigError("pack_batch_idx: empty batch");
    const Tensor& first = samples[idx[0]].amplitudes;
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
    const std::size_t per = first.size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor& x = samples[idx[i]].amplitudes;
        if (!x.same_shape(first)) throw ShapeError("pack_batch_idx: inconsistent shapes");
        std::copy(x.data(), x.data() + per, out.data() + i * per);
    }
    return out;
}

Tensor pack_onehot(std::span<const int> labels, int n_classes) {
    Tensor out = Tensor::zeros({static_cast<int>(labels.size()), n_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes) throw ConfigError("pack_onehot: label out of range");
        out[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return out;
}

} // namespace csi::models
