#pragma once

// Internal graph/parameter builders shared by the model factory and the
// autoencoder. Not installed.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "csi/error.hpp"
#include "csi/grad/graph.hpp"
#include "csi/grad/optim.hpp"
#include "csi/rng.hpp"

namespace csi::models::detail {

using grad::Graph;
using grad::NamedParam;
using grad::NodeId;
using grad::Shape;
using grad::Tensor;

inline Tensor he_uniform(const Shape& shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    const double b = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-b, b);
    return t;
}

inline Tensor recurrent_uniform(const Shape& shape, int hidden, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    const double b = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-b, b);
    return t;
}

struct ParamBuilder {
    std::vector<NamedParam> params;
    Rng rng;

    explicit ParamBuilder(std::uint64_t seed) : rng(seed) {}

    void conv(const std::string& name, int co, int ci, int k) {
        params.push_back({name + ".w", std::make_shared<Tensor>(he_uniform({co, ci, k}, ci * k, rng))});
        params.push_back({name + ".b", std::make_shared<Tensor>(Tensor::zeros({co}))});
    }
    void dense(const std::string& name, int out, int in) {
        params.push_back({name + ".w", std::make_shared<Tensor>(he_uniform({out, in}, in, rng))});
        params.push_back({name + ".b", std::make_shared<Tensor>(Tensor::zeros({out}))});
    }
    void gru(const std::string& name, int hidden, int in) {
        const char* gates[3] = {"z", "r", "h"};
        for (const char* g : gates) {
            params.push_back({name + ".w" + g,
                              std::make_shared<Tensor>(recurrent_uniform({hidden, in}, hidden, rng))});
        }
        for (const char* g : gates) {
            params.push_back({name + ".u" + g,
                              std::make_shared<Tensor>(recurrent_uniform({hidden, hidden}, hidden, rng))});
        }
        for (const char* g : gates) {
            params.push_back({name + ".b" + g, std::make_shared<Tensor>(Tensor::zeros({hidden}))});
        }
    }
};

// Lazily creates parameter nodes in a graph from a named parameter list.
struct GraphParams {
    Graph& g;
    const std::vector<NamedParam>& params;
    std::map<std::string, NodeId> ids;

    NodeId operator()(const std::string& name) {
        const auto it = ids.find(name);
        if (it != ids.end()) return it->second;
        for (const NamedParam& p : params) {
            if (p.name == name) {
                const NodeId id = g.parameter(name, p.value);
                ids[name] = id;
                return id;
            }
        }
        throw ShapeError("model parameter '" + name + "' not found");
    }
};

inline NodeId conv_block(Graph& g, GraphParams& pp, const std::string& name, NodeId x,
                         int stride, int dilation, bool relu) {
    NodeId y = g.conv1d(x, pp(name + ".w"), pp(name + ".b"), stride, dilation);
    return relu ? g.relu(y) : y;
}

inline NodeId gru_block(Graph& g, GraphParams& pp, const std::string& name, NodeId x) {
    Graph::GruWeights w;
    w.wz = pp(name + ".wz");
    w.wr = pp(name + ".wr");
    w.wh = pp(name + ".wh");
    w.uz = pp(name + ".uz");
    w.ur = pp(name + ".ur");
    w.uh = pp(name + ".uh");
    w.bz = pp(name + ".bz");
    w.br = pp(name + ".br");
    w.bh = pp(name + ".bh");
    return g.gru_seq(x, w);
}

inline NodeId dense_block(Graph& g, GraphParams& pp, const std::string& name, NodeId x, bool relu) {
    NodeId y = g.linear(x, pp(name + ".w"), pp(name + ".b"));
    return relu ? g.relu(y) : y;
}

inline int conv_out_len(int t, int k, int stride, int dilation) {
    const int pad = dilation * (k - 1) / 2;
    const int span = dilation * (k - 1) + 1;
    return (t + 2 * pad - span) / stride + 1;
}

// Tiny encoder body shared by the bottleneck autoencoder and the tiny
// classifiers: conv(k5,s2) relu, conv(k3,d2) relu, conv(k3,s2).
inline void tiny_encoder_params(ParamBuilder& pb, int ci, int width, int latent) {
    pb.conv("enc.c1", width, ci, 5);
    pb.conv("enc.c2", width, width, 3);
    pb.conv("enc.c3", latent, width, 3);
}

inline NodeId tiny_encoder_graph(Graph& g, GraphParams& pp, NodeId x) {
    NodeId h = conv_block(g, pp, "enc.c1", x, 2, 1, true);
    h = conv_block(g, pp, "enc.c2", h, 1, 2, true);
    h = conv_block(g, pp, "enc.c3", h, 2, 1, false);
    return h;
}

inline int tiny_latent_len(int t) {
    int v = conv_out_len(t, 5, 2, 1);
    v = conv_out_len(v, 3, 1, 2);
    v = conv_out_len(v, 3, 2, 1);
    return v;
}

} // namespace csi::models::detail
