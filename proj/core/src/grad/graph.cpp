#include "csi/grad/graph.hpp"

#include <algorithm>
#include <cmath>

#include "csi/error.hpp"

namespace csi::grad {

namespace {

std::string node_msg(const char* where, NodeId id, const std::string& detail) {
    return std::string(where) + " (node " + std::to_string(id) + "): " + detail;
}

// Stable softmax of a length-c row.
void softmax_row(const double* in, double* out, int c) {
    double m = in[0];
    for (int i = 1; i < c; ++i) m = std::max(m, in[i]);
    double s = 0.0;
    for (int i = 0; i < c; ++i) {
        out[i] = std::exp(in[i] - m);
        s += out[i];
    }
    const double inv = 1.0 / s;
    for (int i = 0; i < c; ++i) out[i] *= inv;
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatMul: return "matmul";
        case Op::Linear: return "linear";
        case Op::Conv1d: return "conv1d";
        case Op::GruSeq: return "gru_seq";
        case Op::AvgPool1d: return "avg_pool1d";
        case Op::GlobalAvgPoolTime: return "global_avg_pool_time";
        case Op::LastTime: return "last_time";
        case Op::Upsample1d: return "upsample1d";
        case Op::CropTime: return "crop_time";
        case Op::Reshape: return "reshape";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Log: return "log";
        case Op::Softmax: return "softmax";
        case Op::ReduceSum: return "reduce_sum";
        case Op::ReduceMean: return "reduce_mean";
        case Op::SquaredError: return "squared_error";
        case Op::CrossEntropy: return "cross_entropy";
        case Op::KlDiv: return "kl_div";
    }
    return "?";
}

NodeId Graph::push(Node node) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(node));
    output_ = id;   // latest node is the default output
    return id;
}

void Graph::check_arg(NodeId id, const char* where) const {
    if (id < 0 || id >= node_count()) {
        throw ShapeError(std::string(where) + ": argument node " + std::to_string(id) + " does not exist");
    }
}

NodeId Graph::input(std::string name, Shape shape) {
    if (named_.count(name)) throw ShapeError("duplicate graph name '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.shape = std::move(shape);
    n.name = name;
    const NodeId id = push(std::move(n));
    named_[std::move(name)] = id;
    return id;
}

NodeId Graph::parameter(std::string name, std::shared_ptr<Tensor> storage, bool trainable) {
    if (!storage) throw ShapeError("parameter '" + name + "' has no storage");
    if (named_.count(name)) throw ShapeError("duplicate graph name '" + name + "'");
    Node n;
    n.op = Op::Param;
    n.shape = storage->shape();
    n.name = name;
    n.storage = std::move(storage);
    n.trainable = trainable;
    const NodeId id = push(std::move(n));
    named_[std::move(name)] = id;
    return id;
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Const;
    n.shape = value.shape();
    n.storage = std::make_shared<Tensor>(std::move(value));
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    check_arg(a, "add");
    check_arg(b, "add");
    if (!shape_eq(shape_of(a), shape_of(b))) {
        throw ShapeError(node_msg("add", node_count(), shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b))));
    }
    Node n;
    n.op = Op::Add;
    n.shape = shape_of(a);
    n.args = {a, b};
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    check_arg(a, "sub");
    check_arg(b, "sub");
    if (!shape_eq(shape_of(a), shape_of(b))) {
        throw ShapeError(node_msg("sub", node_count(), shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b))));
    }
    Node n;
    n.op = Op::Sub;
    n.shape = shape_of(a);
    n.args = {a, b};
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    check_arg(a, "mul");
    check_arg(b, "mul");
    if (!shape_eq(shape_of(a), shape_of(b))) {
        throw ShapeError(node_msg("mul", node_count(), shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b))));
    }
    Node n;
    n.op = Op::Mul;
    n.shape = shape_of(a);
    n.args = {a, b};
    return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
    check_arg(x, "scale");
    Node n;
    n.op = Op::Scale;
    n.shape = shape_of(x);
    n.args = {x};
    n.scalar = factor;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    check_arg(a, "matmul");
    check_arg(b, "matmul");
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw ShapeError(node_msg("matmul", node_count(), shape_str(sa) + " x " + shape_str(sb)));
    }
    Node n;
    n.op = Op::MatMul;
    n.shape = {sa[0], sb[1]};
    n.args = {a, b};
    return push(std::move(n));
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
    check_arg(x, "linear");
    check_arg(w, "linear");
    check_arg(b, "linear");
    const Shape& sx = shape_of(x);
    const Shape& sw = shape_of(w);
    const Shape& sb = shape_of(b);
    if (sx.size() != 2 || sw.size() != 2 || sb.size() != 1 || sx[1] != sw[1] || sw[0] != sb[0]) {
        throw ShapeError(node_msg("linear", node_count(),
                                  "x" + shape_str(sx) + " W" + shape_str(sw) + " b" + shape_str(sb)));
    }
    Node n;
    n.op = Op::Linear;
    n.shape = {sx[0], sw[0]};
    n.args = {x, w, b};
    return push(std::move(n));
}

NodeId Graph::conv1d(NodeId x, NodeId w, NodeId b, int stride, int dilation) {
    check_arg(x, "conv1d");
    check_arg(w, "conv1d");
    check_arg(b, "conv1d");
    const Shape& sx = shape_of(x);
    const Shape& sw = shape_of(w);
    const Shape& sb = shape_of(b);
    if (sx.size() != 3 || sw.size() != 3 || sb.size() != 1) {
        throw ShapeError(node_msg("conv1d", node_count(), "expects x(N,Ci,T) w(Co,Ci,K) b(Co)"));
    }
    if (sw[1] != sx[1] || sb[0] != sw[0]) {
        throw ShapeError(node_msg("conv1d", node_count(),
                                  "x" + shape_str(sx) + " w" + shape_str(sw) + " b" + shape_str(sb)));
    }
    if (stride < 1 || dilation < 1) throw ShapeError(node_msg("conv1d", node_count(), "stride/dilation must be >= 1"));
    if (sw[2] % 2 == 0) throw ShapeError(node_msg("conv1d", node_count(), "kernel length must be odd"));
    const int t = sx[2];
    const int span = dilation * (sw[2] - 1) + 1;
    const int pad = dilation * (sw[2] - 1) / 2;
    const int t_out = (t + 2 * pad - span) / stride + 1;
    if (t_out < 1) throw ShapeError(node_msg("conv1d", node_count(), "time axis too short for kernel"));
    Node n;
    n.op = Op::Conv1d;
    n.shape = {sx[0], sw[0], t_out};
    n.args = {x, w, b};
    n.i0 = stride;
    n.i1 = dilation;
    return push(std::move(n));
}

NodeId Graph::gru_seq(NodeId x, const GruWeights& w) {
    const NodeId ids[9] = {w.wz, w.wr, w.wh, w.uz, w.ur, w.uh, w.bz, w.br, w.bh};
    check_arg(x, "gru_seq");
    for (const NodeId id : ids) check_arg(id, "gru_seq");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("gru_seq", node_count(), "expects x(N,Ci,T)"));
    const Shape& swz = shape_of(w.wz);
    if (swz.size() != 2 || swz[1] != sx[1]) {
        throw ShapeError(node_msg("gru_seq", node_count(), "Wz" + shape_str(swz) + " vs x" + shape_str(sx)));
    }
    const int h = swz[0];
    auto want = [&](NodeId id, const Shape& s, const char* label) {
        if (!shape_eq(shape_of(id), s)) {
            throw ShapeError(node_msg("gru_seq", node_count(),
                                      std::string(label) + shape_str(shape_of(id)) + " expected " + shape_str(s)));
        }
    };
    want(w.wr, {h, sx[1]}, "Wr");
    want(w.wh, {h, sx[1]}, "Wh");
    want(w.uz, {h, h}, "Uz");
    want(w.ur, {h, h}, "Ur");
    want(w.uh, {h, h}, "Uh");
    want(w.bz, {h}, "bz");
    want(w.br, {h}, "br");
    want(w.bh, {h}, "bh");
    Node n;
    n.op = Op::GruSeq;
    n.shape = {sx[0], h, sx[2]};
    n.args = {x, w.wz, w.wr, w.wh, w.uz, w.ur, w.uh, w.bz, w.br, w.bh};
    return push(std::move(n));
}

NodeId Graph::avg_pool1d(NodeId x, int window, int stride) {
    check_arg(x, "avg_pool1d");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("avg_pool1d", node_count(), "expects (N,C,T)"));
    if (window < 1 || stride < 1 || window > sx[2]) {
        throw ShapeError(node_msg("avg_pool1d", node_count(), "bad window/stride"));
    }
    Node n;
    n.op = Op::AvgPool1d;
    n.shape = {sx[0], sx[1], (sx[2] - window) / stride + 1};
    n.args = {x};
    n.i0 = window;
    n.i1 = stride;
    return push(std::move(n));
}

NodeId Graph::global_avg_pool_time(NodeId x) {
    check_arg(x, "global_avg_pool_time");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("global_avg_pool_time", node_count(), "expects (N,C,T)"));
    Node n;
    n.op = Op::GlobalAvgPoolTime;
    n.shape = {sx[0], sx[1]};
    n.args = {x};
    return push(std::move(n));
}

NodeId Graph::last_time(NodeId x) {
    check_arg(x, "last_time");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("last_time", node_count(), "expects (N,C,T)"));
    Node n;
    n.op = Op::LastTime;
    n.shape = {sx[0], sx[1]};
    n.args = {x};
    return push(std::move(n));
}

NodeId Graph::upsample1d(NodeId x, int factor) {
    check_arg(x, "upsample1d");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("upsample1d", node_count(), "expects (N,C,T)"));
    if (factor < 1) throw ShapeError(node_msg("upsample1d", node_count(), "factor must be >= 1"));
    Node n;
    n.op = Op::Upsample1d;
    n.shape = {sx[0], sx[1], sx[2] * factor};
    n.args = {x};
    n.i0 = factor;
    return push(std::move(n));
}

NodeId Graph::crop_time(NodeId x, int t_new) {
    check_arg(x, "crop_time");
    const Shape& sx = shape_of(x);
    if (sx.size() != 3) throw ShapeError(node_msg("crop_time", node_count(), "expects (N,C,T)"));
    if (t_new < 1 || t_new > sx[2]) throw ShapeError(node_msg("crop_time", node_count(), "bad target length"));
    Node n;
    n.op = Op::CropTime;
    n.shape = {sx[0], sx[1], t_new};
    n.args = {x};
    n.i0 = t_new;
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
    check_arg(x, "reshape");
    if (shape_numel(shape) != shape_numel(shape_of(x))) {
        throw ShapeError(node_msg("reshape", node_count(),
                                  shape_str(shape_of(x)) + " -> " + shape_str(shape) + " changes element count"));
    }
    Node n;
    n.op = Op::Reshape;
    n.shape = std::move(shape);
    n.args = {x};
    return push(std::move(n));
}

namespace {
Node unary(Op op, NodeId x, const Shape& shape) {
    Node n;
    n.op = op;
    n.shape = shape;
    n.args = {x};
    return n;
}
} // namespace

NodeId Graph::relu(NodeId x) {
    check_arg(x, "relu");
    return push(unary(Op::Relu, x, shape_of(x)));
}

NodeId Graph::sigmoid(NodeId x) {
    check_arg(x, "sigmoid");
    return push(unary(Op::Sigmoid, x, shape_of(x)));
}

NodeId Graph::tanh(NodeId x) {
    check_arg(x, "tanh");
    return push(unary(Op::Tanh, x, shape_of(x)));
}

NodeId Graph::log(NodeId x) {
    check_arg(x, "log");
    return push(unary(Op::Log, x, shape_of(x)));
}

NodeId Graph::softmax(NodeId x) {
    check_arg(x, "softmax");
    if (shape_of(x).empty()) throw ShapeError(node_msg("softmax", node_count(), "scalar input"));
    return push(unary(Op::Softmax, x, shape_of(x)));
}

NodeId Graph::reduce_sum(NodeId x) {
    check_arg(x, "reduce_sum");
    return push(unary(Op::ReduceSum, x, Shape{}));
}

NodeId Graph::reduce_mean(NodeId x) {
    check_arg(x, "reduce_mean");
    return push(unary(Op::ReduceMean, x, Shape{}));
}

NodeId Graph::squared_error(NodeId a, NodeId b) {
    check_arg(a, "squared_error");
    check_arg(b, "squared_error");
    if (!shape_eq(shape_of(a), shape_of(b))) {
        throw ShapeError(node_msg("squared_error", node_count(),
                                  shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b))));
    }
    Node n;
    n.op = Op::SquaredError;
    n.shape = {};
    n.args = {a, b};
    return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, NodeId targets) {
    check_arg(logits, "cross_entropy");
    check_arg(targets, "cross_entropy");
    const Shape& sl = shape_of(logits);
    if (sl.size() != 2 || !shape_eq(sl, shape_of(targets))) {
        throw ShapeError(node_msg("cross_entropy", node_count(),
                                  shape_str(sl) + " vs " + shape_str(shape_of(targets))));
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.shape = {sl[0]};
    n.args = {logits, targets};
    return push(std::move(n));
}

NodeId Graph::kl_div(NodeId p_logits, NodeId q_logits) {
    check_arg(p_logits, "kl_div");
    check_arg(q_logits, "kl_div");
    const Shape& sp = shape_of(p_logits);
    if (sp.size() != 2 || !shape_eq(sp, shape_of(q_logits))) {
        throw ShapeError(node_msg("kl_div", node_count(),
                                  shape_str(sp) + " vs " + shape_str(shape_of(q_logits))));
    }
    Node n;
    n.op = Op::KlDiv;
    n.shape = {sp[0]};
    n.args = {p_logits, q_logits};
    return push(std::move(n));
}

void Graph::set_output(NodeId id) {
    check_arg(id, "set_output");
    output_ = id;
}

NodeId Graph::output_node() const {
    if (output_ < 0) throw ShapeError("graph has no nodes");
    return output_;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Evaluation Graph::evaluate(const std::map<std::string, Tensor>& inputs) const {
    if (nodes_.empty()) throw ShapeError("evaluate on empty graph");
    Evaluation ev;
    ev.graph_ = this;
    ev.values_.resize(nodes_.size());
    ev.aux_.resize(nodes_.size());

    for (NodeId id = 0; id < node_count(); ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        Tensor& out = ev.values_[static_cast<std::size_t>(id)];
        auto val = [&](int k) -> const Tensor& { return ev.values_[static_cast<std::size_t>(n.args[static_cast<std::size_t>(k)])]; };

        switch (n.op) {
            case Op::Input: {
                const auto it = inputs.find(n.name);
                if (it == inputs.end()) {
                    throw ShapeError(node_msg("evaluate", id, "input '" + n.name + "' not bound"));
                }
                if (!shape_eq(it->second.shape(), n.shape)) {
                    throw ShapeError(node_msg("evaluate", id, "input '" + n.name + "' shape " +
                                              shape_str(it->second.shape()) + " expected " + shape_str(n.shape)));
                }
                if (!it->second.all_finite()) {
                    throw NumericError(node_msg("evaluate", id, "input '" + n.name + "' contains non-finite values"));
                }
                out = it->second;
                break;
            }
            case Op::Param:
            case Op::Const: {
                if (!shape_eq(n.storage->shape(), n.shape)) {
                    throw ShapeError(node_msg("evaluate", id, "parameter '" + n.name + "' storage shape changed"));
                }
                out = *n.storage;
                break;
            }
            case Op::Add: {
                out = val(0);
                out.add_scaled(val(1), 1.0);
                break;
            }
            case Op::Sub: {
                out = val(0);
                out.add_scaled(val(1), -1.0);
                break;
            }
            case Op::Mul: {
                out = val(0);
                const Tensor& b = val(1);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
                break;
            }
            case Op::Scale: {
                out = val(0);
                out.scale(n.scalar);
                break;
            }
            case Op::MatMul: {
                const Tensor& a = val(0);
                const Tensor& b = val(1);
                const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
                out = Tensor::zeros({m, p});
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = a[idx2(k, i, kk)];
                        const double* brow = b.data() + static_cast<std::size_t>(kk) * p;
                        double* orow = out.data() + static_cast<std::size_t>(i) * p;
                        for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
                    }
                }
                break;
            }
            case Op::Linear: {
                const Tensor& x = val(0);
                const Tensor& w = val(1);
                const Tensor& b = val(2);
                const int nn = x.dim(0), f = x.dim(1), o = w.dim(0);
                out = Tensor::zeros({nn, o});
                for (int i = 0; i < nn; ++i) {
                    const double* xrow = x.data() + static_cast<std::size_t>(i) * f;
                    double* orow = out.data() + static_cast<std::size_t>(i) * o;
                    for (int j = 0; j < o; ++j) {
                        const double* wrow = w.data() + static_cast<std::size_t>(j) * f;
                        double acc = b[static_cast<std::size_t>(j)];
                        for (int q = 0; q < f; ++q) acc += xrow[q] * wrow[q];
                        orow[j] = acc;
                    }
                }
                break;
            }
            case Op::Conv1d: {
                const Tensor& x = val(0);
                const Tensor& w = val(1);
                const Tensor& b = val(2);
                const int nn = x.dim(0), ci = x.dim(1), t = x.dim(2);
                const int co = w.dim(0), kk = w.dim(2);
                const int stride = n.i0, dil = n.i1;
                const int pad = dil * (kk - 1) / 2;
                const int t_out = n.shape[2];
                out = Tensor::zeros(n.shape);
                for (int in = 0; in < nn; ++in) {
                    for (int oc = 0; oc < co; ++oc) {
                        double* orow = out.data() + idx3(co, t_out, in, oc, 0);
                        const double bias = b[static_cast<std::size_t>(oc)];
                        for (int to = 0; to < t_out; ++to) orow[to] = bias;
                        for (int icn = 0; icn < ci; ++icn) {
                            const double* xrow = x.data() + idx3(ci, t, in, icn, 0);
                            const double* wrow = w.data() + idx3(ci, kk, oc, icn, 0);
                            for (int ik = 0; ik < kk; ++ik) {
                                const int off = ik * dil - pad;
                                const double wv = wrow[ik];
                                // valid output range for this tap
                                int to_lo = 0;
                                if (off < 0) to_lo = (-off + stride - 1) / stride;
                                int to_hi = t_out - 1;
                                const int max_ti = t - 1 - off;
                                if (max_ti < 0) continue;
                                if (max_ti / stride < to_hi) to_hi = max_ti / stride;
                                const double* xp = xrow + off + static_cast<std::ptrdiff_t>(to_lo) * stride;
                                for (int to = to_lo; to <= to_hi; ++to, xp += stride) {
                                    orow[to] += wv * *xp;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::GruSeq: {
                const Tensor& x = val(0);
                const Tensor& wz = val(1);
                const Tensor& wr = val(2);
                const Tensor& wh = val(3);
                const Tensor& uz = val(4);
                const Tensor& ur = val(5);
                const Tensor& uh = val(6);
                const Tensor& bz = val(7);
                const Tensor& br = val(8);
                const Tensor& bh = val(9);
                const int nn = x.dim(0), ci = x.dim(1), t = x.dim(2);
                const int h = wz.dim(0);
                out = Tensor::zeros({nn, h, t});
                Tensor zs = Tensor::zeros({nn, h, t});
                Tensor rs = Tensor::zeros({nn, h, t});
                Tensor cs = Tensor::zeros({nn, h, t});
                std::vector<double> hprev(static_cast<std::size_t>(h));
                std::vector<double> xt(static_cast<std::size_t>(ci));
                for (int in = 0; in < nn; ++in) {
                    std::fill(hprev.begin(), hprev.end(), 0.0);
                    for (int it = 0; it < t; ++it) {
                        for (int q = 0; q < ci; ++q) xt[static_cast<std::size_t>(q)] = x[idx3(ci, t, in, q, it)];
                        for (int j = 0; j < h; ++j) {
                            const double* wzr = wz.data() + static_cast<std::size_t>(j) * ci;
                            const double* wrr = wr.data() + static_cast<std::size_t>(j) * ci;
                            const double* whr = wh.data() + static_cast<std::size_t>(j) * ci;
                            const double* uzr = uz.data() + static_cast<std::size_t>(j) * h;
                            const double* urr = ur.data() + static_cast<std::size_t>(j) * h;
                            double az = bz[static_cast<std::size_t>(j)];
                            double ar = br[static_cast<std::size_t>(j)];
                            double ah_in = bh[static_cast<std::size_t>(j)];
                            for (int q = 0; q < ci; ++q) {
                                const double xv = xt[static_cast<std::size_t>(q)];
                                az += wzr[q] * xv;
                                ar += wrr[q] * xv;
                                ah_in += whr[q] * xv;
                            }
                            for (int q = 0; q < h; ++q) {
                                az += uzr[q] * hprev[static_cast<std::size_t>(q)];
                                ar += urr[q] * hprev[static_cast<std::size_t>(q)];
                            }
                            zs[idx3(h, t, in, j, it)] = 1.0 / (1.0 + std::exp(-az));
                            rs[idx3(h, t, in, j, it)] = 1.0 / (1.0 + std::exp(-ar));
                            cs[idx3(h, t, in, j, it)] = ah_in;   // candidate pre-activation, Uh part added below
                        }
                        // candidate needs r * hprev through Uh
                        for (int j = 0; j < h; ++j) {
                            const double* uhr = uh.data() + static_cast<std::size_t>(j) * h;
                            double acc = cs[idx3(h, t, in, j, it)];
                            for (int q = 0; q < h; ++q) {
                                acc += uhr[q] * rs[idx3(h, t, in, q, it)] * hprev[static_cast<std::size_t>(q)];
                            }
                            cs[idx3(h, t, in, j, it)] = std::tanh(acc);
                        }
                        for (int j = 0; j < h; ++j) {
                            const double z = zs[idx3(h, t, in, j, it)];
                            const double c = cs[idx3(h, t, in, j, it)];
                            const double hv = (1.0 - z) * hprev[static_cast<std::size_t>(j)] + z * c;
                            out[idx3(h, t, in, j, it)] = hv;
                            hprev[static_cast<std::size_t>(j)] = hv;
                        }
                    }
                }
                ev.aux_[static_cast<std::size_t>(id)] = {std::move(zs), std::move(rs), std::move(cs)};
                break;
            }
            case Op::AvgPool1d: {
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int wlen = n.i0, stride = n.i1;
                const int t_out = n.shape[2];
                out = Tensor::zeros(n.shape);
                const double inv = 1.0 / wlen;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* xrow = x.data() + idx3(c, t, in, ic, 0);
                        double* orow = out.data() + idx3(c, t_out, in, ic, 0);
                        for (int to = 0; to < t_out; ++to) {
                            double acc = 0.0;
                            const int base = to * stride;
                            for (int q = 0; q < wlen; ++q) acc += xrow[base + q];
                            orow[to] = acc * inv;
                        }
                    }
                }
                break;
            }
            case Op::GlobalAvgPoolTime: {
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                out = Tensor::zeros({nn, c});
                const double inv = 1.0 / t;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* xrow = x.data() + idx3(c, t, in, ic, 0);
                        double acc = 0.0;
                        for (int it = 0; it < t; ++it) acc += xrow[it];
                        out[idx2(c, in, ic)] = acc * inv;
                    }
                }
                break;
            }
            case Op::LastTime: {
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                out = Tensor::zeros({nn, c});
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        out[idx2(c, in, ic)] = x[idx3(c, t, in, ic, t - 1)];
                    }
                }
                break;
            }
            case Op::Upsample1d: {
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int f = n.i0;
                out = Tensor::zeros(n.shape);
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* xrow = x.data() + idx3(c, t, in, ic, 0);
                        double* orow = out.data() + idx3(c, t * f, in, ic, 0);
                        for (int it = 0; it < t; ++it) {
                            for (int q = 0; q < f; ++q) orow[it * f + q] = xrow[it];
                        }
                    }
                }
                break;
            }
            case Op::CropTime: {
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int tn = n.i0;
                out = Tensor::zeros({nn, c, tn});
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* xrow = x.data() + idx3(c, t, in, ic, 0);
                        double* orow = out.data() + idx3(c, tn, in, ic, 0);
                        for (int it = 0; it < tn; ++it) orow[it] = xrow[it];
                    }
                }
                break;
            }
            case Op::Reshape: {
                out = Tensor(n.shape, std::vector<double>(val(0).data(), val(0).data() + val(0).size()));
                break;
            }
            case Op::Relu: {
                out = val(0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
                break;
            }
            case Op::Sigmoid: {
                out = val(0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
                break;
            }
            case Op::Tanh: {
                out = val(0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
                break;
            }
            case Op::Log: {
                out = val(0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
                break;
            }
            case Op::Softmax: {
                const Tensor& x = val(0);
                const int c = x.shape().back();
                const std::size_t rows = x.size() / static_cast<std::size_t>(c);
                out = Tensor::zeros(x.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    softmax_row(x.data() + r * static_cast<std::size_t>(c), out.data() + r * static_cast<std::size_t>(c), c);
                }
                break;
            }
            case Op::ReduceSum: {
                out = Tensor::scalar(val(0).sum());
                break;
            }
            case Op::ReduceMean: {
                out = Tensor::scalar(val(0).sum() / static_cast<double>(val(0).size()));
                break;
            }
            case Op::SquaredError: {
                const Tensor& a = val(0);
                const Tensor& b = val(1);
                double acc = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double d = a[i] - b[i];
                    acc += d * d;
                }
                out = Tensor::scalar(acc / static_cast<double>(a.size()));
                break;
            }
            case Op::CrossEntropy: {
                const Tensor& l = val(0);
                const Tensor& y = val(1);
                const int nn = l.dim(0), c = l.dim(1);
                out = Tensor::zeros({nn});
                Tensor sm = Tensor::zeros({nn, c});
                for (int in = 0; in < nn; ++in) {
                    const double* lrow = l.data() + static_cast<std::size_t>(in) * c;
                    double* srow = sm.data() + static_cast<std::size_t>(in) * c;
                    softmax_row(lrow, srow, c);
                    double acc = 0.0;
                    const double* yrow = y.data() + static_cast<std::size_t>(in) * c;
                    for (int j = 0; j < c; ++j) {
                        if (yrow[j] != 0.0) acc -= yrow[j] * std::log(std::max(srow[j], 1e-300));
                    }
                    out[static_cast<std::size_t>(in)] = acc;
                }
                ev.aux_[static_cast<std::size_t>(id)] = {std::move(sm)};
                break;
            }
            case Op::KlDiv: {
                const Tensor& pl = val(0);
                const Tensor& ql = val(1);
                const int nn = pl.dim(0), c = pl.dim(1);
                out = Tensor::zeros({nn});
                Tensor psm = Tensor::zeros({nn, c});
                Tensor qsm = Tensor::zeros({nn, c});
                for (int in = 0; in < nn; ++in) {
                    const std::size_t base = static_cast<std::size_t>(in) * c;
                    softmax_row(pl.data() + base, psm.data() + base, c);
                    softmax_row(ql.data() + base, qsm.data() + base, c);
                    double acc = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double p = psm[base + static_cast<std::size_t>(j)];
                        const double q = qsm[base + static_cast<std::size_t>(j)];
                        acc += p * (std::log(std::max(p, 1e-300)) - std::log(std::max(q, 1e-300)));
                    }
                    out[static_cast<std::size_t>(in)] = acc;
                }
                ev.aux_[static_cast<std::size_t>(id)] = {std::move(psm), std::move(qsm)};
                break;
            }
        }

        if (n.op != Op::Input && !out.all_finite()) {
            throw NumericError(node_msg("evaluate", id, std::string("non-finite ") + op_name(n.op) + " output"));
        }
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

const Tensor& Evaluation::output() const {
    return values_[static_cast<std::size_t>(graph_->output_node())];
}

const Tensor& Evaluation::value(NodeId id) const {
    if (id < 0 || id >= graph_->node_count()) throw ShapeError("value: bad node id");
    return values_[static_cast<std::size_t>(id)];
}

std::map<std::string, Tensor> Evaluation::backward(const std::vector<std::string>& wrt,
                                                   const Tensor* seed) const {
    const Graph& g = *graph_;
    const NodeId out_id = g.output_node();
    const Tensor& out_val = values_[static_cast<std::size_t>(out_id)];

    if (!out_val.shape().empty() && seed == nullptr) {
        throw ShapeError("backward: non-scalar output requires an explicit seed");
    }
    if (seed != nullptr && !shape_eq(seed->shape(), out_val.shape())) {
        throw ShapeError("backward: seed shape " + shape_str(seed->shape()) +
                         " does not match output " + shape_str(out_val.shape()));
    }

    // Resolve requested names and mark every node that can reach one of them,
    // so gradient work is only spent on paths that matter.
    std::vector<NodeId> targets;
    targets.reserve(wrt.size());
    for (const std::string& name : wrt) {
        const auto it = g.named_nodes().find(name);
        if (it == g.named_nodes().end()) throw ShapeError("backward: unknown name '" + name + "'");
        targets.push_back(it->second);
    }
    std::vector<char> needed(static_cast<std::size_t>(g.node_count()), 0);
    for (const NodeId t : targets) needed[static_cast<std::size_t>(t)] = 1;
    for (NodeId id = 0; id < g.node_count(); ++id) {
        const Node& n = g.node(id);
        for (const NodeId a : n.args) {
            if (needed[static_cast<std::size_t>(a)]) {
                needed[static_cast<std::size_t>(id)] = 1;
                break;
            }
        }
    }

    std::vector<Tensor> grads(static_cast<std::size_t>(g.node_count()));
    std::vector<char> has_grad(static_cast<std::size_t>(g.node_count()), 0);
    auto ensure = [&](NodeId id) -> Tensor& {
        Tensor& t = grads[static_cast<std::size_t>(id)];
        if (!has_grad[static_cast<std::size_t>(id)]) {
            t = Tensor::zeros(g.node(id).shape.empty() ? Shape{} : g.node(id).shape);
            has_grad[static_cast<std::size_t>(id)] = 1;
        }
        return t;
    };

    ensure(out_id);
    if (seed != nullptr) {
        grads[static_cast<std::size_t>(out_id)] = *seed;
    } else {
        grads[static_cast<std::size_t>(out_id)] = Tensor::scalar(1.0);
    }

    for (NodeId id = out_id; id >= 0; --id) {
        if (!has_grad[static_cast<std::size_t>(id)] || !needed[static_cast<std::size_t>(id)]) continue;
        const Node& n = g.node(id);
        const Tensor& gy = grads[static_cast<std::size_t>(id)];
        auto val = [&](int k) -> const Tensor& {
            return values_[static_cast<std::size_t>(n.args[static_cast<std::size_t>(k)])];
        };
        auto arg_needed = [&](int k) {
            return needed[static_cast<std::size_t>(n.args[static_cast<std::size_t>(k)])] != 0;
        };
        auto garg = [&](int k) -> Tensor& { return ensure(n.args[static_cast<std::size_t>(k)]); };

        switch (n.op) {
            case Op::Input:
            case Op::Param:
            case Op::Const:
                break;
            case Op::Add: {
                if (arg_needed(0)) garg(0).add_scaled(gy, 1.0);
                if (arg_needed(1)) garg(1).add_scaled(gy, 1.0);
                break;
            }
            case Op::Sub: {
                if (arg_needed(0)) garg(0).add_scaled(gy, 1.0);
                if (arg_needed(1)) garg(1).add_scaled(gy, -1.0);
                break;
            }
            case Op::Mul: {
                if (arg_needed(0)) {
                    Tensor& ga = garg(0);
                    const Tensor& b = val(1);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * b[i];
                }
                if (arg_needed(1)) {
                    Tensor& gb = garg(1);
                    const Tensor& a = val(0);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * a[i];
                }
                break;
            }
            case Op::Scale: {
                if (arg_needed(0)) garg(0).add_scaled(gy, n.scalar);
                break;
            }
            case Op::MatMul: {
                const Tensor& a = val(0);
                const Tensor& b = val(1);
                const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
                if (arg_needed(0)) {
                    Tensor& ga = garg(0);   // gy (m,p) x b^T (p,k)
                    for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < p; ++j) {
                            const double gv = gy[idx2(p, i, j)];
                            for (int kk = 0; kk < k; ++kk) {
                                ga[idx2(k, i, kk)] += gv * b[idx2(p, kk, j)];
                            }
                        }
                    }
                }
                if (arg_needed(1)) {
                    Tensor& gb = garg(1);   // a^T (k,m) x gy (m,p)
                    for (int i = 0; i < m; ++i) {
                        for (int kk = 0; kk < k; ++kk) {
                            const double av = a[idx2(k, i, kk)];
                            const double* grow = gy.data() + static_cast<std::size_t>(i) * p;
                            double* gbrow = gb.data() + static_cast<std::size_t>(kk) * p;
                            for (int j = 0; j < p; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
                break;
            }
            case Op::Linear: {
                const Tensor& x = val(0);
                const Tensor& w = val(1);
                const int nn = x.dim(0), f = x.dim(1), o = w.dim(0);
                if (arg_needed(0)) {
                    Tensor& gx = garg(0);   // gy (N,O) x W (O,F)
                    for (int i = 0; i < nn; ++i) {
                        double* gxrow = gx.data() + static_cast<std::size_t>(i) * f;
                        const double* grow = gy.data() + static_cast<std::size_t>(i) * o;
                        for (int j = 0; j < o; ++j) {
                            const double gv = grow[j];
                            if (gv == 0.0) continue;
                            const double* wrow = w.data() + static_cast<std::size_t>(j) * f;
                            for (int q = 0; q < f; ++q) gxrow[q] += gv * wrow[q];
                        }
                    }
                }
                if (arg_needed(1)) {
                    Tensor& gw = garg(1);   // gy^T (O,N) x x (N,F)
                    for (int i = 0; i < nn; ++i) {
                        const double* xrow = x.data() + static_cast<std::size_t>(i) * f;
                        const double* grow = gy.data() + static_cast<std::size_t>(i) * o;
                        for (int j = 0; j < o; ++j) {
                            const double gv = grow[j];
                            if (gv == 0.0) continue;
                            double* gwrow = gw.data() + static_cast<std::size_t>(j) * f;
                            for (int q = 0; q < f; ++q) gwrow[q] += gv * xrow[q];
                        }
                    }
                }
                if (arg_needed(2)) {
                    Tensor& gb = garg(2);
                    for (int i = 0; i < nn; ++i) {
                        const double* grow = gy.data() + static_cast<std::size_t>(i) * o;
                        for (int j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += grow[j];
                    }
                }
                break;
            }
            case Op::Conv1d: {
                const Tensor& x = val(0);
                const Tensor& w = val(1);
                const int nn = x.dim(0), ci = x.dim(1), t = x.dim(2);
                const int co = w.dim(0), kk = w.dim(2);
                const int stride = n.i0, dil = n.i1;
                const int pad = dil * (kk - 1) / 2;
                const int t_out = n.shape[2];
                const bool need_x = arg_needed(0);
                const bool need_w = arg_needed(1);
                const bool need_b = arg_needed(2);
                Tensor* gx = need_x ? &garg(0) : nullptr;
                Tensor* gw = need_w ? &garg(1) : nullptr;
                Tensor* gb = need_b ? &garg(2) : nullptr;
                for (int in = 0; in < nn; ++in) {
                    for (int oc = 0; oc < co; ++oc) {
                        const double* grow = gy.data() + idx3(co, t_out, in, oc, 0);
                        if (need_b) {
                            double acc = 0.0;
                            for (int to = 0; to < t_out; ++to) acc += grow[to];
                            (*gb)[static_cast<std::size_t>(oc)] += acc;
                        }
                        if (!need_x && !need_w) continue;
                        for (int icn = 0; icn < ci; ++icn) {
                            const double* xrow = x.data() + idx3(ci, t, in, icn, 0);
                            const double* wrow = w.data() + idx3(ci, kk, oc, icn, 0);
                            double* gxrow = need_x ? gx->data() + idx3(ci, t, in, icn, 0) : nullptr;
                            double* gwrow = need_w ? gw->data() + idx3(ci, kk, oc, icn, 0) : nullptr;
                            for (int ik = 0; ik < kk; ++ik) {
                                const int off = ik * dil - pad;
                                int to_lo = 0;
                                if (off < 0) to_lo = (-off + stride - 1) / stride;
                                int to_hi = t_out - 1;
                                const int max_ti = t - 1 - off;
                                if (max_ti < 0) continue;
                                if (max_ti / stride < to_hi) to_hi = max_ti / stride;
                                if (need_x) {
                                    const double wv = wrow[ik];
                                    double* gxp = gxrow + off + static_cast<std::ptrdiff_t>(to_lo) * stride;
                                    for (int to = to_lo; to <= to_hi; ++to, gxp += stride) {
                                        *gxp += wv * grow[to];
                                    }
                                }
                                if (need_w) {
                                    const double* xp = xrow + off + static_cast<std::ptrdiff_t>(to_lo) * stride;
                                    double acc = 0.0;
                                    for (int to = to_lo; to <= to_hi; ++to, xp += stride) {
                                        acc += *xp * grow[to];
                                    }
                                    gwrow[ik] += acc;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::GruSeq: {
                const Tensor& x = val(0);
                const Tensor& wz = val(1);
                const Tensor& wr = val(2);
                const Tensor& wh = val(3);
                const Tensor& uz = val(4);
                const Tensor& ur = val(5);
                const Tensor& uh = val(6);
                const Tensor& hs = values_[static_cast<std::size_t>(id)];
                const auto& aux = aux_[static_cast<std::size_t>(id)];
                const Tensor& zs = aux[0];
                const Tensor& rs = aux[1];
                const Tensor& cs = aux[2];
                const int nn = x.dim(0), ci = x.dim(1), t = x.dim(2);
                const int h = wz.dim(0);

                // Gradients are accumulated into whichever of the ten
                // arguments are on a requested path; the BPTT recurrence
                // itself always needs the carry.
                Tensor* gargs[10] = {};
                for (int k = 0; k < 10; ++k) gargs[k] = arg_needed(k) ? &ensure(n.args[static_cast<std::size_t>(k)]) : nullptr;

                std::vector<double> dh(static_cast<std::size_t>(h));
                std::vector<double> daz(static_cast<std::size_t>(h)), dar(static_cast<std::size_t>(h)), dah(static_cast<std::size_t>(h));
                std::vector<double> hprev(static_cast<std::size_t>(h)), drh(static_cast<std::size_t>(h));
                for (int in = 0; in < nn; ++in) {
                    std::fill(dh.begin(), dh.end(), 0.0);
                    for (int it = t - 1; it >= 0; --it) {
                        for (int j = 0; j < h; ++j) {
                            hprev[static_cast<std::size_t>(j)] = it > 0 ? hs[idx3(h, t, in, j, it - 1)] : 0.0;
                            dh[static_cast<std::size_t>(j)] += gy[idx3(h, t, in, j, it)];
                        }
                        for (int j = 0; j < h; ++j) {
                            const double z = zs[idx3(h, t, in, j, it)];
                            const double c = cs[idx3(h, t, in, j, it)];
                            const double dz = dh[static_cast<std::size_t>(j)] * (c - hprev[static_cast<std::size_t>(j)]);
                            const double dc = dh[static_cast<std::size_t>(j)] * z;
                            dah[static_cast<std::size_t>(j)] = dc * (1.0 - c * c);
                            daz[static_cast<std::size_t>(j)] = dz * z * (1.0 - z);
                            dh[static_cast<std::size_t>(j)] *= (1.0 - z);   // direct path into h_prev
                        }
                        // through Uh: d(r*hprev) = Uh^T dah
                        std::fill(drh.begin(), drh.end(), 0.0);
                        for (int j = 0; j < h; ++j) {
                            const double g = dah[static_cast<std::size_t>(j)];
                            if (g == 0.0) continue;
                            const double* uhr = uh.data() + static_cast<std::size_t>(j) * h;
                            for (int q = 0; q < h; ++q) drh[static_cast<std::size_t>(q)] += g * uhr[q];
                            if (gargs[6]) {
                                double* guhr = gargs[6]->data() + static_cast<std::size_t>(j) * h;
                                for (int q = 0; q < h; ++q) {
                                    guhr[q] += g * rs[idx3(h, t, in, q, it)] * hprev[static_cast<std::size_t>(q)];
                                }
                            }
                        }
                        for (int j = 0; j < h; ++j) {
                            const double r = rs[idx3(h, t, in, j, it)];
                            const double dr = drh[static_cast<std::size_t>(j)] * hprev[static_cast<std::size_t>(j)];
                            dar[static_cast<std::size_t>(j)] = dr * r * (1.0 - r);
                            dh[static_cast<std::size_t>(j)] += drh[static_cast<std::size_t>(j)] * r;
                        }
                        // input and recurrent weight gradients + carry
                        for (int j = 0; j < h; ++j) {
                            const double gz = daz[static_cast<std::size_t>(j)];
                            const double gr = dar[static_cast<std::size_t>(j)];
                            const double gh = dah[static_cast<std::size_t>(j)];
                            if (gargs[7]) (*gargs[7])[static_cast<std::size_t>(j)] += gz;
                            if (gargs[8]) (*gargs[8])[static_cast<std::size_t>(j)] += gr;
                            if (gargs[9]) (*gargs[9])[static_cast<std::size_t>(j)] += gh;
                            if (gargs[1] || gargs[2] || gargs[3] || gargs[0]) {
                                const double* wzr = wz.data() + static_cast<std::size_t>(j) * ci;
                                const double* wrr = wr.data() + static_cast<std::size_t>(j) * ci;
                                const double* whr = wh.data() + static_cast<std::size_t>(j) * ci;
                                for (int q = 0; q < ci; ++q) {
                                    const double xv = x[idx3(ci, t, in, q, it)];
                                    if (gargs[1]) gargs[1]->data()[static_cast<std::size_t>(j) * ci + q] += gz * xv;
                                    if (gargs[2]) gargs[2]->data()[static_cast<std::size_t>(j) * ci + q] += gr * xv;
                                    if (gargs[3]) gargs[3]->data()[static_cast<std::size_t>(j) * ci + q] += gh * xv;
                                    if (gargs[0]) {
                                        gargs[0]->data()[idx3(ci, t, in, q, it)] +=
                                            gz * wzr[q] + gr * wrr[q] + gh * whr[q];
                                    }
                                }
                            }
                            if (gargs[4] || gargs[5]) {
                                for (int q = 0; q < h; ++q) {
                                    const double hv = hprev[static_cast<std::size_t>(q)];
                                    if (gargs[4]) gargs[4]->data()[static_cast<std::size_t>(j) * h + q] += gz * hv;
                                    if (gargs[5]) gargs[5]->data()[static_cast<std::size_t>(j) * h + q] += gr * hv;
                                }
                            }
                        }
                        // carry through Uz, Ur into h_prev
                        for (int j = 0; j < h; ++j) {
                            const double gz = daz[static_cast<std::size_t>(j)];
                            const double gr = dar[static_cast<std::size_t>(j)];
                            if (gz != 0.0) {
                                const double* uzr = uz.data() + static_cast<std::size_t>(j) * h;
                                for (int q = 0; q < h; ++q) dh[static_cast<std::size_t>(q)] += gz * uzr[q];
                            }
                            if (gr != 0.0) {
                                const double* urr = ur.data() + static_cast<std::size_t>(j) * h;
                                for (int q = 0; q < h; ++q) dh[static_cast<std::size_t>(q)] += gr * urr[q];
                            }
                        }
                    }
                }
                break;
            }
            case Op::AvgPool1d: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int wlen = n.i0, stride = n.i1;
                const int t_out = n.shape[2];
                const double inv = 1.0 / wlen;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* grow = gy.data() + idx3(c, t_out, in, ic, 0);
                        double* gxrow = gx.data() + idx3(c, t, in, ic, 0);
                        for (int to = 0; to < t_out; ++to) {
                            const double gv = grow[to] * inv;
                            const int base = to * stride;
                            for (int q = 0; q < wlen; ++q) gxrow[base + q] += gv;
                        }
                    }
                }
                break;
            }
            case Op::GlobalAvgPoolTime: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const double inv = 1.0 / t;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double gv = gy[idx2(c, in, ic)] * inv;
                        double* gxrow = gx.data() + idx3(c, t, in, ic, 0);
                        for (int it = 0; it < t; ++it) gxrow[it] += gv;
                    }
                }
                break;
            }
            case Op::LastTime: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        gx[idx3(c, t, in, ic, t - 1)] += gy[idx2(c, in, ic)];
                    }
                }
                break;
            }
            case Op::Upsample1d: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int f = n.i0;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* grow = gy.data() + idx3(c, t * f, in, ic, 0);
                        double* gxrow = gx.data() + idx3(c, t, in, ic, 0);
                        for (int it = 0; it < t; ++it) {
                            double acc = 0.0;
                            for (int q = 0; q < f; ++q) acc += grow[it * f + q];
                            gxrow[it] += acc;
                        }
                    }
                }
                break;
            }
            case Op::CropTime: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                const int nn = x.dim(0), c = x.dim(1), t = x.dim(2);
                const int tn = n.i0;
                for (int in = 0; in < nn; ++in) {
                    for (int ic = 0; ic < c; ++ic) {
                        const double* grow = gy.data() + idx3(c, tn, in, ic, 0);
                        double* gxrow = gx.data() + idx3(c, t, in, ic, 0);
                        for (int it = 0; it < tn; ++it) gxrow[it] += grow[it];
                    }
                }
                break;
            }
            case Op::Reshape: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                break;
            }
            case Op::Relu: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                // subgradient at 0 is 0
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
                break;
            }
            case Op::Sigmoid: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& s = values_[static_cast<std::size_t>(id)];
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * s[i] * (1.0 - s[i]);
                break;
            }
            case Op::Tanh: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& s = values_[static_cast<std::size_t>(id)];
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (1.0 - s[i] * s[i]);
                break;
            }
            case Op::Log: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& x = val(0);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] / x[i];
                break;
            }
            case Op::Softmax: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const Tensor& s = values_[static_cast<std::size_t>(id)];
                const int c = s.shape().back();
                const std::size_t rows = s.size() / static_cast<std::size_t>(c);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* srow = s.data() + r * static_cast<std::size_t>(c);
                    const double* grow = gy.data() + r * static_cast<std::size_t>(c);
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += grow[j] * srow[j];
                    double* gxrow = gx.data() + r * static_cast<std::size_t>(c);
                    for (int j = 0; j < c; ++j) gxrow[j] += srow[j] * (grow[j] - dot);
                }
                break;
            }
            case Op::ReduceSum: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const double gv = gy[0];
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
                break;
            }
            case Op::ReduceMean: {
                if (!arg_needed(0)) break;
                Tensor& gx = garg(0);
                const double gv = gy[0] / static_cast<double>(gx.size());
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
                break;
            }
            case Op::SquaredError: {
                const Tensor& a = val(0);
                const Tensor& b = val(1);
                const double gv = 2.0 * gy[0] / static_cast<double>(a.size());
                if (arg_needed(0)) {
                    Tensor& ga = garg(0);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv * (a[i] - b[i]);
                }
                if (arg_needed(1)) {
                    Tensor& gb = garg(1);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gv * (a[i] - b[i]);
                }
                break;
            }
            case Op::CrossEntropy: {
                const Tensor& y = val(1);
                const Tensor& sm = aux_[static_cast<std::size_t>(id)][0];
                const int nn = y.dim(0), c = y.dim(1);
                if (arg_needed(0)) {
                    Tensor& gl = garg(0);
                    for (int in = 0; in < nn; ++in) {
                        const double gv = gy[static_cast<std::size_t>(in)];
                        if (gv == 0.0) continue;
                        const std::size_t base = static_cast<std::size_t>(in) * c;
                        double ysum = 0.0;
                        for (int j = 0; j < c; ++j) ysum += y[base + static_cast<std::size_t>(j)];
                        for (int j = 0; j < c; ++j) {
                            gl[base + static_cast<std::size_t>(j)] +=
                                gv * (sm[base + static_cast<std::size_t>(j)] * ysum - y[base + static_cast<std::size_t>(j)]);
                        }
                    }
                }
                if (arg_needed(1)) {
                    Tensor& gt = garg(1);
                    for (int in = 0; in < nn; ++in) {
                        const double gv = gy[static_cast<std::size_t>(in)];
                        const std::size_t base = static_cast<std::size_t>(in) * c;
                        for (int j = 0; j < c; ++j) {
                            gt[base + static_cast<std::size_t>(j)] -=
                                gv * std::log(std::max(sm[base + static_cast<std::size_t>(j)], 1e-300));
                        }
                    }
                }
                break;
            }
            case Op::KlDiv: {
                const Tensor& psm = aux_[static_cast<std::size_t>(id)][0];
                const Tensor& qsm = aux_[static_cast<std::size_t>(id)][1];
                const Tensor& klv = values_[static_cast<std::size_t>(id)];
                const int nn = psm.dim(0), c = psm.dim(1);
                if (arg_needed(0)) {
                    Tensor& gp = garg(0);
                    for (int in = 0; in < nn; ++in) {
                        const double gv = gy[static_cast<std::size_t>(in)];
                        if (gv == 0.0) continue;
                        const std::size_t base = static_cast<std::size_t>(in) * c;
                        const double kl = klv[static_cast<std::size_t>(in)];
                        for (int j = 0; j < c; ++j) {
                            const double p = psm[base + static_cast<std::size_t>(j)];
                            const double q = qsm[base + static_cast<std::size_t>(j)];
                            const double contrast = std::log(std::max(p, 1e-300)) - std::log(std::max(q, 1e-300));
                            gp[base + static_cast<std::size_t>(j)] += gv * p * (contrast - kl);
                        }
                    }
                }
                if (arg_needed(1)) {
                    Tensor& gq = garg(1);
                    for (int in = 0; in < nn; ++in) {
                        const double gv = gy[static_cast<std::size_t>(in)];
                        if (gv == 0.0) continue;
                        const std::size_t base = static_cast<std::size_t>(in) * c;
                        for (int j = 0; j < c; ++j) {
                            gq[base + static_cast<std::size_t>(j)] +=
                                gv * (qsm[base + static_cast<std::size_t>(j)] - psm[base + static_cast<std::size_t>(j)]);
                        }
                    }
                }
                break;
            }
        }
    }

    std::map<std::string, Tensor> result;
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        const NodeId t = targets[i];
        if (has_grad[static_cast<std::size_t>(t)]) {
            result[wrt[i]] = std::move(grads[static_cast<std::size_t>(t)]);
        } else {
            result[wrt[i]] = Tensor::zeros(g.node(t).shape);
        }
    }
    return result;
}

} // namespace csi::grad
