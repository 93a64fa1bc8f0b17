#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "csi/grad/tensor.hpp"

namespace csi::grad {

using NodeId = int;

enum class Op {
    Input,
    Param,
    Const,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Linear,
    Conv1d,
    GruSeq,
    AvgPool1d,
    GlobalAvgPoolTime,
    LastTime,
    Upsample1d,
    CropTime,
    Reshape,
    Relu,
    Sigmoid,
    Tanh,
    Log,
    Softmax,
    ReduceSum,
    ReduceMean,
    SquaredError,
    CrossEntropy,
    KlDiv,
};

const char* op_name(Op op);

struct Node {
    Op op;
    Shape shape;                       // output shape
    std::vector<NodeId> args;
    int i0 = 0;                        // stride / window / factor
    int i1 = 0;                        // dilation / pool stride
    double scalar = 0.0;               // Scale factor
    std::string name;                  // Input / Param name
    std::shared_ptr<Tensor> storage;   // Param storage, Const value
    bool trainable = false;
};

class Evaluation;

// Static dataflow graph over dense tensors with reverse-mode gradients.
//
// Nodes are appended in topological order (an op may only reference nodes
// that already exist), so evaluation is a single forward scan and backward
// a single reverse scan. The structure is fixed once built; parameter
// *values* live in shared storage and may be updated between evaluations
// by a single writer. evaluate() keeps all per-call state in the returned
// Evaluation, so concurrent calls on one graph are safe.
class Graph {
public:
    NodeId input(std::string name, Shape shape);
    NodeId parameter(std::string name, std::shared_ptr<Tensor> storage, bool trainable = true);
    NodeId constant(Tensor value);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, double factor);

    NodeId matmul(NodeId a, NodeId b);
    // x:(N,F) W:(O,F) b:(O) -> x W^T + b :(N,O)
    NodeId linear(NodeId x, NodeId w, NodeId b);

    // x:(N,Ci,T) w:(Co,Ci,K) b:(Co); zero padding dilation*(K-1)/2 per side
    // ("same" length when stride==1). K must be odd.
    NodeId conv1d(NodeId x, NodeId w, NodeId b, int stride = 1, int dilation = 1);

    struct GruWeights {
        NodeId wz, wr, wh;   // (H,Ci)
        NodeId uz, ur, uh;   // (H,H)
        NodeId bz, br, bh;   // (H)
    };
    // Gated-recurrent scan over time. x:(N,Ci,T) -> hidden sequence (N,H,T).
    // Update/reset gates are sigmoid, candidate is tanh:
    //   z=s(Wz x+Uz h+bz), r=s(Wr x+Ur h+br), c=tanh(Wh x+Uh (r*h)+bh),
    //   h' = (1-z)*h + z*c, h0 = 0.
    NodeId gru_seq(NodeId x, const GruWeights& w);

    NodeId avg_pool1d(NodeId x, int window, int stride);
    NodeId global_avg_pool_time(NodeId x);   // (N,C,T) -> (N,C)
    NodeId last_time(NodeId x);              // (N,C,T) -> (N,C)
    NodeId upsample1d(NodeId x, int factor); // nearest-neighbor along T
    NodeId crop_time(NodeId x, int t_new);   // keep the first t_new steps

    NodeId reshape(NodeId x, Shape shape);

    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId tanh(NodeId x);
    NodeId log(NodeId x);
    NodeId softmax(NodeId x);   // along last dim

    NodeId reduce_sum(NodeId x);
    NodeId reduce_mean(NodeId x);

    // mean((a-b)^2) over all elements -> scalar
    NodeId squared_error(NodeId a, NodeId b);
    // logits:(N,C) targets:(N,C) -> per-sample CE with logits, shape (N)
    NodeId cross_entropy(NodeId logits, NodeId targets);
    // KL(softmax(p_logits) || softmax(q_logits)) per sample -> (N)
    NodeId kl_div(NodeId p_logits, NodeId q_logits);

    void set_output(NodeId id);
    NodeId output_node() const;

    // Runs the forward pass. Every input must be bound with a tensor of the
    // declared shape; all intermediates are checked finite.
    Evaluation evaluate(const std::map<std::string, Tensor>& inputs) const;

    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Name -> node id for inputs and parameters.
    const std::map<std::string, NodeId>& named_nodes() const { return named_; }

private:
    friend class Evaluation;

    NodeId push(Node node);
    void check_arg(NodeId id, const char* where) const;
    const Shape& shape_of(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> named_;
    NodeId output_ = -1;
};

// Per-call workspace: forward values (and auxiliary activations needed by
// backward). Produced by Graph::evaluate.
class Evaluation {
public:
    const Tensor& output() const;
    const Tensor& value(NodeId id) const;

    // Gradients of the output w.r.t. the named inputs/parameters in `wrt`.
    // A non-scalar output requires an explicit seed of the output's shape.
    // Fan-out gradients accumulate.
    std::map<std::string, Tensor> backward(const std::vector<std::string>& wrt,
                                           const Tensor* seed = nullptr) const;

private:
    friend class Graph;
    const Graph* graph_ = nullptr;
    std::vector<Tensor> values_;
    std::vector<std::vector<Tensor>> aux_;
};

} // namespace csi::grad
