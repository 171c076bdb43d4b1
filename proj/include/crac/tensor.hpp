#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace crac {

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of doubles. Immutable once handed to a Graph.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double v);
    static Tensor scalar(double v);

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul,
    ScalarAdd,
    MatMul,
    Conv2d,
    Relu,
    MaxPool2,
    Upsample2,
    ConcatChannels,
    Exp,
    Log,
    Abs,
    Sum,
    Mean,
    SoftmaxChannels,
    LogSoftmaxChannels,
    CrossEntropyMap,
    SelectChannel,
    ChannelMax,
    BroadcastChannels,
    PowConst,
    PhrMap,
};

const char* op_name(Op op);

class Graph;
using NodeId = std::size_t;

// Lightweight handle to a graph node.
struct Value {
    Graph* graph = nullptr;
    NodeId id = 0;

    const Tensor& tensor() const;
    const Shape& shape() const;
    double item() const;  // requires a single-element tensor
};

// Recorded computation: append-only list of primitive applications in
// topological order. One graph is owned by one thread; tensors handed out
// are immutable and safe to share read-only.
class Graph {
public:
    struct Node {
        Op op = Op::Leaf;
        Tensor value;
        std::vector<NodeId> inputs;
        bool is_param = false;
        bool on_grad_path = false;
        double scalar = 0.0;                 // ScalarMul/ScalarAdd/PowConst
        std::vector<std::uint8_t> labels;    // CrossEntropyMap/SelectChannel
        std::vector<double> aux_a, aux_b;    // PhrMap rho/lambda
        std::vector<std::uint32_t> arg_idx;  // MaxPool2/ChannelMax argmax
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves. Parameters are the only leaves that receive gradients.
    Value parameter(Tensor t);
    Value constant(Tensor t);

    // Elementwise, identical shapes (broadcasting is out of contract).
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scalar_mul(Value a, double c);
    Value scalar_add(Value a, double c);

    Value matmul(Value a, Value b);  // [M,K] x [K,N]

    // x [B,C,H,W], w [O,C,kh,kw] (odd kh/kw), b [O]; stride 1, zero padding
    // chosen so output extents equal input extents.
    Value conv2d(Value x, Value w, Value b);

    Value relu(Value a);
    Value maxpool2(Value a);    // 2x2/stride 2; H, W must be even
    Value upsample2(Value a);   // nearest neighbour x2
    Value concat_channels(Value a, Value b);

    Value exp(Value a);
    Value log(Value a);
    Value abs(Value a);

    Value sum(Value a);   // all elements -> scalar
    Value mean(Value a);  // all elements -> scalar

    // Channel ops interpret tensors as [B,K,H,W].
    Value softmax_channels(Value a);
    Value log_softmax_channels(Value a);
    // Fused softmax + cross entropy with log-sum-exp stabilization; output is
    // the per-pixel CE map [B,H,W]. labels holds B*H*W class indices.
    Value cross_entropy_map(Value logits, std::vector<std::uint8_t> labels);
    // Per-pixel gather of the true-class channel -> [B,1,H,W].
    Value select_channel(Value a, std::vector<std::uint8_t> labels);
    Value channel_max(Value a);  // -> [B,1,H,W]; ties take the lowest class
    Value broadcast_channels(Value a, std::size_t k);  // [B,1,H,W] -> [B,k,H,W]

    Value pow_const(Value a, double e);

    // Elementwise PHR penalty of z with fixed per-element rho/lambda
    // (positive, not differentiated through). Derivative w.r.t. z is
    // max(0, lambda + rho*z).
    Value phr_map(Value z, std::vector<double> rho, std::vector<double> lambda);

    // Reverse-mode sweep from a scalar loss. Fills gradients for every
    // parameter leaf; other leaves are skipped.
    void backward(Value loss);
    const Tensor& grad(Value param) const;

    // Re-executes the recorded graph with one leaf element nudged by delta
    // and returns the value of `target` (which must be scalar). Replaying
    // with delta = 0 reproduces the recorded value bit-exactly.
    double replay_scalar(Value target, Value leaf, std::size_t elem, double delta) const;

    // Minimum distance to a non-smooth point seen while recording: relu/abs
    // origin and the PHR kink. Infinity when no kinked op ran.
    double kink_distance() const { return kink_distance_; }
    // Smallest top-two gap seen by maxpool/channel_max. A tie (gap 0) between
    // relu-floor zeros is structural in a trained net, so it is reported
    // separately from kink_distance.
    double tie_gap() const { return tie_gap_; }

    std::size_t node_count() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[id]; }
    std::vector<NodeId> parameter_ids() const;

private:
    friend struct Value;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    double kink_distance_ = std::numeric_limits<double>::infinity();
    double tie_gap_ = std::numeric_limits<double>::infinity();

    Value emplace(Node node);
    const Node& checked(Value v, const char* what) const;
    void run_forward(Node& node, const std::vector<const Tensor*>& inputs);
    void accumulate_backward(const Node& node, const Tensor& adjoint,
                             std::vector<Tensor*> input_grads) const;
};

// Per-parameter comparison of reverse-mode gradients against central finite
// differences computed through graph replay.
struct GradCheckEntry {
    NodeId param = 0;
    std::size_t elements_checked = 0;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> params;
    double max_rel_err = 0.0;
    bool pass = true;
    // True when the recorded forward pass came within `exclude_eps` of a
    // kink (or `tie_exclude_eps` of an argmax tie); finite differences
    // straddling a kink are not meaningful, so the caller should regenerate
    // the instance.
    bool excluded = false;
    double kink_distance = 0.0;
    double tie_gap = 0.0;
};

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    double exclude_eps = 1e-6;
    double tie_exclude_eps = 1e-6;
    // Cap on elements probed per parameter (0 = all). Sampling is
    // deterministic in the element index space.
    std::size_t max_elements_per_param = 0;
    std::uint64_t sample_seed = 0x9d5c0ff5u;
};

GradCheckReport grad_check(Graph& graph, Value loss, const GradCheckOptions& opts = {});

}  // namespace crac
