#include "crac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "crac/rng.hpp"

namespace crac {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

void require_4d(const Tensor& t, const char* what) {
    if (t.shape.size() != 4)
        fail(std::string(what) + ": expected a [B,C,H,W] tensor, got shape " + shape_str(t.shape));
}

void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by ") + what);
    }
}

}  // namespace

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        fail("tensor shape " + shape_str(shape) + " does not match data length " +
             std::to_string(data.size()));
}

Tensor Tensor::zeros(const Shape& s) { return Tensor(s, std::vector<double>(shape_numel(s), 0.0)); }

Tensor Tensor::full(const Shape& s, double v) {
    return Tensor(s, std::vector<double>(shape_numel(s), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
        if (e == 0) fail("zero extent in shape");
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar_mul";
        case Op::ScalarAdd: return "scalar_add";
        case Op::MatMul: return "matmul";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::MaxPool2: return "maxpool2";
        case Op::Upsample2: return "upsample2";
        case Op::ConcatChannels: return "concat_channels";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Abs: return "abs";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SoftmaxChannels: return "softmax_channels";
        case Op::LogSoftmaxChannels: return "log_softmax_channels";
        case Op::CrossEntropyMap: return "cross_entropy_map";
        case Op::SelectChannel: return "select_channel";
        case Op::ChannelMax: return "channel_max";
        case Op::BroadcastChannels: return "broadcast_channels";
        case Op::PowConst: return "pow_const";
        case Op::PhrMap: return "phr_map";
    }
    return "?";
}

const Tensor& Value::tensor() const {
    if (!graph) fail("value is not attached to a graph");
    return graph->node(id).value;
}

const Shape& Value::shape() const { return tensor().shape; }

double Value::item() const {
    const Tensor& t = tensor();
    if (t.size() != 1) fail("item() requires a single-element tensor, shape " + shape_str(t.shape));
    return t.data[0];
}

// ---------------------------------------------------------------------------
// forward kernels
// ---------------------------------------------------------------------------

namespace {

struct ExecExtra {
    std::vector<std::uint32_t> arg_idx;
    double kink = kInf;  // relu/abs origin, PHR kink
    double tie = kInf;   // maxpool/channel_max top-two gap
};

void exec_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    out = Tensor::zeros({B, O, H, W});

    const std::ptrdiff_t sH = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t sW = static_cast<std::ptrdiff_t>(W);
    for (std::size_t n = 0; n < B; ++n) {
        const double* xb = x.data.data() + n * C * H * W;
        double* yb = out.data.data() + n * O * H * W;
        for (std::size_t o = 0; o < O; ++o) {
            double* yo = yb + o * H * W;
            std::fill(yo, yo + H * W, b.data[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* xc = xb + c * H * W;
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(u) - ph;
                    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di);
                    const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(sH, sH - di);
                    for (std::size_t v = 0; v < kw; ++v) {
                        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(v) - pw;
                        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj);
                        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(sW, sW - dj);
                        const double wv = w.data[((o * C + c) * kh + u) * kw + v];
                        if (wv == 0.0 || j0 >= j1) continue;
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            double* yrow = yo + i * sW;
                            const double* xrow = xc + (i + di) * sW + dj;
                            for (std::ptrdiff_t j = j0; j < j1; ++j) yrow[j] += wv * xrow[j];
                        }
                    }
                }
            }
        }
    }
}

void exec_node(const Graph::Node& spec, const std::vector<const Tensor*>& in, Tensor& out,
               ExecExtra& extra) {
    switch (spec.op) {
        case Op::Leaf:
            fail("leaf nodes are not executed");
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Tensor& a = *in[0];
            const Tensor& b = *in[1];
            out = Tensor::zeros(a.shape);
            const std::size_t n = a.size();
            if (spec.op == Op::Add)
                for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[i];
            else if (spec.op == Op::Sub)
                for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] - b.data[i];
            else
                for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b.data[i];
            break;
        }
        case Op::ScalarMul: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * spec.scalar;
            break;
        }
        case Op::ScalarAdd: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + spec.scalar;
            break;
        }
        case Op::MatMul: {
            const Tensor& a = *in[0];
            const Tensor& b = *in[1];
            const std::size_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
            out = Tensor::zeros({M, N});
            for (std::size_t i = 0; i < M; ++i) {
                double* orow = out.data.data() + i * N;
                for (std::size_t k = 0; k < K; ++k) {
                    const double av = a.data[i * K + k];
                    const double* brow = b.data.data() + k * N;
                    for (std::size_t j = 0; j < N; ++j) orow[j] += av * brow[j];
                }
            }
            break;
        }
        case Op::Conv2d:
            exec_conv2d(*in[0], *in[1], *in[2], out);
            break;
        case Op::Relu: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            double kd = kInf;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double v = a.data[i];
                out.data[i] = v > 0.0 ? v : 0.0;
                kd = std::min(kd, std::fabs(v));
            }
            extra.kink = kd;
            break;
        }
        case Op::MaxPool2: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
            const std::size_t Ho = H / 2, Wo = W / 2;
            out = Tensor::zeros({B, C, Ho, Wo});
            extra.arg_idx.resize(out.size());
            double kd = kInf;
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const double* src = a.data.data() + bc * H * W;
                double* dst = out.data.data() + bc * Ho * Wo;
                std::uint32_t* arg = extra.arg_idx.data() + bc * Ho * Wo;
                for (std::size_t i = 0; i < Ho; ++i) {
                    for (std::size_t j = 0; j < Wo; ++j) {
                        const std::size_t base = (2 * i) * W + 2 * j;
                        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                        std::size_t best = cand[0];
                        double top = src[best], second = -kInf;
                        for (int t = 1; t < 4; ++t) {
                            const double v = src[cand[t]];
                            if (v > top) {
                                second = top;
                                top = v;
                                best = cand[t];
                            } else {
                                second = std::max(second, v);
                            }
                        }
                        dst[i * Wo + j] = top;
                        arg[i * Wo + j] = static_cast<std::uint32_t>(bc * H * W + best);
                        kd = std::min(kd, top - second);
                    }
                }
            }
            extra.tie = kd;
            break;
        }
        case Op::Upsample2: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
            out = Tensor::zeros({B, C, 2 * H, 2 * W});
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const double* src = a.data.data() + bc * H * W;
                double* dst = out.data.data() + bc * 4 * H * W;
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        const double v = src[i * W + j];
                        double* d = dst + (2 * i) * (2 * W) + 2 * j;
                        d[0] = v;
                        d[1] = v;
                        d[2 * W] = v;
                        d[2 * W + 1] = v;
                    }
                }
            }
            break;
        }
        case Op::ConcatChannels: {
            const Tensor& a = *in[0];
            const Tensor& b = *in[1];
            const std::size_t B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1];
            const std::size_t HW = a.shape[2] * a.shape[3];
            out = Tensor::zeros({B, Ca + Cb, a.shape[2], a.shape[3]});
            for (std::size_t n = 0; n < B; ++n) {
                std::copy_n(a.data.data() + n * Ca * HW, Ca * HW,
                            out.data.data() + n * (Ca + Cb) * HW);
                std::copy_n(b.data.data() + n * Cb * HW, Cb * HW,
                            out.data.data() + n * (Ca + Cb) * HW + Ca * HW);
            }
            break;
        }
        case Op::Exp: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::exp(a.data[i]);
            break;
        }
        case Op::Log: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::log(a.data[i]);
            break;
        }
        case Op::Abs: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            double kd = kInf;
            for (std::size_t i = 0; i < a.size(); ++i) {
                out.data[i] = std::fabs(a.data[i]);
                kd = std::min(kd, std::fabs(a.data[i]));
            }
            extra.kink = kd;
            break;
        }
        case Op::Sum: {
            const Tensor& a = *in[0];
            double acc = 0.0;
            for (double v : a.data) acc += v;
            out = Tensor::scalar(acc);
            break;
        }
        case Op::Mean: {
            const Tensor& a = *in[0];
            double acc = 0.0;
            for (double v : a.data) acc += v;
            out = Tensor::scalar(acc / static_cast<double>(a.size()));
            break;
        }
        case Op::SoftmaxChannels:
        case Op::LogSoftmaxChannels: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0], K = a.shape[1];
            const std::size_t HW = a.shape[2] * a.shape[3];
            out = Tensor::zeros(a.shape);
            for (std::size_t n = 0; n < B; ++n) {
                const double* src = a.data.data() + n * K * HW;
                double* dst = out.data.data() + n * K * HW;
                for (std::size_t p = 0; p < HW; ++p) {
                    double m = src[p];
                    for (std::size_t k = 1; k < K; ++k) m = std::max(m, src[k * HW + p]);
                    double denom = 0.0;
                    for (std::size_t k = 0; k < K; ++k) denom += std::exp(src[k * HW + p] - m);
                    if (spec.op == Op::SoftmaxChannels) {
                        for (std::size_t k = 0; k < K; ++k)
                            dst[k * HW + p] = std::exp(src[k * HW + p] - m) / denom;
                    } else {
                        const double lse = m + std::log(denom);
                        for (std::size_t k = 0; k < K; ++k) dst[k * HW + p] = src[k * HW + p] - lse;
                    }
                }
            }
            break;
        }
        case Op::CrossEntropyMap: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0], K = a.shape[1];
            const std::size_t HW = a.shape[2] * a.shape[3];
            out = Tensor::zeros({B, a.shape[2], a.shape[3]});
            for (std::size_t n = 0; n < B; ++n) {
                const double* src = a.data.data() + n * K * HW;
                double* dst = out.data.data() + n * HW;
                for (std::size_t p = 0; p < HW; ++p) {
                    double m = src[p];
                    for (std::size_t k = 1; k < K; ++k) m = std::max(m, src[k * HW + p]);
                    double denom = 0.0;
                    for (std::size_t k = 0; k < K; ++k) denom += std::exp(src[k * HW + p] - m);
                    const double lse = m + std::log(denom);
                    dst[p] = lse - src[spec.labels[n * HW + p] * HW + p];
                }
            }
            break;
        }
        case Op::SelectChannel: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0];
            const std::size_t HW = a.shape[2] * a.shape[3];
            out = Tensor::zeros({B, 1, a.shape[2], a.shape[3]});
            for (std::size_t n = 0; n < B; ++n) {
                const double* src = a.data.data() + n * a.shape[1] * HW;
                double* dst = out.data.data() + n * HW;
                for (std::size_t p = 0; p < HW; ++p) dst[p] = src[spec.labels[n * HW + p] * HW + p];
            }
            break;
        }
        case Op::ChannelMax: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0], K = a.shape[1];
            const std::size_t HW = a.shape[2] * a.shape[3];
            out = Tensor::zeros({B, 1, a.shape[2], a.shape[3]});
            extra.arg_idx.resize(B * HW);
            double kd = kInf;
            for (std::size_t n = 0; n < B; ++n) {
                const double* src = a.data.data() + n * K * HW;
                for (std::size_t p = 0; p < HW; ++p) {
                    std::size_t best = 0;
                    double top = src[p], second = -kInf;
                    for (std::size_t k = 1; k < K; ++k) {
                        const double v = src[k * HW + p];
                        if (v > top) {
                            second = top;
                            top = v;
                            best = k;
                        } else {
                            second = std::max(second, v);
                        }
                    }
                    out.data[n * HW + p] = top;
                    extra.arg_idx[n * HW + p] =
                        static_cast<std::uint32_t>((n * K + best) * HW + p);
                    if (K > 1) kd = std::min(kd, top - second);
                }
            }
            extra.tie = kd;
            break;
        }
        case Op::BroadcastChannels: {
            const Tensor& a = *in[0];
            const std::size_t B = a.shape[0];
            const std::size_t HW = a.shape[2] * a.shape[3];
            const std::size_t K = static_cast<std::size_t>(spec.scalar);
            out = Tensor::zeros({B, K, a.shape[2], a.shape[3]});
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t k = 0; k < K; ++k)
                    std::copy_n(a.data.data() + n * HW, HW,
                                out.data.data() + (n * K + k) * HW);
            break;
        }
        case Op::PowConst: {
            const Tensor& a = *in[0];
            out = Tensor::zeros(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::pow(a.data[i], spec.scalar);
            break;
        }
        case Op::PhrMap: {
            const Tensor& z = *in[0];
            out = Tensor::zeros(z.shape);
            double kd = kInf;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double rho = spec.aux_a[i];
                const double lam = spec.aux_b[i];
                const double t = lam + rho * z.data[i];
                out.data[i] = t >= 0.0 ? lam * z.data[i] + 0.5 * rho * z.data[i] * z.data[i]
                                       : -lam * lam / (2.0 * rho);
                kd = std::min(kd, std::fabs(t) / rho);
            }
            extra.kink = kd;
            break;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// graph recording
// ---------------------------------------------------------------------------

Value Graph::emplace(Node node) {
    std::vector<const Tensor*> inputs;
    inputs.reserve(node.inputs.size());
    bool path = node.is_param;
    for (NodeId in : node.inputs) {
        inputs.push_back(&nodes_[in].value);
        path = path || nodes_[in].on_grad_path;
    }
    node.on_grad_path = path;
    if (node.op != Op::Leaf) {
        ExecExtra extra;
        exec_node(node, inputs, node.value, extra);
        node.arg_idx = std::move(extra.arg_idx);
        kink_distance_ = std::min(kink_distance_, extra.kink);
        tie_gap_ = std::min(tie_gap_, extra.tie);
    }
    check_finite(node.value, op_name(node.op));
    nodes_.push_back(std::move(node));
    return Value{this, nodes_.size() - 1};
}

const Graph::Node& Graph::checked(Value v, const char* what) const {
    if (v.graph != this || v.id >= nodes_.size())
        fail(std::string(what) + ": detached node (value does not belong to this graph)");
    return nodes_[v.id];
}

Value Graph::parameter(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.is_param = true;
    n.value = std::move(t);
    return emplace(std::move(n));
}

Value Graph::constant(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    return emplace(std::move(n));
}

namespace {
Graph::Node make_node(Op op, std::initializer_list<NodeId> inputs) {
    Graph::Node n;
    n.op = op;
    n.inputs = inputs;
    return n;
}
}  // namespace

Value Graph::add(Value a, Value b) {
    const Node& na = checked(a, "add");
    const Node& nb = checked(b, "add");
    require(na.value.same_shape(nb.value), "add: shape mismatch " + shape_str(na.value.shape) +
                                               " vs " + shape_str(nb.value.shape));
    return emplace(make_node(Op::Add, {a.id, b.id}));
}

Value Graph::sub(Value a, Value b) {
    const Node& na = checked(a, "sub");
    const Node& nb = checked(b, "sub");
    require(na.value.same_shape(nb.value), "sub: shape mismatch " + shape_str(na.value.shape) +
                                               " vs " + shape_str(nb.value.shape));
    return emplace(make_node(Op::Sub, {a.id, b.id}));
}

Value Graph::mul(Value a, Value b) {
    const Node& na = checked(a, "mul");
    const Node& nb = checked(b, "mul");
    require(na.value.same_shape(nb.value), "mul: shape mismatch " + shape_str(na.value.shape) +
                                               " vs " + shape_str(nb.value.shape));
    return emplace(make_node(Op::Mul, {a.id, b.id}));
}

Value Graph::scalar_mul(Value a, double c) {
    checked(a, "scalar_mul");
    Node n = make_node(Op::ScalarMul, {a.id});
    n.scalar = c;
    return emplace(std::move(n));
}

Value Graph::scalar_add(Value a, double c) {
    checked(a, "scalar_add");
    Node n = make_node(Op::ScalarAdd, {a.id});
    n.scalar = c;
    return emplace(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
    const Node& na = checked(a, "matmul");
    const Node& nb = checked(b, "matmul");
    require(na.value.shape.size() == 2 && nb.value.shape.size() == 2,
            "matmul: expects rank-2 tensors");
    require(na.value.shape[1] == nb.value.shape[0],
            "matmul: inner extents differ, " + shape_str(na.value.shape) + " x " +
                shape_str(nb.value.shape));
    return emplace(make_node(Op::MatMul, {a.id, b.id}));
}

Value Graph::conv2d(Value x, Value w, Value b) {
    const Node& nx = checked(x, "conv2d");
    const Node& nw = checked(w, "conv2d");
    const Node& nb = checked(b, "conv2d");
    require_4d(nx.value, "conv2d input");
    require_4d(nw.value, "conv2d kernel");
    require(nw.value.shape[2] % 2 == 1 && nw.value.shape[3] % 2 == 1,
            "conv2d: kernel extents must be odd");
    require(nw.value.shape[1] == nx.value.shape[1],
            "conv2d: kernel channels " + std::to_string(nw.value.shape[1]) +
                " do not match input channels " + std::to_string(nx.value.shape[1]));
    require(nb.value.shape == Shape{nw.value.shape[0]},
            "conv2d: bias must have one entry per output channel");
    return emplace(make_node(Op::Conv2d, {x.id, w.id, b.id}));
}

Value Graph::relu(Value a) {
    checked(a, "relu");
    return emplace(make_node(Op::Relu, {a.id}));
}

Value Graph::maxpool2(Value a) {
    const Node& na = checked(a, "maxpool2");
    require_4d(na.value, "maxpool2");
    require(na.value.shape[2] % 2 == 0 && na.value.shape[3] % 2 == 0,
            "maxpool2: spatial extents must be even, got " + shape_str(na.value.shape));
    return emplace(make_node(Op::MaxPool2, {a.id}));
}

Value Graph::upsample2(Value a) {
    const Node& na = checked(a, "upsample2");
    require_4d(na.value, "upsample2");
    return emplace(make_node(Op::Upsample2, {a.id}));
}

Value Graph::concat_channels(Value a, Value b) {
    const Node& na = checked(a, "concat_channels");
    const Node& nb = checked(b, "concat_channels");
    require_4d(na.value, "concat_channels");
    require_4d(nb.value, "concat_channels");
    require(na.value.shape[0] == nb.value.shape[0] && na.value.shape[2] == nb.value.shape[2] &&
                na.value.shape[3] == nb.value.shape[3],
            "concat_channels: batch/spatial extents differ");
    return emplace(make_node(Op::ConcatChannels, {a.id, b.id}));
}

Value Graph::exp(Value a) {
    checked(a, "exp");
    return emplace(make_node(Op::Exp, {a.id}));
}

Value Graph::log(Value a) {
    checked(a, "log");
    return emplace(make_node(Op::Log, {a.id}));
}

Value Graph::abs(Value a) {
    checked(a, "abs");
    return emplace(make_node(Op::Abs, {a.id}));
}

Value Graph::sum(Value a) {
    checked(a, "sum");
    return emplace(make_node(Op::Sum, {a.id}));
}

Value Graph::mean(Value a) {
    checked(a, "mean");
    return emplace(make_node(Op::Mean, {a.id}));
}

Value Graph::softmax_channels(Value a) {
    const Node& na = checked(a, "softmax_channels");
    require_4d(na.value, "softmax_channels");
    return emplace(make_node(Op::SoftmaxChannels, {a.id}));
}

Value Graph::log_softmax_channels(Value a) {
    const Node& na = checked(a, "log_softmax_channels");
    require_4d(na.value, "log_softmax_channels");
    return emplace(make_node(Op::LogSoftmaxChannels, {a.id}));
}

namespace {
void require_labels(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                    const char* what) {
    const std::size_t pixels = logits.shape[0] * logits.shape[2] * logits.shape[3];
    require(labels.size() == pixels, std::string(what) + ": labels length " +
                                         std::to_string(labels.size()) + " does not match " +
                                         std::to_string(pixels) + " pixels");
    for (std::uint8_t y : labels)
        require(y < logits.shape[1], std::string(what) + ": label value " + std::to_string(y) +
                                         " out of range for " + std::to_string(logits.shape[1]) +
                                         " classes");
}
}  // namespace

Value Graph::cross_entropy_map(Value logits, std::vector<std::uint8_t> labels) {
    const Node& nl = checked(logits, "cross_entropy_map");
    require_4d(nl.value, "cross_entropy_map");
    require_labels(nl.value, labels, "cross_entropy_map");
    Node n = make_node(Op::CrossEntropyMap, {logits.id});
    n.labels = std::move(labels);
    return emplace(std::move(n));
}

Value Graph::select_channel(Value a, std::vector<std::uint8_t> labels) {
    const Node& na = checked(a, "select_channel");
    require_4d(na.value, "select_channel");
    require_labels(na.value, labels, "select_channel");
    Node n = make_node(Op::SelectChannel, {a.id});
    n.labels = std::move(labels);
    return emplace(std::move(n));
}

Value Graph::channel_max(Value a) {
    const Node& na = checked(a, "channel_max");
    require_4d(na.value, "channel_max");
    return emplace(make_node(Op::ChannelMax, {a.id}));
}

Value Graph::broadcast_channels(Value a, std::size_t k) {
    const Node& na = checked(a, "broadcast_channels");
    require_4d(na.value, "broadcast_channels");
    require(na.value.shape[1] == 1, "broadcast_channels: input must have a single channel");
    require(k >= 1, "broadcast_channels: channel count must be positive");
    Node n = make_node(Op::BroadcastChannels, {a.id});
    n.scalar = static_cast<double>(k);
    return emplace(std::move(n));
}

Value Graph::pow_const(Value a, double e) {
    checked(a, "pow_const");
    Node n = make_node(Op::PowConst, {a.id});
    n.scalar = e;
    return emplace(std::move(n));
}

Value Graph::phr_map(Value z, std::vector<double> rho, std::vector<double> lambda) {
    const Node& nz = checked(z, "phr_map");
    require(rho.size() == nz.value.size() && lambda.size() == nz.value.size(),
            "phr_map: rho/lambda must match the z tensor element count");
    for (std::size_t i = 0; i < rho.size(); ++i)
        require(rho[i] > 0.0 && lambda[i] > 0.0, "phr_map: rho and lambda must be positive");
    Node n = make_node(Op::PhrMap, {z.id});
    n.aux_a = std::move(rho);
    n.aux_b = std::move(lambda);
    return emplace(std::move(n));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

void backward_conv2d(const Graph::Node& node, const Tensor& x, const Tensor& w, const Tensor& g,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    (void)node;
    const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    const std::ptrdiff_t sH = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t sW = static_cast<std::ptrdiff_t>(W);

    if (db) {
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t o = 0; o < O; ++o) {
                const double* grow = g.data.data() + (n * O + o) * H * W;
                double acc = 0.0;
                for (std::size_t p = 0; p < H * W; ++p) acc += grow[p];
                db->data[o] += acc;
            }
    }
    for (std::size_t n = 0; n < B; ++n) {
        const double* xb = x.data.data() + n * C * H * W;
        const double* gb = g.data.data() + n * O * H * W;
        double* dxb = dx ? dx->data.data() + n * C * H * W : nullptr;
        for (std::size_t o = 0; o < O; ++o) {
            const double* go = gb + o * H * W;
            for (std::size_t c = 0; c < C; ++c) {
                const double* xc = xb + c * H * W;
                double* dxc = dxb ? dxb + c * H * W : nullptr;
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(u) - ph;
                    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di);
                    const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(sH, sH - di);
                    for (std::size_t v = 0; v < kw; ++v) {
                        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(v) - pw;
                        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj);
                        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(sW, sW - dj);
                        if (j0 >= j1) continue;
                        const std::size_t widx = ((o * C + c) * kh + u) * kw + v;
                        const double wv = w.data[widx];
                        double wacc = 0.0;
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            const double* grow = go + i * sW;
                            const double* xrow = xc + (i + di) * sW + dj;
                            double* dxrow = dxc ? dxc + (i + di) * sW + dj : nullptr;
                            if (dw)
                                for (std::ptrdiff_t j = j0; j < j1; ++j) wacc += grow[j] * xrow[j];
                            if (dxrow)
                                for (std::ptrdiff_t j = j0; j < j1; ++j) dxrow[j] += wv * grow[j];
                        }
                        if (dw) dw->data[widx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

void Graph::accumulate_backward(const Node& node, const Tensor& adjoint,
                                std::vector<Tensor*> in_grads) const {
    const auto input = [&](std::size_t i) -> const Tensor& { return nodes_[node.inputs[i]].value; };
    switch (node.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            for (int s = 0; s < 2; ++s)
                if (in_grads[s])
                    for (std::size_t i = 0; i < adjoint.size(); ++i)
                        in_grads[s]->data[i] += adjoint.data[i];
            break;
        }
        case Op::Sub: {
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += adjoint.data[i];
            if (in_grads[1])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[1]->data[i] -= adjoint.data[i];
            break;
        }
        case Op::Mul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += adjoint.data[i] * b.data[i];
            if (in_grads[1])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[1]->data[i] += adjoint.data[i] * a.data[i];
            break;
        }
        case Op::ScalarMul: {
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += node.scalar * adjoint.data[i];
            break;
        }
        case Op::ScalarAdd: {
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += adjoint.data[i];
            break;
        }
        case Op::MatMul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
            if (in_grads[0]) {
                // dA = g . B^T
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < N; ++j)
                            acc += adjoint.data[i * N + j] * b.data[k * N + j];
                        in_grads[0]->data[i * K + k] += acc;
                    }
            }
            if (in_grads[1]) {
                // dB = A^T . g
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t i = 0; i < M; ++i) {
                        const double av = a.data[i * K + k];
                        for (std::size_t j = 0; j < N; ++j)
                            in_grads[1]->data[k * N + j] += av * adjoint.data[i * N + j];
                    }
            }
            break;
        }
        case Op::Conv2d:
            backward_conv2d(node, input(0), input(1), adjoint, in_grads[0], in_grads[1],
                            in_grads[2]);
            break;
        case Op::Relu: {
            const Tensor& a = input(0);
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    if (a.data[i] > 0.0) in_grads[0]->data[i] += adjoint.data[i];
            break;
        }
        case Op::MaxPool2:
        case Op::ChannelMax: {
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[node.arg_idx[i]] += adjoint.data[i];
            break;
        }
        case Op::Upsample2: {
            if (in_grads[0]) {
                const Tensor& a = input(0);
                const std::size_t H = a.shape[2], W = a.shape[3];
                const std::size_t BC = a.shape[0] * a.shape[1];
                for (std::size_t bc = 0; bc < BC; ++bc) {
                    const double* g = adjoint.data.data() + bc * 4 * H * W;
                    double* d = in_grads[0]->data.data() + bc * H * W;
                    for (std::size_t i = 0; i < H; ++i)
                        for (std::size_t j = 0; j < W; ++j) {
                            const double* gq = g + (2 * i) * (2 * W) + 2 * j;
                            d[i * W + j] += gq[0] + gq[1] + gq[2 * W] + gq[2 * W + 1];
                        }
                }
            }
            break;
        }
        case Op::ConcatChannels: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1];
            const std::size_t HW = a.shape[2] * a.shape[3];
            for (std::size_t n = 0; n < B; ++n) {
                const double* g = adjoint.data.data() + n * (Ca + Cb) * HW;
                if (in_grads[0]) {
                    double* d = in_grads[0]->data.data() + n * Ca * HW;
                    for (std::size_t i = 0; i < Ca * HW; ++i) d[i] += g[i];
                }
                if (in_grads[1]) {
                    double* d = in_grads[1]->data.data() + n * Cb * HW;
                    for (std::size_t i = 0; i < Cb * HW; ++i) d[i] += g[Ca * HW + i];
                }
            }
            break;
        }
        case Op::Exp: {
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += adjoint.data[i] * node.value.data[i];
            break;
        }
        case Op::Log: {
            const Tensor& a = input(0);
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i)
                    in_grads[0]->data[i] += adjoint.data[i] / a.data[i];
            break;
        }
        case Op::Abs: {
            const Tensor& a = input(0);
            if (in_grads[0])
                for (std::size_t i = 0; i < adjoint.size(); ++i) {
                    const double s = a.data[i] > 0.0 ? 1.0 : (a.data[i] < 0.0 ? -1.0 : 0.0);
                    in_grads[0]->data[i] += s * adjoint.data[i];
                }
            break;
        }
        case Op::Sum: {
            if (in_grads[0]) {
                const double g = adjoint.data[0];
                for (double& d : in_grads[0]->data) d += g;
            }
            break;
        }
        case Op::Mean: {
            if (in_grads[0]) {
                const double g = adjoint.data[0] / static_cast<double>(in_grads[0]->size());
                for (double& d : in_grads[0]->data) d += g;
            }
            break;
        }
        case Op::SoftmaxChannels: {
            if (in_grads[0]) {
                const std::size_t B = node.value.shape[0], K = node.value.shape[1];
                const std::size_t HW = node.value.shape[2] * node.value.shape[3];
                for (std::size_t n = 0; n < B; ++n) {
                    const double* s = node.value.data.data() + n * K * HW;
                    const double* g = adjoint.data.data() + n * K * HW;
                    double* d = in_grads[0]->data.data() + n * K * HW;
                    for (std::size_t p = 0; p < HW; ++p) {
                        double dot = 0.0;
                        for (std::size_t k = 0; k < K; ++k) dot += g[k * HW + p] * s[k * HW + p];
                        for (std::size_t k = 0; k < K; ++k)
                            d[k * HW + p] += s[k * HW + p] * (g[k * HW + p] - dot);
                    }
                }
            }
            break;
        }
        case Op::LogSoftmaxChannels: {
            if (in_grads[0]) {
                const std::size_t B = node.value.shape[0], K = node.value.shape[1];
                const std::size_t HW = node.value.shape[2] * node.value.shape[3];
                for (std::size_t n = 0; n < B; ++n) {
                    const double* lsm = node.value.data.data() + n * K * HW;
                    const double* g = adjoint.data.data() + n * K * HW;
                    double* d = in_grads[0]->data.data() + n * K * HW;
                    for (std::size_t p = 0; p < HW; ++p) {
                        double gsum = 0.0;
                        for (std::size_t k = 0; k < K; ++k) gsum += g[k * HW + p];
                        for (std::size_t k = 0; k < K; ++k)
                            d[k * HW + p] += g[k * HW + p] - std::exp(lsm[k * HW + p]) * gsum;
                    }
                }
            }
            break;
        }
        case Op::CrossEntropyMap: {
            if (in_grads[0]) {
                const Tensor& l = input(0);
                const std::size_t B = l.shape[0], K = l.shape[1];
                const std::size_t HW = l.shape[2] * l.shape[3];
                for (std::size_t n = 0; n < B; ++n) {
                    const double* src = l.data.data() + n * K * HW;
                    const double* g = adjoint.data.data() + n * HW;
                    double* d = in_grads[0]->data.data() + n * K * HW;
                    for (std::size_t p = 0; p < HW; ++p) {
                        double m = src[p];
                        for (std::size_t k = 1; k < K; ++k) m = std::max(m, src[k * HW + p]);
                        double denom = 0.0;
                        for (std::size_t k = 0; k < K; ++k) denom += std::exp(src[k * HW + p] - m);
                        const std::uint8_t y = node.labels[n * HW + p];
                        for (std::size_t k = 0; k < K; ++k) {
                            const double s = std::exp(src[k * HW + p] - m) / denom;
                            d[k * HW + p] += g[p] * (s - (k == y ? 1.0 : 0.0));
                        }
                    }
                }
            }
            break;
        }
        case Op::SelectChannel: {
            if (in_grads[0]) {
                const Tensor& a = input(0);
                const std::size_t B = a.shape[0], K = a.shape[1];
                const std::size_t HW = a.shape[2] * a.shape[3];
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t p = 0; p < HW; ++p)
                        in_grads[0]->data[(n * K + node.labels[n * HW + p]) * HW + p] +=
                            adjoint.data[n * HW + p];
            }
            break;
        }
        case Op::BroadcastChannels: {
            if (in_grads[0]) {
                const std::size_t K = node.value.shape[1];
                const std::size_t B = node.value.shape[0];
                const std::size_t HW = node.value.shape[2] * node.value.shape[3];
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t p = 0; p < HW; ++p)
                            in_grads[0]->data[n * HW + p] += adjoint.data[(n * K + k) * HW + p];
            }
            break;
        }
        case Op::PowConst: {
            if (in_grads[0]) {
                const Tensor& a = input(0);
                const double e = node.scalar;
                if (e != 0.0)
                    for (std::size_t i = 0; i < adjoint.size(); ++i)
                        in_grads[0]->data[i] +=
                            adjoint.data[i] * e * std::pow(a.data[i], e - 1.0);
            }
            break;
        }
        case Op::PhrMap: {
            if (in_grads[0]) {
                const Tensor& z = input(0);
                for (std::size_t i = 0; i < adjoint.size(); ++i) {
                    const double t = node.aux_b[i] + node.aux_a[i] * z.data[i];
                    if (t > 0.0) in_grads[0]->data[i] += adjoint.data[i] * t;
                }
            }
            break;
        }
    }
}

void Graph::backward(Value loss) {
    const Node& root = checked(loss, "backward");
    if (root.value.size() != 1)
        fail("backward: loss must be scalar, got shape " + shape_str(root.value.shape));

    std::vector<Tensor> adj(nodes_.size());
    adj[loss.id] = Tensor::scalar(1.0);

    const auto ensure = [&](NodeId id) -> Tensor* {
        if (adj[id].data.empty()) adj[id] = Tensor::zeros(nodes_[id].value.shape);
        return &adj[id];
    };

    for (NodeId id = loss.id + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (adj[id].data.empty() || !node.on_grad_path || node.op == Op::Leaf) continue;
        std::vector<Tensor*> in_grads(node.inputs.size(), nullptr);
        for (std::size_t i = 0; i < node.inputs.size(); ++i)
            if (nodes_[node.inputs[i]].on_grad_path) in_grads[i] = ensure(node.inputs[i]);
        accumulate_backward(node, adj[id], std::move(in_grads));
        adj[id] = Tensor();  // release as soon as consumed
    }

    grads_.assign(nodes_.size(), Tensor());
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        if (!nodes_[id].is_param) continue;
        grads_[id] =
            adj[id].data.empty() ? Tensor::zeros(nodes_[id].value.shape) : std::move(adj[id]);
    }
}

const Tensor& Graph::grad(Value param) const {
    const Node& node = checked(param, "grad");
    if (!node.is_param) fail("grad: node is not a parameter leaf");
    if (grads_.size() != nodes_.size() || grads_[param.id].data.empty())
        fail("grad: backward() has not produced a gradient for this parameter");
    return grads_[param.id];
}

double Graph::replay_scalar(Value target, Value leaf, std::size_t elem, double delta) const {
    const Node& t = checked(target, "replay");
    const Node& l = checked(leaf, "replay");
    if (t.value.size() != 1) fail("replay: target must be scalar");
    if (l.op != Op::Leaf) fail("replay: perturbed node must be a leaf");
    if (elem >= l.value.size()) fail("replay: element index out of range");

    std::vector<Tensor> vals(target.id + 1);
    for (NodeId id = 0; id <= target.id; ++id) {
        const Node& node = nodes_[id];
        if (node.op == Op::Leaf) {
            vals[id] = node.value;
            if (id == leaf.id) vals[id].data[elem] += delta;
            continue;
        }
        std::vector<const Tensor*> inputs;
        inputs.reserve(node.inputs.size());
        for (NodeId in : node.inputs) inputs.push_back(&vals[in]);
        ExecExtra extra;
        exec_node(node, inputs, vals[id], extra);
    }
    return vals[target.id].data[0];
}

std::vector<NodeId> Graph::parameter_ids() const {
    std::vector<NodeId> out;
    for (NodeId id = 0; id < nodes_.size(); ++id)
        if (nodes_[id].is_param) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(Graph& graph, Value loss, const GradCheckOptions& opts) {
    if (opts.step <= 0.0) fail("grad_check: step must be positive");
    GradCheckReport report;
    report.kink_distance = graph.kink_distance();
    report.tie_gap = graph.tie_gap();
    report.excluded = report.kink_distance < opts.exclude_eps ||
                      report.tie_gap < opts.tie_exclude_eps;

    graph.backward(loss);

    for (NodeId pid : graph.parameter_ids()) {
        Value param{&graph, pid};
        const Tensor& g = graph.grad(param);
        const std::size_t n = g.size();

        std::vector<std::size_t> elems;
        if (opts.max_elements_per_param == 0 || n <= opts.max_elements_per_param) {
            elems.resize(n);
            for (std::size_t i = 0; i < n; ++i) elems[i] = i;
        } else {
            Rng rng(opts.sample_seed, pid);
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            rng.shuffle(all);
            elems.assign(all.begin(),
                         all.begin() + static_cast<std::ptrdiff_t>(opts.max_elements_per_param));
        }

        GradCheckEntry entry;
        entry.param = pid;
        entry.elements_checked = elems.size();
        for (std::size_t e : elems) {
            const double ad = g.data[e];
            const auto rel_at = [&](double h) {
                const double fp = graph.replay_scalar(loss, param, e, h);
                const double fm = graph.replay_scalar(loss, param, e, -h);
                const double fd = (fp - fm) / (2.0 * h);
                return std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-6});
            };
            // A straddled kink inside the difference interval shrinks away
            // with the step; a wrong gradient does not.
            double rel = rel_at(opts.step);
            if (rel > opts.tolerance) rel = std::min(rel, rel_at(opts.step / 16.0));
            if (rel > opts.tolerance) rel = std::min(rel, rel_at(opts.step / 128.0));
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.pass = entry.max_rel_err <= opts.tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.params.push_back(entry);
    }
    return report;
}

}  // namespace crac
