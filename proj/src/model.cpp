#include "crac/model.hpp"

#include <cmath>
#include <stdexcept>

#include "crac/rng.hpp"

namespace crac {

namespace {

void add_conv(std::vector<LayerSpec>& t, const std::string& name, std::size_t out_c,
              std::size_t in_c, std::size_t k) {
    t.push_back({name + ".w", {out_c, in_c, k, k}});
    t.push_back({name + ".b", {out_c}});
}

}  // namespace

std::vector<LayerSpec> architecture_table(std::size_t num_classes, std::size_t in_channels) {
    if (num_classes < 2) throw std::invalid_argument("model requires at least 2 classes");
    std::vector<LayerSpec> t;
    add_conv(t, "enc0.c1", 8, in_channels, 3);
    add_conv(t, "enc0.c2", 8, 8, 3);
    add_conv(t, "enc1.c1", 16, 8, 3);
    add_conv(t, "enc1.c2", 16, 16, 3);
    add_conv(t, "enc2.c1", 32, 16, 3);
    add_conv(t, "enc2.c2", 32, 32, 3);
    add_conv(t, "dec1.c1", 16, 32 + 16, 3);
    add_conv(t, "dec1.c2", 16, 16, 3);
    add_conv(t, "dec0.c1", 8, 16 + 8, 3);
    add_conv(t, "dec0.c2", 8, 8, 3);
    add_conv(t, "head", num_classes, 8, 1);
    return t;
}

Tensor& ModelParams::at(const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::invalid_argument("unknown parameter: " + name);
}

const Tensor& ModelParams::at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::invalid_argument("unknown parameter: " + name);
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values) n += t.size();
    return n;
}

ModelParams build_model(std::uint64_t seed, std::size_t num_classes, std::size_t in_channels) {
    ModelParams p;
    p.num_classes = num_classes;
    p.in_channels = in_channels;
    const auto table = architecture_table(num_classes, in_channels);
    for (std::size_t idx = 0; idx < table.size(); ++idx) {
        const LayerSpec& spec = table[idx];
        Tensor t = Tensor::zeros(spec.shape);
        if (spec.shape.size() == 4) {
            // He initialization: each parameter tensor draws from its own
            // stream so layouts stay reproducible.
            const double fan_in =
                static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
            const double stddev = std::sqrt(2.0 / fan_in);
            Rng rng(seed, 0x6d6f64656cULL + idx);
            for (double& v : t.data) v = rng.normal(0.0, stddev);
        }
        p.names.push_back(spec.name);
        p.values.push_back(std::move(t));
    }
    return p;
}

namespace {

Value conv_block(Graph& g, Value x, Value w, Value b) { return g.relu(g.conv2d(x, w, b)); }

}  // namespace

ModelForward model_forward(Graph& graph, const ModelParams& params, Tensor batch) {
    if (batch.shape.size() != 4 || batch.shape[1] != params.in_channels)
        throw std::invalid_argument("model_forward: batch must be [B," +
                                    std::to_string(params.in_channels) + ",H,W], got " +
                                    shape_str(batch.shape));
    if (batch.shape[2] % 4 != 0 || batch.shape[3] % 4 != 0)
        throw std::invalid_argument(
            "model_forward: spatial extents must be divisible by 4, got " +
            shape_str(batch.shape));

    ModelForward out;
    std::vector<Value> handles;
    handles.reserve(params.values.size());
    for (const Tensor& t : params.values) handles.push_back(graph.parameter(t));
    out.params = handles;

    const auto h = [&](const std::string& name) -> Value {
        for (std::size_t i = 0; i < params.names.size(); ++i)
            if (params.names[i] == name) return handles[i];
        throw std::invalid_argument("model_forward: missing parameter " + name);
    };

    Value x = graph.constant(std::move(batch));
    Value e0 = conv_block(graph, conv_block(graph, x, h("enc0.c1.w"), h("enc0.c1.b")),
                          h("enc0.c2.w"), h("enc0.c2.b"));
    Value p0 = graph.maxpool2(e0);
    Value e1 = conv_block(graph, conv_block(graph, p0, h("enc1.c1.w"), h("enc1.c1.b")),
                          h("enc1.c2.w"), h("enc1.c2.b"));
    Value p1 = graph.maxpool2(e1);
    Value e2 = conv_block(graph, conv_block(graph, p1, h("enc2.c1.w"), h("enc2.c1.b")),
                          h("enc2.c2.w"), h("enc2.c2.b"));

    Value u1 = graph.concat_channels(graph.upsample2(e2), e1);
    Value d1 = conv_block(graph, conv_block(graph, u1, h("dec1.c1.w"), h("dec1.c1.b")),
                          h("dec1.c2.w"), h("dec1.c2.b"));
    Value u0 = graph.concat_channels(graph.upsample2(d1), e0);
    Value d0 = conv_block(graph, conv_block(graph, u0, h("dec0.c1.w"), h("dec0.c1.b")),
                          h("dec0.c2.w"), h("dec0.c2.b"));

    out.logits = graph.conv2d(d0, h("head.w"), h("head.b"));
    return out;
}

void save_model(const ModelParams& params, TensorStore& store, const std::string& prefix) {
    for (std::size_t i = 0; i < params.names.size(); ++i)
        store.put_tensor(prefix + params.names[i], params.values[i]);
    store.put_scalar(prefix + "meta.num_classes", static_cast<double>(params.num_classes));
    store.put_scalar(prefix + "meta.in_channels", static_cast<double>(params.in_channels));
}

ModelParams load_model(const TensorStore& store, const std::string& prefix) {
    ModelParams p;
    p.num_classes = static_cast<std::size_t>(store.scalar(prefix + "meta.num_classes"));
    p.in_channels = static_cast<std::size_t>(store.scalar(prefix + "meta.in_channels"));
    for (const LayerSpec& spec : architecture_table(p.num_classes, p.in_channels)) {
        Tensor t = store.tensor(prefix + spec.name);
        if (t.shape != spec.shape)
            throw std::runtime_error("checkpoint parameter " + spec.name +
                                     " has shape " + shape_str(t.shape) + ", expected " +
                                     shape_str(spec.shape));
        p.names.push_back(spec.name);
        p.values.push_back(std::move(t));
    }
    return p;
}

}  // namespace crac
