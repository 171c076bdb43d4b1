#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crac/checkpoint.hpp"
#include "crac/tensor.hpp"

namespace crac {

// Fixed encoder-decoder segmentation net. Two 3x3 conv+relu blocks per level,
// encoder channels 8 -> 16 -> 32 with 2x2 max pooling, decoder with nearest
// x2 upsampling and skip concatenation (upsampled first, then skip), final
// 1x1 conv to K logits. He initialization, zero biases, no normalization
// layers (kept out for determinism).
struct ModelParams {
    std::size_t num_classes = 0;
    std::size_t in_channels = 1;
    std::vector<std::string> names;  // architecture order
    std::vector<Tensor> values;      // parallel to names

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::size_t parameter_count() const;
};

struct LayerSpec {
    std::string name;
    Shape shape;
};

// The architecture table: parameter names and shapes in order, as documented
// in the README.
std::vector<LayerSpec> architecture_table(std::size_t num_classes, std::size_t in_channels = 1);

ModelParams build_model(std::uint64_t seed, std::size_t num_classes, std::size_t in_channels = 1);

// Records the forward pass on `graph`. Input batch is [B,Cin,H,W] with H and
// W divisible by 4. Returns logits [B,K,H,W] plus the parameter handles in
// architecture order (for gradient reads).
struct ModelForward {
    Value logits;
    std::vector<Value> params;
};

ModelForward model_forward(Graph& graph, const ModelParams& params, Tensor batch);

// Checkpoint helpers (CRCK container, f32 payloads).
void save_model(const ModelParams& params, TensorStore& store, const std::string& prefix = "");
ModelParams load_model(const TensorStore& store, const std::string& prefix = "");

}  // namespace crac
