#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crac/tensor.hpp"

namespace crac {

// CRCK named-tensor container: magic "CRCK", version u16, entry count u32,
// then per entry: name length u16, name bytes, rank u8, one u32 extent per
// rank dimension, and a little-endian f32 payload. Values that must survive
// a round trip bit-exactly are quantized to f32 before being stored.
struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct TensorStore {
    std::vector<NamedTensor> entries;

    bool contains(const std::string& name) const;
    const NamedTensor& get(const std::string& name) const;
    void put(const std::string& name, const Shape& shape, const std::vector<float>& data);
    void put_tensor(const std::string& name, const Tensor& t);  // quantizes to f32
    void put_scalar(const std::string& name, double v);
    Tensor tensor(const std::string& name) const;  // widened back to doubles
    double scalar(const std::string& name) const;
};

void write_store(const TensorStore& store, const std::string& path);
TensorStore read_store(const std::string& path);

// Round a double to the nearest f32 value (the storage grid for anything
// persisted in checkpoints).
inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
Tensor quantize_tensor(const Tensor& t);

}  // namespace crac
