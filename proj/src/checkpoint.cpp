#include "crac/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "crac/binio.hpp"

namespace crac {

namespace {
constexpr char kMagic[4] = {'C', 'R', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

bool TensorStore::contains(const std::string& name) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const NamedTensor& e) { return e.name == name; });
}

const NamedTensor& TensorStore::get(const std::string& name) const {
    for (const NamedTensor& e : entries)
        if (e.name == name) return e;
    throw std::runtime_error("checkpoint entry not found: " + name);
}

void TensorStore::put(const std::string& name, const Shape& shape,
                      const std::vector<float>& data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("checkpoint entry " + name + ": shape/data mismatch");
    for (NamedTensor& e : entries) {
        if (e.name == name) {
            e.shape = shape;
            e.data = data;
            return;
        }
    }
    entries.push_back({name, shape, data});
}

void TensorStore::put_tensor(const std::string& name, const Tensor& t) {
    std::vector<float> f(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) f[i] = static_cast<float>(t.data[i]);
    put(name, t.shape, f);
}

void TensorStore::put_scalar(const std::string& name, double v) {
    put(name, {1}, {static_cast<float>(v)});
}

Tensor TensorStore::tensor(const std::string& name) const {
    const NamedTensor& e = get(name);
    std::vector<double> d(e.data.size());
    for (std::size_t i = 0; i < e.data.size(); ++i) d[i] = static_cast<double>(e.data[i]);
    return Tensor(e.shape, std::move(d));
}

double TensorStore::scalar(const std::string& name) const {
    const NamedTensor& e = get(name);
    if (e.data.size() != 1)
        throw std::runtime_error("checkpoint entry " + name + " is not a scalar");
    return static_cast<double>(e.data[0]);
}

void write_store(const TensorStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u16(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(store.entries.size()));
    for (const NamedTensor& e : store.entries) {
        if (e.name.size() > 0xffff) throw std::runtime_error("checkpoint name too long");
        put_u16(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u8(os, static_cast<std::uint8_t>(e.shape.size()));
        for (std::size_t ext : e.shape) put_u32(os, static_cast<std::uint32_t>(ext));
        for (float v : e.data) put_f32(os, v);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

TensorStore read_store(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("CRCK: magic mismatch");
    const std::uint16_t version = get_u16(is, "CRCK header");
    if (version != kVersion)
        throw std::runtime_error("CRCK: unsupported version " + std::to_string(version));
    const std::uint32_t count = get_u32(is, "CRCK header");

    TensorStore store;
    store.entries.reserve(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        NamedTensor e;
        const std::uint16_t len = get_u16(is, "CRCK entry");
        e.name.resize(len);
        is.read(e.name.data(), len);
        if (is.gcount() != len) throw std::runtime_error("CRCK entry: truncated payload");
        const std::uint8_t rank = get_u8(is, "CRCK entry");
        e.shape.resize(rank);
        std::size_t numel = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            e.shape[r] = get_u32(is, "CRCK entry");
            if (e.shape[r] == 0) throw std::runtime_error("CRCK entry: zero extent");
            numel *= e.shape[r];
        }
        e.data.resize(numel);
        for (float& v : e.data) v = get_f32(is, "CRCK payload");
        store.entries.push_back(std::move(e));
    }
    return store;
}

Tensor quantize_tensor(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.data) v = quantize_f32(v);
    return out;
}

}  // namespace crac
