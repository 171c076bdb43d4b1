#include "crac/datagen.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "crac/binio.hpp"
#include "crac/rng.hpp"

namespace crac {

namespace {

constexpr double kBackgroundIntensity = 0.12;
constexpr double kEdgeWidth = 1.0;     // px, smooth intensity falloff
constexpr double kSizeJitter = 0.15;   // relative shape-size spread
constexpr std::size_t kShapeVocabulary = 3;

double jitter_series(double amp, const double a[3], const double phase[3], double theta) {
    if (amp == 0.0) return 0.0;
    double s = 0.0;
    for (int m = 0; m < 3; ++m) s += a[m] * std::sin((m + 1) * theta + phase[m]);
    return amp * s / 1.5;
}

}  // namespace

void DatasetSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (num_classes - 1 > kShapeVocabulary)
        throw std::invalid_argument("num_classes " + std::to_string(num_classes) +
                                    " exceeds the shape vocabulary (max " +
                                    std::to_string(kShapeVocabulary + 1) + " classes)");
    if (height < 8 || width < 8) throw std::invalid_argument("extents must be at least 8x8");
    if (noise_sigma < 0.0 || boundary_jitter < 0.0)
        throw std::invalid_argument("noise and jitter must be non-negative");
    if (target_fraction <= 0.0 || target_fraction > 0.25)
        throw std::invalid_argument("target_fraction must be in (0, 0.25]");
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split: " + name + " (expected train|val|test)");
}

double ShapeParams::outline_offset(double theta) const {
    return jitter_series(jitter_amp, a, phase, theta);
}

double ShapeParams::inner_offset(double theta) const {
    return jitter_series(jitter_amp, a_in, phase_in, theta);
}

double ShapeParams::label_depth(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double theta = std::atan2(dy, dx);
    const double off = outline_offset(theta);
    switch (kind) {
        case ShapeKind::Disk:
            return std::sqrt(dx * dx + dy * dy) - (radius + off);
        case ShapeKind::Rectangle:
            return std::max(std::fabs(dx) - (half_w + off), std::fabs(dy) - (half_h + off));
        case ShapeKind::Ring: {
            const double d = std::sqrt(dx * dx + dy * dy);
            return std::max((inner_radius + inner_offset(theta)) - d, d - (radius + off));
        }
    }
    return 0.0;
}

double ShapeParams::depth_scale() const {
    switch (kind) {
        case ShapeKind::Disk:
            return radius;
        case ShapeKind::Rectangle:
            return std::min(half_w, half_h);
        case ShapeKind::Ring:
            return 0.5 * (radius - inner_radius);
    }
    return 1.0;
}

bool ShapeParams::label_contains(double x, double y) const { return label_depth(x, y) <= 0.0; }

double ShapeParams::smooth_sdf(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double d = std::sqrt(dx * dx + dy * dy);
    switch (kind) {
        case ShapeKind::Disk:
            return d - radius;
        case ShapeKind::Rectangle:
            return std::max(std::fabs(dx) - half_w, std::fabs(dy) - half_h);
        case ShapeKind::Ring:
            return std::max(inner_radius - d, d - radius);
    }
    return 0.0;
}

double intensity_for_class(std::uint8_t cls, std::size_t num_classes) {
    if (cls == 0) return kBackgroundIntensity;
    const double denom = num_classes > 3 ? static_cast<double>(num_classes - 2) : 1.0;
    return 0.30 + 0.58 * static_cast<double>(cls - 1) / denom;
}

std::vector<ShapeParams> sample_shapes(const DatasetSpec& spec, Split split, std::size_t index) {
    spec.validate();
    const double hw = static_cast<double>(spec.height) * static_cast<double>(spec.width);
    const std::uint64_t stream =
        (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint64_t>(index);
    Rng rng(spec.seed, stream);

    std::vector<ShapeParams> shapes;
    for (std::uint8_t k = 1; k < spec.num_classes; ++k) {
        ShapeParams sp;
        sp.cls = k;
        sp.kind = static_cast<ShapeKind>((k - 1) % kShapeVocabulary);
        sp.jitter_amp = spec.boundary_jitter;

        const double scale = rng.uniform(1.0 - kSizeJitter, 1.0 + kSizeJitter);
        const double aspect = rng.uniform(0.75, 1.3333);
        const double area = spec.target_fraction * hw;

        double reach = 0.0;
        switch (sp.kind) {
            case ShapeKind::Disk:
                sp.radius = scale * std::sqrt(area / M_PI);
                reach = sp.radius;
                break;
            case ShapeKind::Rectangle:
                sp.half_w = scale * 0.5 * std::sqrt(area) * aspect;
                sp.half_h = scale * 0.5 * std::sqrt(area) / aspect;
                reach = std::sqrt(sp.half_w * sp.half_w + sp.half_h * sp.half_h);
                break;
            case ShapeKind::Ring:
                // inner radius at 0.45 of the outer keeps the footprint small
                // for the same filled area
                sp.radius = scale * std::sqrt(area / (M_PI * (1.0 - 0.45 * 0.45)));
                sp.inner_radius = 0.45 * sp.radius;
                reach = sp.radius;
                break;
        }

        const double margin = reach + 1.6 * spec.boundary_jitter + 1.0;
        const double x_lo = margin, x_hi = static_cast<double>(spec.width - 1) - margin;
        const double y_lo = margin, y_hi = static_cast<double>(spec.height - 1) - margin;
        if (x_lo >= x_hi || y_lo >= y_hi)
            throw std::invalid_argument("extents too small for the requested shapes (margin " +
                                        std::to_string(margin) + ")");
        sp.cx = rng.uniform(x_lo, x_hi);
        sp.cy = rng.uniform(y_lo, y_hi);
        // Spread the shapes out: retry crowded centers a bounded number of
        // times so per-class pixel frequencies stay close to the target.
        for (int attempt = 0; attempt < 24; ++attempt) {
            bool crowded = false;
            for (const ShapeParams& prev : shapes) {
                const double prev_reach =
                    prev.kind == ShapeKind::Rectangle
                        ? std::sqrt(prev.half_w * prev.half_w + prev.half_h * prev.half_h)
                        : prev.radius;
                const double ddx = sp.cx - prev.cx, ddy = sp.cy - prev.cy;
                if (std::sqrt(ddx * ddx + ddy * ddy) < 0.75 * (reach + prev_reach)) {
                    crowded = true;
                    break;
                }
            }
            if (!crowded) break;
            sp.cx = rng.uniform(x_lo, x_hi);
            sp.cy = rng.uniform(y_lo, y_hi);
        }

        for (int m = 0; m < 3; ++m) sp.a[m] = rng.uniform(0.3, 1.0);
        for (int m = 0; m < 3; ++m) sp.phase[m] = rng.uniform(0.0, 2.0 * M_PI);
        if (sp.kind == ShapeKind::Ring) {
            for (int m = 0; m < 3; ++m) sp.a_in[m] = rng.uniform(0.3, 1.0);
            for (int m = 0; m < 3; ++m) sp.phase_in[m] = rng.uniform(0.0, 2.0 * M_PI);
        }
        shapes.push_back(sp);
    }
    return shapes;
}

namespace {

Sample render_sample(const DatasetSpec& spec, Split split, std::size_t index) {
    const std::size_t H = spec.height, W = spec.width;
    const std::vector<ShapeParams> shapes = sample_shapes(spec, split, index);

    Sample s;
    s.labels.assign(H * W, 0);
    std::vector<double> intensity(H * W, kBackgroundIntensity);

    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            const double x = static_cast<double>(j), y = static_cast<double>(i);
            // Labels follow the jittered outlines; overlaps go to the shape
            // that contains the pixel most deeply.
            double best_depth = 0.0;
            for (const ShapeParams& sp : shapes) {
                const double depth = sp.label_depth(x, y) / sp.depth_scale();
                if (depth <= 0.0 && depth < best_depth) {
                    best_depth = depth;
                    s.labels[i * W + j] = sp.cls;
                }
            }
            // Intensity follows the smooth outlines; the label jitter above is
            // what makes boundary pixels ambiguous.
            double sdf = 1e9;
            std::uint8_t cls = 0;
            for (const ShapeParams& sp : shapes) {
                const double d = sp.smooth_sdf(x, y);
                if (d < sdf) {
                    sdf = d;
                    cls = sp.cls;
                }
            }
            if (cls != 0) {
                const double base = intensity_for_class(cls, spec.num_classes);
                const double alpha = 1.0 / (1.0 + std::exp(sdf / kEdgeWidth));
                intensity[i * W + j] += alpha * (base - intensity[i * W + j]);
            }
        }
    }

    // Noise stream is tied to the same (seed, split, index) stream id but a
    // different lane so shape draws stay aligned across configurations.
    const std::uint64_t stream =
        (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint64_t>(index);
    Rng noise(spec.seed ^ 0x6e6f697365ULL, stream);
    s.image.resize(H * W);
    for (std::size_t p = 0; p < H * W; ++p) {
        double v = intensity[p];
        if (spec.noise_sigma > 0.0) v += noise.normal(0.0, spec.noise_sigma);
        s.image[p] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return s;
}

}  // namespace

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.height = spec.height;
    ds.width = spec.width;
    ds.train.reserve(spec.train_count);
    ds.val.reserve(spec.val_count);
    ds.test.reserve(spec.test_count);
    for (std::size_t i = 0; i < spec.train_count; ++i)
        ds.train.push_back(render_sample(spec, Split::Train, i));
    for (std::size_t i = 0; i < spec.val_count; ++i)
        ds.val.push_back(render_sample(spec, Split::Val, i));
    for (std::size_t i = 0; i < spec.test_count; ++i)
        ds.test.push_back(render_sample(spec, Split::Test, i));
    return ds;
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'S', 'D'};
constexpr std::uint16_t kVersion = 1;

void write_split(std::ostream& os, const Dataset& ds, const std::vector<Sample>& samples) {
    put_u32(os, static_cast<std::uint32_t>(samples.size()));
    put_u16(os, static_cast<std::uint16_t>(ds.height));
    put_u16(os, static_cast<std::uint16_t>(ds.width));
    put_u8(os, static_cast<std::uint8_t>(ds.num_classes));
    for (const Sample& s : samples) {
        for (float v : s.image) put_f32(os, v);
        for (std::uint8_t y : s.labels) put_u8(os, y);
    }
}

std::vector<Sample> read_split(std::istream& is, Dataset& ds, bool first) {
    const std::uint32_t count = get_u32(is, "CRSD split header");
    const std::uint16_t h = get_u16(is, "CRSD split header");
    const std::uint16_t w = get_u16(is, "CRSD split header");
    const std::uint8_t k = get_u8(is, "CRSD split header");
    if (h == 0 || w == 0 || k < 2) throw std::runtime_error("CRSD: malformed split header");
    if (first) {
        ds.height = h;
        ds.width = w;
        ds.num_classes = k;
    } else if (h != ds.height || w != ds.width || k != ds.num_classes) {
        throw std::runtime_error("CRSD: split headers disagree on extents or class count");
    }
    std::vector<Sample> out;
    out.reserve(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        Sample s;
        s.image.resize(static_cast<std::size_t>(h) * w);
        s.labels.resize(static_cast<std::size_t>(h) * w);
        for (float& v : s.image) v = get_f32(is, "CRSD image payload");
        for (std::uint8_t& y : s.labels) {
            y = get_u8(is, "CRSD label payload");
            if (y >= k) throw std::runtime_error("CRSD: label value out of range");
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u16(os, kVersion);
    write_split(os, ds, ds.train);
    write_split(os, ds, ds.val);
    write_split(os, ds, ds.test);
    if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("CRSD: magic mismatch");
    const std::uint16_t version = get_u16(is, "CRSD header");
    if (version != kVersion)
        throw std::runtime_error("CRSD: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.train = read_split(is, ds, true);
    ds.val = read_split(is, ds, false);
    ds.test = read_split(is, ds, false);
    return ds;
}

DatasetSpec dataset_preset(const std::string& name) {
    DatasetSpec spec;
    if (name == "toy4") {
        // Defaults above.
    } else if (name == "tiny3") {
        spec.num_classes = 3;
        spec.height = 16;
        spec.width = 16;
        spec.train_count = 30;
        spec.val_count = 10;
        spec.test_count = 10;
        spec.boundary_jitter = 1.0;
        spec.noise_sigma = 0.05;
        spec.target_fraction = 0.08;
    } else {
        throw std::invalid_argument("unknown dataset preset: " + name);
    }
    return spec;
}

}  // namespace crac
