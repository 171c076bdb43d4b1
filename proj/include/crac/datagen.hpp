#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crac {

// One 2D sample: intensity image in [0,1] plus per-pixel class labels.
struct Sample {
    std::vector<float> image;          // H*W, row-major
    std::vector<std::uint8_t> labels;  // H*W, values in [0, K-1]
};

enum class ShapeKind : std::uint8_t { Disk, Rectangle, Ring };

struct DatasetSpec {
    std::size_t num_classes = 4;  // class 0 is background
    std::size_t height = 64, width = 64;
    std::size_t train_count = 200, val_count = 40, test_count = 40;
    double noise_sigma = 0.06;      // per-pixel intensity noise
    double boundary_jitter = 2.5;   // radial label jitter in pixels
    double target_fraction = 0.10;  // area fraction per foreground class
    std::uint64_t seed = 7;

    void validate() const;
};

struct Dataset {
    std::size_t num_classes = 0;
    std::size_t height = 0, width = 0;
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(const std::string& name) const;
};

// Geometry of one rendered shape; exposed so tests can rebuild analytic masks.
struct ShapeParams {
    ShapeKind kind = ShapeKind::Disk;
    std::uint8_t cls = 1;
    double cx = 0.0, cy = 0.0;
    double radius = 0.0;           // disk / ring outer radius
    double half_w = 0.0, half_h = 0.0;  // rectangle half extents
    double inner_radius = 0.0;     // ring
    // Label-outline jitter: amp * sum_m a[m] * sin((m+1)*theta + phase[m]).
    double jitter_amp = 0.0;
    double a[3] = {0, 0, 0}, phase[3] = {0, 0, 0};
    double a_in[3] = {0, 0, 0}, phase_in[3] = {0, 0, 0};  // ring inner outline

    double outline_offset(double theta) const;
    double inner_offset(double theta) const;
    // Containment depth of the jittered label outline; negative inside,
    // more negative deeper. Overlaps resolve to the shape with the deepest
    // depth relative to its own half-width (depth_scale).
    double label_depth(double x, double y) const;
    double depth_scale() const;
    bool label_contains(double x, double y) const;
    // Signed distance to the smooth (unjittered) outline; negative inside.
    double smooth_sdf(double x, double y) const;
};

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

// Deterministic per-sample shape layout; the same function drives generation.
std::vector<ShapeParams> sample_shapes(const DatasetSpec& spec, Split split, std::size_t index);

// Deterministic synthetic dataset: labels follow jittered shape outlines while
// intensities follow the smooth outlines, so pixels near boundaries carry
// irreducible label uncertainty.
Dataset generate(const DatasetSpec& spec);

// CRSD container: magic "CRSD", version u16; then for train/val/test in that
// order: count u32, H u16, W u16, K u8, samples as H*W little-endian f32
// image followed by H*W u8 labels.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Named presets: "toy4" (K=4, 64x64, 200/40/40) and "tiny3" (K=3, 16x16,
// 30/10/10, for fast tests).
DatasetSpec dataset_preset(const std::string& name);

double intensity_for_class(std::uint8_t cls, std::size_t num_classes);

}  // namespace crac
