#pragma once

#include <cstdint>
#include <vector>

namespace crac {

// Per-pixel class-count prior tau over a patch_size x patch_size ground-truth
// patch (replicate padding at image borders, so the counts always sum to
// patch_size^2). Stored row-major as [K][H][W].
struct PriorMap {
    std::size_t num_classes = 0;
    std::size_t height = 0, width = 0;
    std::vector<double> tau;

    double at(std::size_t k, std::size_t i, std::size_t j) const {
        return tau[(k * height + i) * width + j];
    }
};

constexpr std::uint8_t kRegionInner = 0;
constexpr std::uint8_t kRegionOuter = 1;

// Inner/outer partition of the image domain: a pixel is inner iff its
// ground-truth patch contains exactly one distinct class.
struct RegionMask {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> region;  // kRegionInner or kRegionOuter

    std::uint8_t at(std::size_t i, std::size_t j) const { return region[i * width + j]; }
    std::size_t count(std::uint8_t r) const;
    double fraction_outer() const;
};

PriorMap compute_prior(const std::vector<std::uint8_t>& labels, std::size_t height,
                       std::size_t width, std::size_t num_classes, std::size_t patch_size = 3);

RegionMask classify_regions(const std::vector<std::uint8_t>& labels, std::size_t height,
                            std::size_t width, std::size_t patch_size = 3);

}  // namespace crac
