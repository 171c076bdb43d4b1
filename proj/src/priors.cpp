#include "crac/priors.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace crac {

namespace {

void validate(const std::vector<std::uint8_t>& labels, std::size_t height, std::size_t width,
              std::size_t num_classes, std::size_t patch_size) {
    if (patch_size % 2 == 0)
        throw std::invalid_argument("patch_size must be odd, got " + std::to_string(patch_size));
    if (labels.size() != height * width)
        throw std::invalid_argument("labels length does not match extents");
    if (num_classes > 0)
        for (std::uint8_t y : labels)
            if (y >= num_classes)
                throw std::invalid_argument("label value " + std::to_string(y) +
                                            " out of range for " + std::to_string(num_classes) +
                                            " classes");
}

inline std::size_t clamp_idx(std::ptrdiff_t v, std::size_t n) {
    if (v < 0) return 0;
    if (v >= static_cast<std::ptrdiff_t>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

}  // namespace

std::size_t RegionMask::count(std::uint8_t r) const {
    return static_cast<std::size_t>(std::count(region.begin(), region.end(), r));
}

double RegionMask::fraction_outer() const {
    if (region.empty()) return 0.0;
    return static_cast<double>(count(kRegionOuter)) / static_cast<double>(region.size());
}

PriorMap compute_prior(const std::vector<std::uint8_t>& labels, std::size_t height,
                       std::size_t width, std::size_t num_classes, std::size_t patch_size) {
    validate(labels, height, width, num_classes, patch_size);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(patch_size / 2);

    PriorMap out;
    out.num_classes = num_classes;
    out.height = height;
    out.width = width;
    out.tau.assign(num_classes * height * width, 0.0);

    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            for (std::ptrdiff_t di = -r; di <= r; ++di) {
                const std::size_t pi = clamp_idx(static_cast<std::ptrdiff_t>(i) + di, height);
                for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                    const std::size_t pj = clamp_idx(static_cast<std::ptrdiff_t>(j) + dj, width);
                    const std::uint8_t k = labels[pi * width + pj];
                    out.tau[(k * height + i) * width + j] += 1.0;
                }
            }
        }
    }
    return out;
}

RegionMask classify_regions(const std::vector<std::uint8_t>& labels, std::size_t height,
                            std::size_t width, std::size_t patch_size) {
    validate(labels, height, width, 0, patch_size);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(patch_size / 2);

    RegionMask out;
    out.height = height;
    out.width = width;
    out.region.assign(height * width, kRegionInner);

    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            const std::uint8_t center = labels[clamp_idx(static_cast<std::ptrdiff_t>(i), height) * width + j];
            bool uniform = true;
            for (std::ptrdiff_t di = -r; di <= r && uniform; ++di) {
                const std::size_t pi = clamp_idx(static_cast<std::ptrdiff_t>(i) + di, height);
                for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                    const std::size_t pj = clamp_idx(static_cast<std::ptrdiff_t>(j) + dj, width);
                    if (labels[pi * width + pj] != center) {
                        uniform = false;
                        break;
                    }
                }
            }
            out.region[i * width + j] = uniform ? kRegionInner : kRegionOuter;
        }
    }
    return out;
}

}  // namespace crac
