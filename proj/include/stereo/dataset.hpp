#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stereo/tensor.hpp"

namespace stereo {

// Row-major boolean raster.
struct Mask {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> bits;

    Mask() = default;
    Mask(int64_t h, int64_t w, bool value) : height(h), width(w), bits(static_cast<size_t>(h * w), value) {}

    bool operator()(int64_t y, int64_t x) const { return bits[static_cast<size_t>(y * width + x)] != 0; }
    void set(int64_t y, int64_t x, bool v) { bits[static_cast<size_t>(y * width + x)] = v; }
    int64_t count() const;
    bool operator==(const Mask&) const = default;
};

Mask operator&(const Mask& a, const Mask& b);

struct StereoSample {
    Tensor left;         // [3, H, W] in [0, 1]
    Tensor right;        // [3, H, W] in [0, 1]
    Tensor gt_disparity; // [H, W], pixels
    Mask valid_mask;
    std::optional<Mask> noc_mask;

    int64_t height() const { return gt_disparity.dim(0); }
    int64_t width() const { return gt_disparity.dim(1); }
};

// Throws ShapeError / ConfigError when the sample breaks its invariants.
void validate_sample(const StereoSample& sample, double max_disparity);

// Random-dot stereogram with integer disparities in [0, max(max_disparity - 1, 0)]:
// a constant background plane with random rectangles in front of it.
// The left image is the reference: left(x, y) = right(x - d(x, y), y) wherever
// noc_mask is set. Pixel values are multiples of 1/255.
StereoSample generate_rds(int64_t height, int64_t width, int max_disparity, uint64_t seed);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return lo <= v && v <= hi; }
};

struct AugmentConfig {
    Interval brightness{-0.2, 0.2}; // additive
    Interval contrast{0.8, 1.2};    // scale about the image mean
    Interval gamma{0.8, 1.2};
    int occlusion_max_height = 50;  // 0 disables the occluder
    int occlusion_max_width = 100;
    uint64_t seed = 0;

    static AugmentConfig identity();
    void validate() const;
};

// Chromatic jitter drawn separately for each image; one rectangle of the right
// image replaced by its mean color. Disparity and masks pass through untouched.
StereoSample augment(const StereoSample& sample, const AugmentConfig& cfg);

struct ManifestEntry {
    std::filesystem::path left;
    std::filesystem::path right;
    std::filesystem::path gt;
    std::optional<std::filesystem::path> noc;
};

// One entry per line: `left right gt [noc]`. Blank lines and '#' comments are
// skipped; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Ground truth is read as PFM (.pfm) or KITTI 16-bit PNG (.png). Pixels with
// non-finite, negative or >= max_disparity values are marked invalid.
StereoSample load_sample(const ManifestEntry& entry, double max_disparity);

// Writes <stem>_left.png, <stem>_right.png, <stem>_gt.pfm and, when present,
// <stem>_noc.png into `dir`; returns an entry with paths relative to `dir`.
ManifestEntry save_sample(const std::filesystem::path& dir, const std::string& stem, const StereoSample& sample);

} // namespace stereo
