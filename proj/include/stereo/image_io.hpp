#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stereo/tensor.hpp"

namespace stereo {

enum class Endian { little, big };

struct PfmImage {
    Tensor data; // [H, W] float32, rows top-down
    Endian endian = Endian::little;
    double scale = 1.0; // absolute value of the header scale
};

// Grayscale "Pf" variant. Negative header scale means little-endian payload;
// rows are stored bottom-up on disk.
PfmImage decode_pfm(std::span<const uint8_t> bytes);
std::vector<uint8_t> encode_pfm(const Tensor& image, Endian endian = Endian::little);

PfmImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Tensor& image);

// Decoded PNG samples, interleaved, one uint16 per sample regardless of depth.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
    int bit_depth = 8; // 8 or 16
    std::vector<uint16_t> samples;
};

PngImage decode_png(std::span<const uint8_t> bytes);
std::vector<uint8_t> encode_png(const PngImage& image);

// 16-bit single-channel PNG; disparity = value / 256, value 0 marks invalid.
struct KittiDisparity {
    Tensor disparity; // [H, W]
    std::vector<uint8_t> valid;
};
KittiDisparity read_kitti_disparity(std::span<const uint8_t> png_bytes);
std::vector<uint8_t> encode_kitti_disparity(const Tensor& disparity, const std::vector<uint8_t>& valid);

// 8/16-bit PNG or binary PPM (P6/P5) as a [3, H, W] float32 tensor in [0, 1].
// Grayscale images are replicated across the three channels.
Tensor decode_image(std::span<const uint8_t> bytes);
Tensor read_image(const std::filesystem::path& path);
// [3, H, W] or [H, W] in [0, 1] to an 8-bit PNG.
void write_image_png(const std::filesystem::path& path, const Tensor& image);

// 8-bit RGB false-color rendering of a [H, W] disparity map over [0, max_value].
void write_disparity_png(const std::filesystem::path& path, const Tensor& disparity, double max_value);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

} // namespace stereo
