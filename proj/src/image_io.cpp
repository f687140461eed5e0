#include "stereo/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace stereo {

namespace {

// Whitespace-separated header token starting at `pos`; leaves `pos` on the
// delimiter that follows it.
std::string next_token(std::span<const uint8_t> bytes, size_t& pos) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) {
        ++pos;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
        tok.push_back(static_cast<char>(bytes[pos++]));
    }
    if (tok.empty()) {
        throw FormatError("unexpected end of header");
    }
    return tok;
}

int64_t parse_extent(const std::string& tok, const char* what) {
    try {
        size_t used = 0;
        long long v = std::stoll(tok, &used);
        if (used != tok.size() || v <= 0 || v > (1 << 20)) {
            throw FormatError("");
        }
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("malformed ") + what + " '" + tok + "'");
    }
}

} // namespace

PfmImage decode_pfm(std::span<const uint8_t> bytes) {
    size_t pos = 0;
    std::string magic = next_token(bytes, pos);
    if (magic == "PF") {
        throw FormatError("color PFM (PF) is not supported; expected grayscale Pf");
    }
    if (magic != "Pf") {
        throw FormatError("not a PFM file (magic '" + magic + "')");
    }
    int64_t width = parse_extent(next_token(bytes, pos), "width");
    int64_t height = parse_extent(next_token(bytes, pos), "height");
    std::string scale_tok = next_token(bytes, pos);
    double scale = 0.0;
    try {
        size_t used = 0;
        scale = std::stod(scale_tok, &used);
        if (used != scale_tok.size() || scale == 0.0 || !std::isfinite(scale)) {
            throw FormatError("");
        }
    } catch (const std::exception&) {
        throw FormatError("malformed PFM scale '" + scale_tok + "'");
    }
    if (pos >= bytes.size()) {
        throw FormatError("PFM payload truncated");
    }
    ++pos; // single whitespace byte before the raster
    const size_t need = static_cast<size_t>(width * height) * 4;
    if (bytes.size() - pos < need) {
        throw FormatError("PFM payload truncated: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - pos));
    }
    PfmImage img;
    img.endian = scale < 0 ? Endian::little : Endian::big;
    img.scale = std::abs(scale);
    std::vector<float> values(static_cast<size_t>(width * height));
    for (int64_t r = 0; r < height; ++r) {
        // Stored bottom-up.
        const uint8_t* src = bytes.data() + pos + static_cast<size_t>((height - 1 - r) * width) * 4;
        for (int64_t c = 0; c < width; ++c, src += 4) {
            uint32_t u = 0;
            for (int b = 0; b < 4; ++b) {
                int shift = img.endian == Endian::little ? 8 * b : 8 * (3 - b);
                u |= static_cast<uint32_t>(src[b]) << shift;
            }
            values[static_cast<size_t>(r * width + c)] = std::bit_cast<float>(u);
        }
    }
    img.data = Tensor::from_data({height, width}, std::move(values));
    return img;
}

std::vector<uint8_t> encode_pfm(const Tensor& image, Endian endian) {
    if (image.ndim() != 2) {
        throw ShapeError("PFM needs a [H, W] tensor, got " + shape_str(image.shape()));
    }
    const int64_t H = image.dim(0), W = image.dim(1);
    std::string header = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n" +
                         (endian == Endian::little ? "-1.0" : "1.0") + "\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    Tensor f32 = image.precision() == Precision::f32 ? image : image.to(Precision::f32);
    auto v = f32.data<float>();
    for (int64_t r = H - 1; r >= 0; --r) {
        for (int64_t c = 0; c < W; ++c) {
            uint32_t u = std::bit_cast<uint32_t>(v[static_cast<size_t>(r * W + c)]);
            for (int b = 0; b < 4; ++b) {
                int shift = endian == Endian::little ? 8 * b : 8 * (3 - b);
                out.push_back(static_cast<uint8_t>(u >> shift));
            }
        }
    }
    return out;
}

PfmImage read_pfm(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return decode_pfm(bytes);
}

void write_pfm(const std::filesystem::path& path, const Tensor& image) {
    write_file(path, encode_pfm(image));
}

namespace {

struct MemoryReader {
    std::span<const uint8_t> bytes;
    size_t pos = 0;
};

void png_read_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (src->bytes.size() - src->pos < n) {
        png_error(png, "truncated PNG data");
    }
    std::memcpy(out, src->bytes.data() + src->pos, n);
    src->pos += n;
}

void png_write_memory(png_structp png, png_bytep data, png_size_t n) {
    auto* dst = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
    dst->insert(dst->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_throw(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

PngImage decode_png(std::span<const uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw FormatError("not a PNG file");
    }
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_throw, png_warn);
    png_infop info = png_create_info_struct(png);
    MemoryReader reader{bytes, 0};
    PngImage img;
    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG decode failed: " + error);
    }
    png_set_read_fn(png, &reader, png_read_memory);
    png_read_info(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    if (depth == 16) {
        png_set_swap(png); // host little-endian uint16
    }
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    size_t rowbytes = png_get_rowbytes(png, info);
    raw.resize(rowbytes * static_cast<size_t>(img.height));
    rows.resize(static_cast<size_t>(img.height));
    for (int r = 0; r < img.height; ++r) {
        rows[static_cast<size_t>(r)] = raw.data() + rowbytes * static_cast<size_t>(r);
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const size_t n = static_cast<size_t>(img.width) * static_cast<size_t>(img.height) *
                     static_cast<size_t>(img.channels);
    img.samples.resize(n);
    if (img.bit_depth == 16) {
        for (size_t i = 0; i < n; ++i) {
            img.samples[i] = static_cast<uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        }
    } else {
        std::copy(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(n), img.samples.begin());
    }
    return img;
}

std::vector<uint8_t> encode_png(const PngImage& img) {
    if (img.channels < 1 || img.channels > 4 || (img.bit_depth != 8 && img.bit_depth != 16) ||
        img.samples.size() != static_cast<size_t>(img.width * img.height * img.channels)) {
        throw ShapeError("encode_png: inconsistent image description");
    }
    static constexpr int kColor[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                     PNG_COLOR_TYPE_RGB_ALPHA};
    std::vector<uint8_t> out;
    std::string error;
    const size_t bps = img.bit_depth / 8;
    const size_t rowbytes = static_cast<size_t>(img.width * img.channels) * bps;
    std::vector<uint8_t> raw(rowbytes * static_cast<size_t>(img.height));
    for (size_t i = 0; i < img.samples.size(); ++i) {
        if (bps == 2) {
            raw[2 * i] = static_cast<uint8_t>(img.samples[i] >> 8); // PNG is big-endian
            raw[2 * i + 1] = static_cast<uint8_t>(img.samples[i] & 0xff);
        } else {
            raw[i] = static_cast<uint8_t>(std::min<uint16_t>(img.samples[i], 255));
        }
    }
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int r = 0; r < img.height; ++r) {
        rows[static_cast<size_t>(r)] = raw.data() + rowbytes * static_cast<size_t>(r);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_throw, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG encode failed: " + error);
    }
    png_set_write_fn(png, &out, png_write_memory, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 img.bit_depth, kColor[img.channels - 1], PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

KittiDisparity read_kitti_disparity(std::span<const uint8_t> png_bytes) {
    PngImage img = decode_png(png_bytes);
    if (img.bit_depth != 16 || img.channels != 1) {
        throw FormatError("KITTI disparity must be a 16-bit single-channel PNG (got " +
                          std::to_string(img.bit_depth) + "-bit, " + std::to_string(img.channels) +
                          " channels)");
    }
    KittiDisparity out;
    std::vector<float> d(img.samples.size());
    out.valid.resize(img.samples.size());
    for (size_t i = 0; i < d.size(); ++i) {
        d[i] = static_cast<float>(img.samples[i]) / 256.0f;
        out.valid[i] = img.samples[i] != 0;
    }
    out.disparity = Tensor::from_data({img.height, img.width}, std::move(d));
    return out;
}

std::vector<uint8_t> encode_kitti_disparity(const Tensor& disparity, const std::vector<uint8_t>& valid) {
    if (disparity.ndim() != 2 || valid.size() != static_cast<size_t>(disparity.numel())) {
        throw ShapeError("encode_kitti_disparity: need [H, W] disparity and matching mask");
    }
    PngImage img;
    img.height = static_cast<int>(disparity.dim(0));
    img.width = static_cast<int>(disparity.dim(1));
    img.channels = 1;
    img.bit_depth = 16;
    img.samples.resize(valid.size());
    for (size_t i = 0; i < valid.size(); ++i) {
        double v = std::round(disparity.flat(static_cast<int64_t>(i)) * 256.0);
        img.samples[i] = valid[i] ? static_cast<uint16_t>(std::clamp(v, 1.0, 65535.0)) : 0;
    }
    return encode_png(img);
}

namespace {

Tensor planar_rgb(int width, int height, int channels, const std::vector<uint16_t>& samples, double max_value) {
    std::vector<float> out(static_cast<size_t>(3 * width * height));
    const size_t plane = static_cast<size_t>(width * height);
    for (size_t p = 0; p < plane; ++p) {
        for (size_t c = 0; c < 3; ++c) {
            size_t src = channels >= 3 ? c : 0;
            out[c * plane + p] = static_cast<float>(samples[p * static_cast<size_t>(channels) + src] / max_value);
        }
    }
    return Tensor::from_data({3, height, width}, std::move(out));
}

Tensor decode_pnm(std::span<const uint8_t> bytes) {
    size_t pos = 0;
    std::string magic = next_token(bytes, pos);
    int channels = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
    if (channels == 0) {
        throw FormatError("unsupported PNM variant '" + magic + "'");
    }
    auto w = static_cast<int>(parse_extent(next_token(bytes, pos), "width"));
    auto h = static_cast<int>(parse_extent(next_token(bytes, pos), "height"));
    auto maxval = parse_extent(next_token(bytes, pos), "maxval");
    if (maxval > 65535) {
        throw FormatError("PNM maxval out of range");
    }
    ++pos;
    const size_t bps = maxval > 255 ? 2 : 1;
    const size_t n = static_cast<size_t>(w * h * channels);
    if (bytes.size() < pos || bytes.size() - pos < n * bps) {
        throw FormatError("PNM payload truncated");
    }
    std::vector<uint16_t> samples(n);
    for (size_t i = 0; i < n; ++i) {
        samples[i] = bps == 2 ? static_cast<uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                              : bytes[pos + i];
    }
    return planar_rgb(w, h, channels, samples, static_cast<double>(maxval));
}

} // namespace

Tensor decode_image(std::span<const uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_pnm(bytes);
    }
    PngImage img = decode_png(bytes);
    double maxv = img.bit_depth == 16 ? 65535.0 : 255.0;
    // Alpha is dropped: gray+alpha -> gray, rgba -> rgb.
    int colors = img.channels <= 2 ? 1 : 3;
    std::vector<uint16_t> color(static_cast<size_t>(img.width * img.height * colors));
    for (size_t p = 0; p < static_cast<size_t>(img.width * img.height); ++p) {
        for (int c = 0; c < colors; ++c) {
            color[p * static_cast<size_t>(colors) + static_cast<size_t>(c)] =
                img.samples[p * static_cast<size_t>(img.channels) + static_cast<size_t>(c)];
        }
    }
    return planar_rgb(img.width, img.height, colors, color, maxv);
}

Tensor read_image(const std::filesystem::path& path) {
    return decode_image(read_file(path));
}

void write_image_png(const std::filesystem::path& path, const Tensor& image) {
    PngImage img;
    bool rgb = image.ndim() == 3;
    if (!(rgb && image.dim(0) == 3) && image.ndim() != 2) {
        throw ShapeError("write_image_png needs [3, H, W] or [H, W], got " + shape_str(image.shape()));
    }
    img.height = static_cast<int>(image.dim(-2));
    img.width = static_cast<int>(image.dim(-1));
    img.channels = rgb ? 3 : 1;
    const size_t plane = static_cast<size_t>(img.width * img.height);
    img.samples.resize(plane * static_cast<size_t>(img.channels));
    auto v = image.to_vector();
    for (size_t p = 0; p < plane; ++p) {
        for (size_t c = 0; c < static_cast<size_t>(img.channels); ++c) {
            double x = std::clamp(v[c * plane + p], 0.0, 1.0);
            img.samples[p * static_cast<size_t>(img.channels) + c] = static_cast<uint16_t>(std::lround(x * 255.0));
        }
    }
    write_file(path, encode_png(img));
}

void write_disparity_png(const std::filesystem::path& path, const Tensor& disparity, double max_value) {
    if (disparity.ndim() != 2) {
        throw ShapeError("write_disparity_png needs [H, W]");
    }
    const int64_t H = disparity.dim(0), W = disparity.dim(1);
    std::vector<double> rgb(static_cast<size_t>(3 * H * W));
    const size_t plane = static_cast<size_t>(H * W);
    for (size_t p = 0; p < plane; ++p) {
        double t = max_value > 0 ? std::clamp(disparity.flat(static_cast<int64_t>(p)) / max_value, 0.0, 1.0) : 0.0;
        // jet: blue -> cyan -> yellow -> red
        rgb[p] = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
        rgb[plane + p] = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
        rgb[2 * plane + p] = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
    }
    write_image_png(path, Tensor::from_values({3, H, W}, rgb, Precision::f64));
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("failed writing " + path.string());
    }
}

} // namespace stereo
