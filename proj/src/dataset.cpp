#include "stereo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "stereo/errors.hpp"
#include "stereo/image_io.hpp"

namespace stereo {

int64_t Mask::count() const {
    return std::count_if(bits.begin(), bits.end(), [](uint8_t b) { return b != 0; });
}

Mask operator&(const Mask& a, const Mask& b) {
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError("mask extents differ");
    }
    Mask out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) {
        out.bits[i] = a.bits[i] && b.bits[i];
    }
    return out;
}

void validate_sample(const StereoSample& s, double max_disparity) {
    if (s.left.ndim() != 3 || s.left.dim(0) != 3 || s.left.shape() != s.right.shape()) {
        throw ShapeError("left/right must both be [3, H, W]; got " + shape_str(s.left.shape()) + " and " +
                         shape_str(s.right.shape()));
    }
    if (s.gt_disparity.shape() != Shape{s.left.dim(1), s.left.dim(2)}) {
        throw ShapeError("ground truth " + shape_str(s.gt_disparity.shape()) + " does not match images " +
                         shape_str(s.left.shape()));
    }
    const int64_t H = s.height(), W = s.width();
    if (s.valid_mask.height != H || s.valid_mask.width != W) {
        throw ShapeError("valid mask extents do not match ground truth");
    }
    for (int64_t i = 0; i < H * W; ++i) {
        if (!s.valid_mask.bits[static_cast<size_t>(i)]) {
            continue;
        }
        double d = s.gt_disparity.flat(i);
        if (!(d >= 0.0 && d < max_disparity)) {
            throw ConfigError("valid pixel " + std::to_string(i) + " has disparity " + std::to_string(d) +
                              " outside [0, " + std::to_string(max_disparity) + ")");
        }
    }
    if (s.noc_mask) {
        if (s.noc_mask->height != H || s.noc_mask->width != W) {
            throw ShapeError("noc mask extents do not match ground truth");
        }
        for (size_t i = 0; i < s.noc_mask->bits.size(); ++i) {
            if (s.noc_mask->bits[i] && !s.valid_mask.bits[i]) {
                throw ConfigError("noc mask is not a subset of the valid mask");
            }
        }
    }
}

StereoSample generate_rds(int64_t height, int64_t width, int max_disparity, uint64_t seed) {
    if (height <= 0 || width <= 0) {
        throw ConfigError("generate_rds: extents must be positive");
    }
    if (max_disparity < 0 || 2 * static_cast<int64_t>(max_disparity) >= width) {
        throw ConfigError("generate_rds: max_disparity " + std::to_string(max_disparity) +
                          " must be in [0, width/2)");
    }
    std::mt19937_64 rng(seed);
    auto uniform_int = [&rng](int64_t lo, int64_t hi) {
        return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
    };
    auto dot = [&]() { return static_cast<float>(uniform_int(0, 255)) / 255.0f; };

    const int dmax = std::max(max_disparity - 1, 0);
    const size_t plane = static_cast<size_t>(height * width);
    std::vector<int> disp(plane, static_cast<int>(uniform_int(0, dmax / 3)));
    if (dmax > 0) {
        int rects = static_cast<int>(uniform_int(2, 5));
        std::vector<int> levels(static_cast<size_t>(rects));
        for (int& d : levels) {
            d = static_cast<int>(uniform_int(disp[0], dmax));
        }
        // Nearer surfaces (larger disparity) are painted last so they occlude.
        std::sort(levels.begin(), levels.end());
        for (int d : levels) {
            int64_t rh = uniform_int(std::max<int64_t>(height / 6, 1), std::max<int64_t>(height / 2, 1));
            int64_t rw = uniform_int(std::max<int64_t>(width / 6, 1), std::max<int64_t>(width / 2, 1));
            int64_t y0 = uniform_int(0, height - rh);
            int64_t x0 = uniform_int(0, width - rw);
            for (int64_t y = y0; y < y0 + rh; ++y) {
                for (int64_t x = x0; x < x0 + rw; ++x) {
                    disp[static_cast<size_t>(y * width + x)] = d;
                }
            }
        }
    }

    std::vector<float> left(3 * plane), right(3 * plane, 0.0f);
    for (float& v : left) {
        v = dot();
    }
    // Forward warp with a z-buffer: the largest disparity wins a right pixel.
    std::vector<int> owner_disp(plane, -1);
    std::vector<int64_t> owner_x(plane, -1);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            int d = disp[static_cast<size_t>(y * width + x)];
            int64_t xr = x - d;
            if (xr < 0) {
                continue;
            }
            size_t r = static_cast<size_t>(y * width + xr);
            if (d > owner_disp[r]) {
                owner_disp[r] = d;
                owner_x[r] = x;
            }
        }
    }
    Mask noc(height, width, false);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t xr = 0; xr < width; ++xr) {
            size_t r = static_cast<size_t>(y * width + xr);
            if (owner_x[r] >= 0) {
                size_t l = static_cast<size_t>(y * width + owner_x[r]);
                for (size_t c = 0; c < 3; ++c) {
                    right[c * plane + r] = left[c * plane + l];
                }
                noc.set(y, owner_x[r], true);
            } else {
                for (size_t c = 0; c < 3; ++c) {
                    right[c * plane + r] = dot();
                }
            }
        }
    }

    StereoSample s;
    s.left = Tensor::from_data({3, height, width}, std::move(left));
    s.right = Tensor::from_data({3, height, width}, std::move(right));
    std::vector<float> gt(disp.begin(), disp.end());
    s.gt_disparity = Tensor::from_data({height, width}, std::move(gt));
    s.valid_mask = Mask(height, width, true);
    s.noc_mask = std::move(noc);
    return s;
}

AugmentConfig AugmentConfig::identity() {
    AugmentConfig cfg;
    cfg.brightness = {0.0, 0.0};
    cfg.contrast = {1.0, 1.0};
    cfg.gamma = {1.0, 1.0};
    cfg.occlusion_max_height = 0;
    cfg.occlusion_max_width = 0;
    return cfg;
}

void AugmentConfig::validate() const {
    auto check = [](const Interval& iv, double identity, const char* name) {
        if (!(iv.lo <= iv.hi) || !iv.contains(identity)) {
            throw ConfigError(std::string(name) + " interval [" + std::to_string(iv.lo) + ", " +
                              std::to_string(iv.hi) + "] must contain " + std::to_string(identity));
        }
    };
    check(brightness, 0.0, "brightness");
    check(contrast, 1.0, "contrast");
    check(gamma, 1.0, "gamma");
    if (gamma.lo <= 0.0 || contrast.lo < 0.0) {
        throw ConfigError("gamma must be positive and contrast non-negative");
    }
    if (occlusion_max_height < 0 || occlusion_max_width < 0) {
        throw ConfigError("occlusion size must be non-negative");
    }
}

namespace {

double draw(const Interval& iv, std::mt19937_64& rng) {
    if (iv.lo == iv.hi) {
        return iv.lo;
    }
    return std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
}

Tensor jitter(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
    const double g = draw(cfg.gamma, rng);
    const double c = draw(cfg.contrast, rng);
    const double b = draw(cfg.brightness, rng);
    std::vector<float> v(image.data<float>().begin(), image.data<float>().end());
    if (g != 1.0) {
        for (float& x : v) {
            x = static_cast<float>(std::pow(std::max(x, 0.0f), g));
        }
    }
    if (c != 1.0) {
        double mean = 0.0;
        for (float x : v) {
            mean += x;
        }
        mean /= static_cast<double>(v.size());
        for (float& x : v) {
            x = static_cast<float>((x - mean) * c + mean);
        }
    }
    if (b != 0.0) {
        for (float& x : v) {
            x = static_cast<float>(x + b);
        }
    }
    for (float& x : v) {
        x = std::clamp(x, 0.0f, 1.0f);
    }
    return Tensor::from_data(image.shape(), std::move(v));
}

} // namespace

StereoSample augment(const StereoSample& sample, const AugmentConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    StereoSample out = sample;
    const Tensor left32 = sample.left.to(Precision::f32);
    const Tensor right32 = sample.right.to(Precision::f32);
    out.left = jitter(left32, cfg, rng);
    out.right = jitter(right32, cfg, rng);

    const int64_t H = sample.height(), W = sample.width();
    const int64_t rh = std::min<int64_t>(cfg.occlusion_max_height, H);
    const int64_t rw = std::min<int64_t>(cfg.occlusion_max_width, W);
    if (rh > 0 && rw > 0) {
        auto pick = [&rng](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
        const int64_t h = pick(1, rh), w = pick(1, rw);
        const int64_t y0 = pick(0, H - h), x0 = pick(0, W - w);
        auto px = out.right.mutable_data<float>();
        const size_t plane = static_cast<size_t>(H * W);
        for (size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (size_t i = 0; i < plane; ++i) {
                mean += px[c * plane + i];
            }
            const auto fill = static_cast<float>(mean / static_cast<double>(plane));
            for (int64_t y = y0; y < y0 + h; ++y) {
                for (int64_t x = x0; x < x0 + w; ++x) {
                    px[c * plane + static_cast<size_t>(y * W + x)] = fill;
                }
            }
        }
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open manifest " + path.string());
    }
    const auto base = path.parent_path();
    auto resolve = [&base](const std::string& p) {
        std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream in(line);
        std::vector<std::string> fields;
        for (std::string tok; in >> tok;) {
            fields.push_back(tok);
        }
        if (fields.empty()) {
            continue;
        }
        if (fields.size() < 3 || fields.size() > 4) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 or 4 paths, got " +
                              std::to_string(fields.size()));
        }
        ManifestEntry e{resolve(fields[0]), resolve(fields[1]), resolve(fields[2]), std::nullopt};
        if (fields.size() == 4) {
            e.noc = resolve(fields[3]);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write manifest " + path.string());
    }
    for (const auto& e : entries) {
        f << e.left.string() << ' ' << e.right.string() << ' ' << e.gt.string();
        if (e.noc) {
            f << ' ' << e.noc->string();
        }
        f << '\n';
    }
}

StereoSample load_sample(const ManifestEntry& entry, double max_disparity) {
    if (!(max_disparity > 0)) {
        throw ConfigError("max_disparity must be positive");
    }
    StereoSample s;
    s.left = read_image(entry.left);
    s.right = read_image(entry.right);
    std::vector<uint8_t> stored_valid;
    auto ext = entry.gt.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pfm") {
        s.gt_disparity = read_pfm(entry.gt).data;
    } else if (ext == ".png") {
        auto k = read_kitti_disparity(read_file(entry.gt));
        s.gt_disparity = k.disparity;
        stored_valid = std::move(k.valid);
    } else {
        throw FormatError("unsupported ground-truth format: " + entry.gt.string());
    }
    const int64_t H = s.gt_disparity.dim(0), W = s.gt_disparity.dim(1);
    if (s.left.shape() != s.right.shape() || s.left.dim(1) != H || s.left.dim(2) != W) {
        throw ShapeError("image/ground-truth extents disagree for " + entry.left.string());
    }
    s.valid_mask = Mask(H, W, false);
    for (int64_t i = 0; i < H * W; ++i) {
        double d = s.gt_disparity.flat(i);
        bool ok = std::isfinite(d) && d >= 0.0 && d < max_disparity;
        if (!stored_valid.empty()) {
            ok = ok && stored_valid[static_cast<size_t>(i)];
        }
        s.valid_mask.bits[static_cast<size_t>(i)] = ok;
    }
    if (entry.noc) {
        Tensor noc = read_image(*entry.noc);
        if (noc.dim(1) != H || noc.dim(2) != W) {
            throw ShapeError("noc mask extents disagree with ground truth");
        }
        Mask m(H, W, false);
        for (int64_t i = 0; i < H * W; ++i) {
            m.bits[static_cast<size_t>(i)] = noc.flat(i) > 0.5;
        }
        s.noc_mask = m & s.valid_mask;
    }
    return s;
}

ManifestEntry save_sample(const std::filesystem::path& dir, const std::string& stem, const StereoSample& sample) {
    std::filesystem::create_directories(dir);
    ManifestEntry e{stem + "_left.png", stem + "_right.png", stem + "_gt.pfm", std::nullopt};
    write_image_png(dir / e.left, sample.left);
    write_image_png(dir / e.right, sample.right);
    std::vector<float> gt(static_cast<size_t>(sample.gt_disparity.numel()));
    for (size_t i = 0; i < gt.size(); ++i) {
        gt[i] = sample.valid_mask.bits[i] ? static_cast<float>(sample.gt_disparity.flat(static_cast<int64_t>(i)))
                                          : std::numeric_limits<float>::infinity();
    }
    write_pfm(dir / e.gt, Tensor::from_data(sample.gt_disparity.shape(), std::move(gt)));
    if (sample.noc_mask) {
        e.noc = stem + "_noc.png";
        std::vector<float> m(sample.noc_mask->bits.begin(), sample.noc_mask->bits.end());
        write_image_png(dir / *e.noc, Tensor::from_data(sample.gt_disparity.shape(), std::move(m)));
    }
    return e;
}

} // namespace stereo
