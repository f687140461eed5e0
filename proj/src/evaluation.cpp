#include "stereo/evaluation.hpp"

#include <cmath>

#include "stereo/errors.hpp"

namespace stereo {

const char* to_string(Region r) {
    return r == Region::all ? "all" : "noc";
}

Region parse_region(const std::string& name) {
    if (name == "all") return Region::all;
    if (name == "noc") return Region::noc;
    throw ConfigError("unknown region '" + name + "' (expected all or noc)");
}

void MetricAccumulator::add(const Tensor& pred, const Tensor& gt, const Mask& mask) {
    if (pred.shape() != gt.shape() || gt.ndim() != 2 || mask.height != gt.dim(0) || mask.width != gt.dim(1)) {
        throw ShapeError("metrics: prediction " + shape_str(pred.shape()) + ", ground truth " +
                         shape_str(gt.shape()) + " and mask " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width) + " must agree");
    }
    for (int64_t i = 0; i < gt.numel(); ++i) {
        if (!mask.bits[static_cast<size_t>(i)]) {
            continue;
        }
        const double g = gt.flat(i);
        const double err = std::abs(pred.flat(i) - g);
        ++pixels_;
        abs_sum_ += err;
        for (size_t k = 0; k < 5; ++k) {
            over_[k] += err > static_cast<double>(k + 1);
        }
        d1_ += err > 3.0 && err > 0.05 * g;
    }
}

MetricReport MetricAccumulator::report(Region region) const {
    MetricReport r;
    r.region = region;
    r.pixel_count = pixels_;
    if (pixels_ == 0) {
        return r;
    }
    const auto n = static_cast<double>(pixels_);
    r.epe = abs_sum_ / n;
    for (size_t k = 0; k < 5; ++k) {
        r.threshold_err[k] = static_cast<double>(over_[k]) / n;
    }
    r.d1 = static_cast<double>(d1_) / n;
    return r;
}

MetricReport compute_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask, Region region) {
    MetricAccumulator acc;
    acc.add(pred, gt, mask);
    return acc.report(region);
}

std::vector<MetricReport> compute_metrics(const Tensor& pred, const StereoSample& sample) {
    std::vector<MetricReport> out{compute_metrics(pred, sample.gt_disparity, sample.valid_mask, Region::all)};
    if (sample.noc_mask) {
        out.push_back(compute_metrics(pred, sample.gt_disparity, *sample.noc_mask & sample.valid_mask, Region::noc));
    }
    return out;
}

MetricsCsv::MetricsCsv(std::ostream& out) : out_(out) {
    out_ << "sample,region,pixels,epe,err1,err2,err3,err4,err5,d1\n";
}

void MetricsCsv::row(const std::string& sample, const MetricReport& r) {
    out_ << sample << ',' << to_string(r.region) << ',' << r.pixel_count;
    if (r.defined()) {
        out_ << ',' << r.epe;
        for (double e : r.threshold_err) {
            out_ << ',' << e;
        }
        out_ << ',' << r.d1 << '\n';
    } else {
        out_ << ",,,,,,,\n";
    }
}

} // namespace stereo
