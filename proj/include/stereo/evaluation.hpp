#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stereo/dataset.hpp"

namespace stereo {

enum class Region { all, noc };
const char* to_string(Region r);
Region parse_region(const std::string& name);

struct MetricReport {
    Region region = Region::all;
    int64_t pixel_count = 0;
    double epe = 0.0;
    std::array<double, 5> threshold_err{}; // k = 1..5: fraction with |error| > k
    double d1 = 0.0;                       // |error| > 3 and |error| > 0.05 * gt
    bool defined() const { return pixel_count > 0; }
};

// Region all uses valid_mask; noc uses noc_mask & valid_mask (absent noc mask -> no noc report).
// An empty selection yields a report with pixel_count 0 and every metric left at 0.
MetricReport compute_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask, Region region = Region::all);
std::vector<MetricReport> compute_metrics(const Tensor& pred, const StereoSample& sample);

// Pixel-weighted accumulation across samples.
class MetricAccumulator {
public:
    void add(const Tensor& pred, const Tensor& gt, const Mask& mask);
    MetricReport report(Region region) const;

private:
    int64_t pixels_ = 0;
    double abs_sum_ = 0.0;
    std::array<int64_t, 5> over_{};
    int64_t d1_ = 0;
};

// CSV: sample,region,pixels,epe,err1,err2,err3,err4,err5,d1; undefined reports
// print empty metric fields.
class MetricsCsv {
public:
    explicit MetricsCsv(std::ostream& out);
    void row(const std::string& sample, const MetricReport& r);

private:
    std::ostream& out_;
};

} // namespace stereo
