#pragma once

#include <vector>

#include "stereo/layers.hpp"

namespace stereo {

// V[n, g, k, y, x] = (G / C) * sum_{c in group g} left[n, c, y, x] * right[n, c, y, x - offsets[k]],
// zero where x - offsets[k] leaves the image. Groups are contiguous channel blocks.
// left/right [N, C, H, W] -> [N, G, K, H, W].
Tensor correlation_volume(const Tensor& left, const Tensor& right, const std::vector<int>& offsets, int groups);

// [N, 2C, D, H, W]: left features on the first C channels for every d, right
// features shifted by d on the last C channels (zero where x < d).
Tensor build_concat_volume(const Tensor& left, const Tensor& right, int max_disparity);

// Group-wise correlation over disparities 0 .. D-1.
Tensor build_gwc_volume(const Tensor& left, const Tensor& right, int max_disparity, int groups);

// Disparity count per pyramid level: D_1 = max_disparity / 4, then halving
// with rounding up, matching stride-2 convolutions with padding 1.
std::vector<int> level_disparities(int max_disparity);

// 1x1x1 convolution (with bias, no normalization or activation) applied to the
// group-wise correlation half before it is concatenated to the concat volume.
class CombinationVolume {
public:
    CombinationVolume() = default;
    CombinationVolume(ParameterSet& params, const std::string& name, int groups, int64_t projected_groups);

    // Channels: 2 * C(concat features) + projected_groups.
    Tensor operator()(const Tensor& concat_left, const Tensor& concat_right, const Tensor& gwc_left,
                      const Tensor& gwc_right, int max_disparity) const;

    int groups = 1;
    Conv projection;
};

// Signed residue offsets {-D_r/2, ..., D_r - 1 - D_r/2}; always contains 0.
std::vector<int> residue_offsets(int displacement);

struct WarpedCorrelation {
    Tensor volume;        // [N, D_r, H, W]
    Tensor warped_right;  // [N, C, H, W]
    std::vector<int> offsets;
};

// Warps the right features by the initial disparity, then correlates them with
// the left features over the residue offsets using one group.
WarpedCorrelation build_warped_correlation(const Tensor& left, const Tensor& right, const Tensor& init_disparity,
                                           const std::vector<int>& offsets);

// Signed left - warped right.
Tensor reconstruction_error(const Tensor& left, const Tensor& warped_right);

} // namespace stereo
