#include "lmtree/kernels.hpp"

#include <arm_neon.h>

namespace lmtree::kernels::neon {

GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group) {
    const uint8x16_t want = vdupq_n_u8(group);
    const uint8x16_t one = vdupq_n_u8(1);
    std::uint64_t size = 0, positives = 0;
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        uint8x16_t in_group = vceqq_u8(vld1q_u8(groups + i), want);
        uint8x16_t pos = vandq_u8(in_group, vceqq_u8(vld1q_u8(labels + i), one));
        // 0xff lanes -> 1, then horizontal add
        size += vaddvq_u8(vshrq_n_u8(in_group, 7));
        positives += vaddvq_u8(vshrq_n_u8(pos, 7));
    }
    GroupCount tail = scalar::count_group(labels + i, groups + i, n - i, group);
    return {size + tail.size, positives + tail.positives};
}

ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold) {
    const float64x2_t t = vdupq_n_f64(threshold);
    std::uint64_t predicted = 0, hits = 0;
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t ge = vcgeq_f64(vld1q_f64(ratios + i), t);
        std::uint64_t g0 = vgetq_lane_u64(ge, 0) & 1, g1 = vgetq_lane_u64(ge, 1) & 1;
        predicted += g0 + g1;
        hits += (g0 & (labels[i] == 1)) + (g1 & (labels[i + 1] == 1));
    }
    ThresholdCount tail = scalar::count_at_threshold(ratios + i, labels + i, n - i, threshold);
    return {predicted + tail.predicted_positive, hits + tail.true_positive};
}

}  // namespace lmtree::kernels::neon
