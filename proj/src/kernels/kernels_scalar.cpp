#include "lmtree/kernels.hpp"

namespace lmtree::kernels::scalar {

GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group) {
    GroupCount c;
    for (std::size_t i = 0; i < n; ++i) {
        if (groups[i] != group) continue;
        ++c.size;
        c.positives += labels[i] == 1;
    }
    return c;
}

ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold) {
    ThresholdCount c;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(ratios[i] >= threshold)) continue;
        ++c.predicted_positive;
        c.true_positive += labels[i] == 1;
    }
    return c;
}

}  // namespace lmtree::kernels::scalar
