#include "lmtree/kernels.hpp"

#include <immintrin.h>

namespace lmtree::kernels::avx2 {

GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group) {
    const __m256i want = _mm256_set1_epi8(static_cast<char>(group));
    const __m256i one = _mm256_set1_epi8(1);
    std::uint64_t size = 0, positives = 0;
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        __m256i g = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(groups + i));
        __m256i l = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(labels + i));
        __m256i in_group = _mm256_cmpeq_epi8(g, want);
        __m256i pos = _mm256_and_si256(in_group, _mm256_cmpeq_epi8(l, one));
        size += static_cast<std::uint64_t>(_mm_popcnt_u32(static_cast<unsigned>(_mm256_movemask_epi8(in_group))));
        positives += static_cast<std::uint64_t>(_mm_popcnt_u32(static_cast<unsigned>(_mm256_movemask_epi8(pos))));
    }
    GroupCount tail = scalar::count_group(labels + i, groups + i, n - i, group);
    return {size + tail.size, positives + tail.positives};
}

ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold) {
    const __m256d t = _mm256_set1_pd(threshold);
    const __m256i one = _mm256_set1_epi64x(1);
    std::uint64_t predicted = 0, hits = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d r = _mm256_loadu_pd(ratios + i);
        int ge = _mm256_movemask_pd(_mm256_cmp_pd(r, t, _CMP_GE_OQ));
        int packed;
        __builtin_memcpy(&packed, labels + i, sizeof packed);
        __m256i l = _mm256_cvtepu8_epi64(_mm_cvtsi32_si128(packed));
        int pos = _mm256_movemask_pd(_mm256_castsi256_pd(_mm256_cmpeq_epi64(l, one)));
        predicted += static_cast<std::uint64_t>(_mm_popcnt_u32(static_cast<unsigned>(ge)));
        hits += static_cast<std::uint64_t>(_mm_popcnt_u32(static_cast<unsigned>(ge & pos)));
    }
    ThresholdCount tail = scalar::count_at_threshold(ratios + i, labels + i, n - i, threshold);
    return {predicted + tail.predicted_positive, hits + tail.true_positive};
}

}  // namespace lmtree::kernels::avx2
