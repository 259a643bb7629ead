#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "lmtree/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define LMTREE_X86 1
#else
#define LMTREE_X86 0
#endif

#if defined(__aarch64__)
#define LMTREE_ARM64 1
#else
#define LMTREE_ARM64 0
#endif

namespace lmtree::kernels {

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
        case Isa::Neon: return "neon";
    }
    return "?";
}

bool isa_available(Isa isa) {
    switch (isa) {
        case Isa::Scalar: return true;
        case Isa::Avx2:
#if LMTREE_X86 && defined(__GNUC__)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("popcnt");
#else
            return false;
#endif
        case Isa::Neon: return LMTREE_ARM64 != 0;
    }
    return false;
}

Isa active_isa() {
    static const Isa isa = [] {
        const char* force = std::getenv("LMTREE_KERNELS");
        if (force && std::strcmp(force, "scalar") == 0) return Isa::Scalar;
        if (isa_available(Isa::Avx2)) return Isa::Avx2;
        if (isa_available(Isa::Neon)) return Isa::Neon;
        return Isa::Scalar;
    }();
    return isa;
}

GroupCount count_group(Isa isa, std::span<const std::uint8_t> labels, std::span<const std::uint8_t> groups,
                       std::uint8_t group) {
    if (labels.size() != groups.size()) throw std::invalid_argument("count_group: length mismatch");
    if (!isa_available(isa)) isa = Isa::Scalar;
    switch (isa) {
#if LMTREE_X86
        case Isa::Avx2: return avx2::count_group(labels.data(), groups.data(), labels.size(), group);
#endif
#if LMTREE_ARM64
        case Isa::Neon: return neon::count_group(labels.data(), groups.data(), labels.size(), group);
#endif
        default: return scalar::count_group(labels.data(), groups.data(), labels.size(), group);
    }
}

GroupCount count_group(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> groups,
                       std::uint8_t group) {
    return count_group(active_isa(), labels, groups, group);
}

ThresholdCount count_at_threshold(Isa isa, std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                  double threshold) {
    if (labels.size() != ratios.size()) throw std::invalid_argument("count_at_threshold: length mismatch");
    if (!isa_available(isa)) isa = Isa::Scalar;
    switch (isa) {
#if LMTREE_X86
        case Isa::Avx2: return avx2::count_at_threshold(ratios.data(), labels.data(), labels.size(), threshold);
#endif
#if LMTREE_ARM64
        case Isa::Neon: return neon::count_at_threshold(ratios.data(), labels.data(), labels.size(), threshold);
#endif
        default: return scalar::count_at_threshold(ratios.data(), labels.data(), labels.size(), threshold);
    }
}

ThresholdCount count_at_threshold(std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                  double threshold) {
    return count_at_threshold(active_isa(), ratios, labels, threshold);
}

}  // namespace lmtree::kernels
