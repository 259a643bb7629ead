#pragma once

// Data-parallel counting loops used by split scoring and threshold scans.
// Each kernel has a scalar reference and ISA-specific variants selected once
// at runtime; the variants must agree bit for bit with the reference.

#include <cstddef>
#include <cstdint>
#include <span>

namespace lmtree::kernels {

enum class Isa { Scalar, Avx2, Neon };

const char* isa_name(Isa isa);
bool isa_available(Isa isa);

// Best available ISA, unless LMTREE_KERNELS=scalar is set in the environment.
Isa active_isa();

struct GroupCount {
    std::uint64_t size = 0;
    std::uint64_t positives = 0;
    bool operator==(const GroupCount&) const = default;
};

struct ThresholdCount {
    std::uint64_t predicted_positive = 0;
    std::uint64_t true_positive = 0;
    bool operator==(const ThresholdCount&) const = default;
};

// Over i with groups[i] == group: how many, and how many have labels[i] == 1.
// labels holds 0/1 bytes; spans must have equal length.
GroupCount count_group(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> groups,
                       std::uint8_t group);
GroupCount count_group(Isa isa, std::span<const std::uint8_t> labels, std::span<const std::uint8_t> groups,
                       std::uint8_t group);

// Over i with ratios[i] >= threshold: how many, and how many have labels[i] == 1.
ThresholdCount count_at_threshold(std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                  double threshold);
ThresholdCount count_at_threshold(Isa isa, std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                  double threshold);

namespace scalar {
GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group);
ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold);
}  // namespace scalar

namespace avx2 {
GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group);
ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold);
}  // namespace avx2

namespace neon {
GroupCount count_group(const std::uint8_t* labels, const std::uint8_t* groups, std::size_t n, std::uint8_t group);
ThresholdCount count_at_threshold(const double* ratios, const std::uint8_t* labels, std::size_t n, double threshold);
}  // namespace neon

}  // namespace lmtree::kernels
