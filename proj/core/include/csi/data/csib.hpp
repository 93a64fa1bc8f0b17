#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csi/data/dataset.hpp"

namespace csi::data {

// CSIB dataset container.
//
// Layout (little-endian):
//   magic   "CSIB"           4 bytes
//   version u16 = 1
//   N, A, K, T               u32 each
//   C       u16              class count
//   N records: label u16, A*K*T float32 row-major
//
// Version 0x8001 marks an adversarial batch: identical layout except a
// list of N u32 clean-sample indices follows the header before the
// records (see csi/attacks).
inline constexpr std::uint16_t kCsibVersion = 1;
inline constexpr std::uint16_t kCsibAdvVersion = 0x8001;

void write_csib(const std::vector<CsiSample>& samples, const std::string& path);

std::vector<CsiSample> read_csib(const std::string& path);

// Adversarial batch: perturbed samples paired with the indices of the
// clean samples they were crafted from.
struct AdvBatch {
    std::vector<CsiSample> samples;
    std::vector<std::uint32_t> clean_index;
};

void write_adv_batch(const AdvBatch& batch, const std::string& path);
AdvBatch read_adv_batch(const std::string& path);

} // namespace csi::data
