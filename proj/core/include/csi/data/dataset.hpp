#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csi/grad/tensor.hpp"
#include "csi/physcon/physcon.hpp"

namespace csi::data {

// One labeled CSI amplitude tensor of shape (antennas, subcarriers, packets).
struct CsiSample {
    grad::Tensor amplitudes;
    int label = 0;
};

struct Dims {
    int antennas = 3;
    int subcarriers = 30;
    int packets = 250;
};

// WSSUS channel parameters for synthetic generation.
struct ChannelParams {
    phys::PdpKind pdp_kind = phys::PdpKind::Gaussian;
    double tau_rms = 50e-9;             // seconds
    double subcarrier_spacing = 312.5e3; // Hz (20 MHz / 64)
    double doppler_max = 40.0;          // Hz, band limit of channel evolution
    double packet_rate = 500.0;         // Hz; must exceed 2 * doppler_max
    double noise_std = 0.05;            // additive amplitude noise
    bool temporal_smooth = false;       // moving-average width 5 along packets
};

// Synthetic dataset: every class modulates a common WSSUS base channel with
// a class-specific chirped Doppler trajectory and subcarrier weighting.
// Amplitudes are positive, quantized to float32 precision (the storage
// precision of the CSIB container) and deterministic for a fixed seed.
std::vector<CsiSample> synth_generate(const ChannelParams& params,
                                      int n_classes,
                                      int n_per_class,
                                      const Dims& dims,
                                      std::uint64_t seed);

// Per-(antenna, subcarrier) z-score statistics, computed on the train split
// and applied unchanged elsewhere.
struct NormStats {
    int antennas = 0;
    int subcarriers = 0;
    std::vector<double> mean;   // A*K
    std::vector<double> std;    // A*K, clamped to >= 1e-8
    std::vector<int> clamped;   // flat (a*K+k) indices of zero-variance channels
};

NormStats compute_norm_stats(const std::vector<CsiSample>& train);
void apply_normalization(std::vector<CsiSample>& samples, const NormStats& stats);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct DatasetSplit {
    std::vector<CsiSample> train;
    std::vector<CsiSample> val;
    std::vector<CsiSample> test;
    std::uint64_t seed = 0;
    SplitRatios ratios;
};

// Stratified deterministic split. Every class must have at least 3 samples.
// Split totals follow largest-remainder rounding of N * ratios and
// per-class allocations stay within one sample of n_c * ratio.
DatasetSplit split(const std::vector<CsiSample>& samples, const SplitRatios& ratios, std::uint64_t seed);

// Moving-average along packets (reflected edges), width must be odd.
void moving_average_time(std::vector<CsiSample>& samples, int width);

int count_classes(const std::vector<CsiSample>& samples);

} // namespace csi::data
