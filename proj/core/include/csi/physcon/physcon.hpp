#pragma once

#include <optional>
#include <vector>

#include "csi/grad/tensor.hpp"

namespace csi::phys {

enum class PdpKind { Gaussian, Exponential };

enum class BandwidthMode { MedianHeuristic, Fixed };

// Channel-realism parameters for the constrained projection.
//
// rx_cov is either given explicitly (A x A symmetric positive definite) or
// estimated from clean training tensors with a ridge term.
struct PhysConfig {
    PdpKind pdp_kind = PdpKind::Gaussian;
    double tau_rms = 50e-9;                   // seconds
    std::vector<double> freqs;                // K subcarrier center frequencies, Hz, strictly increasing
    double sigma_t = 3.0;                     // temporal Gaussian width, packets
    std::optional<std::vector<double>> rx_cov; // A x A row-major; nullopt = estimate from clean
    double ridge = 1e-3;                      // lambda_r for estimated covariance
    double mmd_weight = 0.25;                 // w_MMD in the constrained attack loss
    BandwidthMode mmd_bandwidth = BandwidthMode::MedianHeuristic;
    double mmd_sigma = 1.0;                   // used when mmd_bandwidth == Fixed

    // Evenly spaced subcarrier grid starting at 0 Hz.
    static std::vector<double> uniform_freqs(int k, double spacing_hz);
};

// Subcarrier correlation matrix C (K x K) from the power delay profile:
// Gaussian PDP:      C_ij = exp(-(2 pi tau |fi - fj|)^2)
// Exponential PDP:   C_ij = (1 + (2 pi tau |fi - fj|)^2)^(-1/2)
// Diagonal normalized to 1.
std::vector<double> freq_corr_matrix(const std::vector<double>& freqs, double tau_rms, PdpKind kind);

// Per-(antenna, subcarrier) row convolution with a normalized Gaussian of
// width sigma_t, truncated at +-3 sigma, reflective boundary. sigma_t == 0
// is the identity. delta has shape (A,K,T).
grad::Tensor temporal_smooth(const grad::Tensor& delta, double sigma_t);

// Per-(subcarrier, time) antenna vector multiplied by L^T where
// rx_cov = L L^T. delta has shape (A,K,T); rx_cov is A x A.
grad::Tensor spatial_correlate(const grad::Tensor& delta, const std::vector<double>& rx_cov);

// Antenna-dimension sample covariance of clean tensors plus ridge:
// R <- R + ridge * trace(R)/A * I.
std::vector<double> estimate_rx_cov(const std::vector<grad::Tensor>& clean, double ridge);

// Unbiased-within / biased-cross RBF MMD^2 estimator between equally sized
// batches (rows are flattened samples):
//   1/(m(m-1)) sum_{i!=j} [k(xi,xj)+k(yi,yj)] - 2/m^2 sum_{i,j} k(xi,yj)
// with k(u,v) = exp(-gamma ||u-v||^2), gamma = 1/(2 sigma^2).
double mmd_rbf(const std::vector<grad::Tensor>& x,
               const std::vector<grad::Tensor>& y,
               BandwidthMode mode,
               double fixed_sigma = 1.0);

// Gradient of mmd_rbf w.r.t. each row of y (same bandwidth resolution as
// the value call). Used by the constrained attack loss.
std::vector<grad::Tensor> mmd_rbf_grad_y(const std::vector<grad::Tensor>& x,
                                         const std::vector<grad::Tensor>& y,
                                         BandwidthMode mode,
                                         double fixed_sigma = 1.0);

// Resolved sigma for the RBF kernel (median heuristic on the pooled batch,
// or the fixed value). Exposed so attack loss and gradient agree.
double mmd_bandwidth_sigma(const std::vector<grad::Tensor>& x,
                           const std::vector<grad::Tensor>& y,
                           BandwidthMode mode,
                           double fixed_sigma);

// Precomputed operator state shared across projection calls.
class PhysProjector {
public:
    // clean_train: used for covariance estimation when cfg.rx_cov is empty;
    // may be empty if rx_cov is given. a/k/t are the tensor dims.
    PhysProjector(PhysConfig cfg, int a, int k, int t, const std::vector<grad::Tensor>& clean_train);

    // Correlation shaping without the energy projection: C-multiplication
    // along subcarriers, temporal smoothing, spatial correlation.
    grad::Tensor shape_only(const grad::Tensor& delta) const;

    // Full projection: shaping followed by rescale to exactly ||delta|| = eps.
    // If shaping annihilates delta the zero tensor is returned and
    // *zero_flag (when given) is set.
    grad::Tensor project(const grad::Tensor& delta, double eps, bool* zero_flag = nullptr) const;

    const PhysConfig& config() const { return cfg_; }
    const std::vector<double>& freq_corr() const { return corr_; }
    const std::vector<double>& rx_cov() const { return rx_cov_; }

private:
    PhysConfig cfg_;
    int a_, k_, t_;
    std::vector<double> corr_;     // K x K
    std::vector<double> rx_cov_;   // A x A
};

} // namespace csi::phys
