#include "csi/physcon/physcon.hpp"

#include <algorithm>
#include <cmath>

#include "csi/error.hpp"
#include "csi/linalg.hpp"

namespace csi::phys {

using grad::Tensor;
using grad::idx3;

std::vector<double> PhysConfig::uniform_freqs(int k, double spacing_hz) {
    if (k < 1 || spacing_hz <= 0.0) throw ConfigError("uniform_freqs: k >= 1 and spacing > 0 required");
    std::vector<double> f(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) f[static_cast<std::size_t>(i)] = spacing_hz * i;
    return f;
}

std::vector<double> freq_corr_matrix(const std::vector<double>& freqs, double tau_rms, PdpKind kind) {
    const int k = static_cast<int>(freqs.size());
    if (k < 1) throw ConfigError("freq_corr_matrix: need at least one subcarrier");
    if (tau_rms <= 0.0) throw ConfigError("freq_corr_matrix: tau_rms must be > 0");
    for (int i = 1; i < k; ++i) {
        if (freqs[static_cast<std::size_t>(i)] <= freqs[static_cast<std::size_t>(i - 1)]) {
            throw ConfigError("freq_corr_matrix: frequencies must be strictly increasing at index " +
                              std::to_string(i));
        }
    }
    const double two_pi = 6.283185307179586476925286766559;
    std::vector<double> c(static_cast<std::size_t>(k) * k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double d = two_pi * tau_rms * std::abs(freqs[static_cast<std::size_t>(i)] - freqs[static_cast<std::size_t>(j)]);
            double v;
            if (kind == PdpKind::Gaussian) {
                v = std::exp(-d * d);
            } else {
                v = 1.0 / std::sqrt(1.0 + d * d);
            }
            c[static_cast<std::size_t>(i) * k + j] = v;
        }
    }
    // diag is 1 by construction; keep the normalization as a safeguard
    for (int i = 0; i < k; ++i) c[static_cast<std::size_t>(i) * k + i] = 1.0;
    return c;
}

Tensor temporal_smooth(const Tensor& delta, double sigma_t) {
    if (sigma_t < 0.0) throw ConfigError("temporal_smooth: sigma_t must be >= 0");
    if (delta.rank() != 3) throw ShapeError("temporal_smooth expects (A,K,T)");
    if (sigma_t == 0.0) return delta;

    const int radius = static_cast<int>(std::floor(3.0 * sigma_t + 1e-12));
    if (radius == 0) return delta;
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-static_cast<double>(i) * i / (2.0 * sigma_t * sigma_t));
        kernel[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : kernel) w /= sum;

    const int a = delta.dim(0), k = delta.dim(1), t = delta.dim(2);
    Tensor out = Tensor::zeros({a, k, t});
    // reflective boundary: index -1 -> 0, t -> t-1 (mirror without repeat
    // would be -1 -> 1; simple reflection keeps the kernel mass inside)
    auto reflect = [t](int i) {
        while (i < 0 || i >= t) {
            if (i < 0) i = -i - 1;
            if (i >= t) i = 2 * t - 1 - i;
        }
        return i;
    };
    for (int ia = 0; ia < a; ++ia) {
        for (int ik = 0; ik < k; ++ik) {
            const double* row = delta.data() + idx3(k, t, ia, ik, 0);
            double* orow = out.data() + idx3(k, t, ia, ik, 0);
            for (int it = 0; it < t; ++it) {
                double acc = 0.0;
                for (int q = -radius; q <= radius; ++q) {
                    acc += kernel[static_cast<std::size_t>(q + radius)] * row[reflect(it + q)];
                }
                orow[it] = acc;
            }
        }
    }
    return out;
}

Tensor spatial_correlate(const Tensor& delta, const std::vector<double>& rx_cov) {
    if (delta.rank() != 3) throw ShapeError("spatial_correlate expects (A,K,T)");
    const int a = delta.dim(0), k = delta.dim(1), t = delta.dim(2);
    if (rx_cov.size() != static_cast<std::size_t>(a) * a) {
        throw ShapeError("spatial_correlate: covariance must be A x A");
    }
    std::vector<double> l;
    try {
        l = linalg::cholesky(rx_cov, a);
    } catch (const NumericError&) {
        const auto eig = linalg::symmetric_eigenvalues(rx_cov, a);
        throw NumericError("spatial_correlate: covariance not positive definite, min eigenvalue " +
                           std::to_string(eig.front()));
    }
    Tensor out = Tensor::zeros({a, k, t});
    std::vector<double> vec(static_cast<std::size_t>(a));
    for (int ik = 0; ik < k; ++ik) {
        for (int it = 0; it < t; ++it) {
            for (int ia = 0; ia < a; ++ia) vec[static_cast<std::size_t>(ia)] = delta[idx3(k, t, ia, ik, it)];
            // row-vector times L^T == L times column-vector
            for (int ia = 0; ia < a; ++ia) {
                const double* lrow = l.data() + static_cast<std::size_t>(ia) * a;
                double acc = 0.0;
                for (int q = 0; q <= ia; ++q) acc += lrow[q] * vec[static_cast<std::size_t>(q)];
                out[idx3(k, t, ia, ik, it)] = acc;
            }
        }
    }
    return out;
}

std::vector<double> estimate_rx_cov(const std::vector<Tensor>& clean, double ridge) {
    if (clean.empty()) throw ConfigError("estimate_rx_cov: no clean tensors");
    const int a = clean.front().dim(0);
    const int k = clean.front().dim(1);
    const int t = clean.front().dim(2);
    std::vector<double> mean(static_cast<std::size_t>(a), 0.0);
    std::size_t count = 0;
    for (const Tensor& x : clean) {
        for (int ik = 0; ik < k; ++ik) {
            for (int it = 0; it < t; ++it) {
                for (int ia = 0; ia < a; ++ia) mean[static_cast<std::size_t>(ia)] += x[idx3(k, t, ia, ik, it)];
                ++count;
            }
        }
    }
    for (double& m : mean) m /= static_cast<double>(count);
    std::vector<double> r(static_cast<std::size_t>(a) * a, 0.0);
    for (const Tensor& x : clean) {
        for (int ik = 0; ik < k; ++ik) {
            for (int it = 0; it < t; ++it) {
                for (int ia = 0; ia < a; ++ia) {
                    const double vi = x[idx3(k, t, ia, ik, it)] - mean[static_cast<std::size_t>(ia)];
                    for (int ja = 0; ja <= ia; ++ja) {
                        const double vj = x[idx3(k, t, ja, ik, it)] - mean[static_cast<std::size_t>(ja)];
                        r[static_cast<std::size_t>(ia) * a + ja] += vi * vj;
                    }
                }
            }
        }
    }
    for (int ia = 0; ia < a; ++ia) {
        for (int ja = 0; ja <= ia; ++ja) {
            const double v = r[static_cast<std::size_t>(ia) * a + ja] / static_cast<double>(count);
            r[static_cast<std::size_t>(ia) * a + ja] = v;
            r[static_cast<std::size_t>(ja) * a + ia] = v;
        }
    }
    double trace = 0.0;
    for (int ia = 0; ia < a; ++ia) trace += r[static_cast<std::size_t>(ia) * a + ia];
    const double lift = ridge * trace / static_cast<double>(a);
    for (int ia = 0; ia < a; ++ia) r[static_cast<std::size_t>(ia) * a + ia] += lift;
    return r;
}

namespace {

double sq_dist(const Tensor& u, const Tensor& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        s += d * d;
    }
    return s;
}

} // namespace

double mmd_bandwidth_sigma(const std::vector<Tensor>& x,
                           const std::vector<Tensor>& y,
                           BandwidthMode mode,
                           double fixed_sigma) {
    if (mode == BandwidthMode::Fixed) return fixed_sigma;
    // median of pairwise distances over the pooled batch
    std::vector<const Tensor*> pool;
    pool.reserve(x.size() + y.size());
    for (const Tensor& t : x) pool.push_back(&t);
    for (const Tensor& t : y) pool.push_back(&t);
    std::vector<double> dist;
    dist.reserve(pool.size() * (pool.size() - 1) / 2);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        for (std::size_t j = i + 1; j < pool.size(); ++j) {
            dist.push_back(std::sqrt(sq_dist(*pool[i], *pool[j])));
        }
    }
    if (dist.empty()) return fixed_sigma;
    std::sort(dist.begin(), dist.end());
    const double median = dist[dist.size() / 2];
    return median > 0.0 ? median : fixed_sigma;
}

double mmd_rbf(const std::vector<Tensor>& x,
               const std::vector<Tensor>& y,
               BandwidthMode mode,
               double fixed_sigma) {
    const std::size_t m = x.size();
    if (m != y.size() || m < 2) throw ConfigError("mmd_rbf: batches must have equal size m >= 2");
    const double sigma = mmd_bandwidth_sigma(x, y, mode, fixed_sigma);
    const double gamma = 1.0 / (2.0 * sigma * sigma);

    double within = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            within += std::exp(-gamma * sq_dist(x[i], x[j]));
            within += std::exp(-gamma * sq_dist(y[i], y[j]));
        }
    }
    double cross = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            cross += std::exp(-gamma * sq_dist(x[i], y[j]));
        }
    }
    const double md = static_cast<double>(m);
    return within / (md * (md - 1.0)) - 2.0 * cross / (md * md);
}

std::vector<Tensor> mmd_rbf_grad_y(const std::vector<Tensor>& x,
                                   const std::vector<Tensor>& y,
                                   BandwidthMode mode,
                                   double fixed_sigma) {
    const std::size_t m = x.size();
    if (m != y.size() || m < 2) throw ConfigError("mmd_rbf_grad_y: batches must have equal size m >= 2");
    // The bandwidth is treated as a constant of the batch (also under the
    // median heuristic), matching the value computation.
    const double sigma = mmd_bandwidth_sigma(x, y, mode, fixed_sigma);
    const double gamma = 1.0 / (2.0 * sigma * sigma);
    const double md = static_cast<double>(m);

    std::vector<Tensor> grads;
    grads.reserve(m);
    for (std::size_t i = 0; i < m; ++i) grads.push_back(Tensor::zeros(y[i].shape()));

    // d/dy_i exp(-g ||y_i - v||^2) = -2 g (y_i - v) k(y_i, v)
    for (std::size_t i = 0; i < m; ++i) {
        Tensor& g = grads[i];
        for (std::size_t j = 0; j < m; ++j) {
            if (i != j) {
                // within-Y term, pair (i,j) and (j,i) both contribute
                const double kv = std::exp(-gamma * sq_dist(y[i], y[j]));
                const double c = -2.0 * gamma * kv * 2.0 / (md * (md - 1.0));
                for (std::size_t q = 0; q < g.size(); ++q) g[q] += c * (y[i][q] - y[j][q]);
            }
            const double kc = std::exp(-gamma * sq_dist(x[j], y[i]));
            const double cc = 2.0 / (md * md) * 2.0 * gamma * kc;
            for (std::size_t q = 0; q < g.size(); ++q) g[q] += cc * (y[i][q] - x[j][q]);
        }
    }
    return grads;
}

PhysProjector::PhysProjector(PhysConfig cfg, int a, int k, int t, const std::vector<Tensor>& clean_train)
    : cfg_(std::move(cfg)), a_(a), k_(k), t_(t) {
    if (cfg_.freqs.empty()) throw ConfigError("PhysProjector: config has no subcarrier frequencies");
    if (static_cast<int>(cfg_.freqs.size()) != k) {
        throw ShapeError("PhysProjector: frequency grid size " + std::to_string(cfg_.freqs.size()) +
                         " does not match K=" + std::to_string(k));
    }
    corr_ = freq_corr_matrix(cfg_.freqs, cfg_.tau_rms, cfg_.pdp_kind);
    if (cfg_.rx_cov.has_value()) {
        if (cfg_.rx_cov->size() != static_cast<std::size_t>(a) * a) {
            throw ShapeError("PhysProjector: rx_cov must be A x A");
        }
        rx_cov_ = *cfg_.rx_cov;
    } else {
        rx_cov_ = estimate_rx_cov(clean_train, cfg_.ridge);
    }
    // fail fast if the covariance cannot be factorized
    (void)linalg::cholesky(rx_cov_, a_);
}

Tensor PhysProjector::shape_only(const Tensor& delta) const {
    if (delta.rank() != 3 || delta.dim(0) != a_ || delta.dim(1) != k_ || delta.dim(2) != t_) {
        throw ShapeError("PhysProjector: delta shape mismatch");
    }
    // frequency correlation: delta[a,:,t] <- C * delta[a,:,t]
    Tensor shaped = Tensor::zeros({a_, k_, t_});
    std::vector<double> col(static_cast<std::size_t>(k_)), mixed(static_cast<std::size_t>(k_));
    for (int ia = 0; ia < a_; ++ia) {
        for (int it = 0; it < t_; ++it) {
            for (int ik = 0; ik < k_; ++ik) col[static_cast<std::size_t>(ik)] = delta[idx3(k_, t_, ia, ik, it)];
            linalg::matvec(corr_, col.data(), mixed.data(), k_);
            for (int ik = 0; ik < k_; ++ik) shaped[idx3(k_, t_, ia, ik, it)] = mixed[static_cast<std::size_t>(ik)];
        }
    }
    shaped = temporal_smooth(shaped, cfg_.sigma_t);
    shaped = spatial_correlate(shaped, rx_cov_);
    return shaped;
}

Tensor PhysProjector::project(const Tensor& delta, double eps, bool* zero_flag) const {
    if (eps <= 0.0) throw ConfigError("PhysProjector::project: eps must be > 0");
    Tensor shaped = shape_only(delta);
    const double norm = shaped.l2_norm();
    if (zero_flag != nullptr) *zero_flag = false;
    if (norm == 0.0) {
        if (zero_flag != nullptr) *zero_flag = true;
        return shaped;
    }
    shaped.scale(eps / norm);
    return shaped;
}

} // namespace csi::phys
