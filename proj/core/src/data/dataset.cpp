#include "csi/data/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "csi/error.hpp"
#include "csi/linalg.hpp"
#include "csi/rng.hpp"

namespace csi::data {

using grad::Tensor;
using grad::idx3;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Antenna correlation used by the generator, rho^|i-j|.
std::vector<double> antenna_corr(int a, double rho) {
    std::vector<double> r(static_cast<std::size_t>(a) * a);
    for (int i = 0; i < a; ++i) {
        for (int j = 0; j < a; ++j) {
            r[static_cast<std::size_t>(i) * a + j] = std::pow(rho, std::abs(i - j));
        }
    }
    return r;
}

} // namespace

std::vector<CsiSample> synth_generate(const ChannelParams& params,
                                      int n_classes,
                                      int n_per_class,
                                      const Dims& dims,
                                      std::uint64_t seed) {
    if (dims.antennas < 1 || dims.subcarriers < 1 || dims.packets < 1) {
        throw ConfigError("synth_generate: dims must be positive");
    }
    if (n_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
    if (n_per_class < 1) throw ConfigError("synth_generate: need at least 1 sample per class");
    if (params.tau_rms <= 0.0 || params.subcarrier_spacing <= 0.0 || params.packet_rate <= 0.0) {
        throw ConfigError("synth_generate: tau_rms, subcarrier_spacing, packet_rate must be > 0");
    }
    if (params.doppler_max < 0.0) throw ConfigError("synth_generate: doppler_max must be >= 0");
    if (params.packet_rate <= 2.0 * params.doppler_max) {
        throw ConfigError("synth_generate: packet_rate must exceed 2 * doppler_max (Nyquist)");
    }
    if (params.noise_std < 0.0) throw ConfigError("synth_generate: noise_std must be >= 0");

    const int a = dims.antennas, k = dims.subcarriers, t = dims.packets;

    // Correlation factors shared by all samples.
    const auto freqs = phys::PhysConfig::uniform_freqs(k, params.subcarrier_spacing);
    auto corr = phys::freq_corr_matrix(freqs, params.tau_rms, params.pdp_kind);
    for (int i = 0; i < k; ++i) corr[static_cast<std::size_t>(i) * k + i] += 1e-9;
    const auto lf = linalg::cholesky(corr, k);
    auto rx = antenna_corr(a, 0.5);
    for (int i = 0; i < a; ++i) rx[static_cast<std::size_t>(i) * a + i] += 1e-9;
    const auto la = linalg::cholesky(rx, a);

    // Channel evolution occupies the slow end of the Doppler band; the
    // class signatures (human motion) occupy the fast end. This is what
    // gives a Doppler-coherence projection something to separate.
    const int n_tones = 6;
    const double field_band = 0.10 * params.doppler_max;
    const double field_depth = 0.12;
    const double class_depth = 0.45;

    std::vector<CsiSample> out;
    out.reserve(static_cast<std::size_t>(n_classes) * n_per_class);

    const double duration = static_cast<double>(t) / params.packet_rate;
    std::vector<double> white(static_cast<std::size_t>(a) * k);
    std::vector<double> mixed_k(static_cast<std::size_t>(k));
    std::vector<double> col_a(static_cast<std::size_t>(a));

    for (int c = 0; c < n_classes; ++c) {
        // chirp start/end frequencies, distinct per class, inside the band
        const double span = n_classes > 1 ? static_cast<double>(c) / (n_classes - 1) : 0.0;
        const double f_start = params.doppler_max * (0.30 + 0.50 * span);
        const double f_end = std::min(params.doppler_max * 0.95,
                                      f_start + params.doppler_max * (c % 2 == 0 ? 0.12 : -0.08));
        const double chirp_rate = duration > 0.0 ? (f_end - f_start) / duration : 0.0;

        for (int s = 0; s < n_per_class; ++s) {
            Rng rng(Rng::derive(seed, "synth", static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)));

            // band-limited tone mixture with (A,K)-correlated coefficients
            std::vector<double> tone_cos(static_cast<std::size_t>(n_tones) * a * k);
            std::vector<double> tone_sin(static_cast<std::size_t>(n_tones) * a * k);
            std::vector<double> tone_w(static_cast<std::size_t>(n_tones));
            for (int m = 0; m < n_tones; ++m) {
                tone_w[static_cast<std::size_t>(m)] = field_band * std::cos(rng.uniform(0.0, kTwoPi));
                for (int comp = 0; comp < 2; ++comp) {
                    auto& dst = comp == 0 ? tone_cos : tone_sin;
                    for (std::size_t i = 0; i < white.size(); ++i) white[i] = rng.normal();
                    // correlate over K then over A
                    for (int ia = 0; ia < a; ++ia) {
                        linalg::matvec(lf, white.data() + static_cast<std::size_t>(ia) * k, mixed_k.data(), k);
                        for (int ik = 0; ik < k; ++ik) {
                            white[static_cast<std::size_t>(ia) * k + ik] = mixed_k[static_cast<std::size_t>(ik)];
                        }
                    }
                    for (int ik = 0; ik < k; ++ik) {
                        for (int ia = 0; ia < a; ++ia) col_a[static_cast<std::size_t>(ia)] = white[static_cast<std::size_t>(ia) * k + ik];
                        for (int ia = 0; ia < a; ++ia) {
                            double acc = 0.0;
                            for (int q = 0; q <= ia; ++q) acc += la[static_cast<std::size_t>(ia) * a + q] * col_a[static_cast<std::size_t>(q)];
                            dst[(static_cast<std::size_t>(m) * a + ia) * k + ik] = acc;
                        }
                    }
                }
            }

            const double phase_jitter = rng.uniform(-0.5, 0.5);
            const double psi0 = 0.8 * c;   // class-anchored phase
            Tensor x = Tensor::zeros({a, k, t});
            const double tone_norm = 1.0 / std::sqrt(static_cast<double>(n_tones));
            for (int it = 0; it < t; ++it) {
                const double tau = static_cast<double>(it) / params.packet_rate;
                const double phase = kTwoPi * (f_start * tau + 0.5 * chirp_rate * tau * tau) + psi0 + phase_jitter;
                const double cls = std::cos(phase);
                for (int ia = 0; ia < a; ++ia) {
                    for (int ik = 0; ik < k; ++ik) {
                        double field = 0.0;
                        for (int m = 0; m < n_tones; ++m) {
                            const double w = kTwoPi * tone_w[static_cast<std::size_t>(m)] * tau;
                            const std::size_t base = (static_cast<std::size_t>(m) * a + ia) * k + ik;
                            field += tone_cos[base] * std::cos(w) + tone_sin[base] * std::sin(w);
                        }
                        field *= tone_norm;
                        // class-specific subcarrier comb
                        const double comb = 1.0 + 0.30 * std::cos(kTwoPi * ik * (c + 1) / k + 0.7 * c);
                        const double base_profile =
                            (1.0 + 0.25 * std::cos(3.141592653589793 * ik / std::max(1, k - 1))) *
                            (1.0 + 0.05 * ia);
                        const double v = base_profile * std::exp(field_depth * field) *
                                         (1.0 + class_depth * comb * cls / 1.3);
                        x[idx3(k, t, ia, ik, it)] = v;
                    }
                }
            }
            if (params.noise_std > 0.0) {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    x[i] = std::max(0.0, x[i] + params.noise_std * rng.normal());
                }
            }
            // quantize to the container's storage precision so in-memory and
            // file-loaded pipelines see identical data
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = static_cast<double>(static_cast<float>(x[i]));
            }
            out.push_back(CsiSample{std::move(x), c});
        }
    }

    if (params.temporal_smooth) moving_average_time(out, 5);
    return out;
}

NormStats compute_norm_stats(const std::vector<CsiSample>& train) {
    if (train.empty()) throw ConfigError("compute_norm_stats: empty train set");
    const int a = train.front().amplitudes.dim(0);
    const int k = train.front().amplitudes.dim(1);
    const int t = train.front().amplitudes.dim(2);
    NormStats st;
    st.antennas = a;
    st.subcarriers = k;
    st.mean.assign(static_cast<std::size_t>(a) * k, 0.0);
    st.std.assign(static_cast<std::size_t>(a) * k, 0.0);

    const double count = static_cast<double>(train.size()) * t;
    for (const CsiSample& s : train) {
        for (int ia = 0; ia < a; ++ia) {
            for (int ik = 0; ik < k; ++ik) {
                const double* row = s.amplitudes.data() + idx3(k, t, ia, ik, 0);
                double acc = 0.0;
                for (int it = 0; it < t; ++it) acc += row[it];
                st.mean[static_cast<std::size_t>(ia) * k + ik] += acc;
            }
        }
    }
    for (double& m : st.mean) m /= count;
    for (const CsiSample& s : train) {
        for (int ia = 0; ia < a; ++ia) {
            for (int ik = 0; ik < k; ++ik) {
                const double m = st.mean[static_cast<std::size_t>(ia) * k + ik];
                const double* row = s.amplitudes.data() + idx3(k, t, ia, ik, 0);
                double acc = 0.0;
                for (int it = 0; it < t; ++it) {
                    const double d = row[it] - m;
                    acc += d * d;
                }
                st.std[static_cast<std::size_t>(ia) * k + ik] += acc;
            }
        }
    }
    for (std::size_t i = 0; i < st.std.size(); ++i) {
        double sd = std::sqrt(st.std[i] / count);
        if (sd < 1e-8) {
            sd = 1e-8;
            st.clamped.push_back(static_cast<int>(i));
        }
        st.std[i] = sd;
    }
    return st;
}

void apply_normalization(std::vector<CsiSample>& samples, const NormStats& stats) {
    if (samples.empty()) return;
    const int a = samples.front().amplitudes.dim(0);
    const int k = samples.front().amplitudes.dim(1);
    const int t = samples.front().amplitudes.dim(2);
    if (a != stats.antennas || k != stats.subcarriers) {
        throw ShapeError("apply_normalization: stats computed for different dims");
    }
    for (CsiSample& s : samples) {
        for (int ia = 0; ia < a; ++ia) {
            for (int ik = 0; ik < k; ++ik) {
                const double m = stats.mean[static_cast<std::size_t>(ia) * k + ik];
                const double inv = 1.0 / stats.std[static_cast<std::size_t>(ia) * k + ik];
                double* row = s.amplitudes.data() + idx3(k, t, ia, ik, 0);
                for (int it = 0; it < t; ++it) row[it] = (row[it] - m) * inv;
            }
        }
    }
}

DatasetSplit split(const std::vector<CsiSample>& samples, const SplitRatios& ratios, std::uint64_t seed) {
    const double rsum = ratios.train + ratios.val + ratios.test;
    if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0 || std::abs(rsum - 1.0) > 1e-9) {
        throw ConfigError("split: ratios must be positive and sum to 1");
    }
    if (samples.empty()) throw ConfigError("split: empty sample set");

    const int n_classes = count_classes(samples);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
    }
    for (int c = 0; c < n_classes; ++c) {
        if (by_class[static_cast<std::size_t>(c)].size() < 3) {
            throw ConfigError("split: class " + std::to_string(c) + " has fewer samples than splits");
        }
    }

    const double r[3] = {ratios.train, ratios.val, ratios.test};
    const std::size_t n = samples.size();

    // global quotas via largest remainder
    std::size_t quota[3];
    {
        double rem[3];
        std::size_t used = 0;
        for (int s = 0; s < 3; ++s) {
            const double want = static_cast<double>(n) * r[s];
            quota[s] = static_cast<std::size_t>(std::floor(want + 1e-9));
            rem[s] = want - static_cast<double>(quota[s]);
            used += quota[s];
        }
        while (used < n) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (rem[s] > rem[best] + 1e-12) best = s;
            }
            ++quota[best];
            rem[best] = -1.0;
            ++used;
        }
    }

    // per-class allocation via largest remainder
    std::vector<std::vector<long>> alloc(static_cast<std::size_t>(n_classes), std::vector<long>(3, 0));
    for (int c = 0; c < n_classes; ++c) {
        const std::size_t nc = by_class[static_cast<std::size_t>(c)].size();
        double rem[3];
        std::size_t used = 0;
        for (int s = 0; s < 3; ++s) {
            const double want = static_cast<double>(nc) * r[s];
            long base = static_cast<long>(std::floor(want + 1e-9));
            alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] = base;
            rem[s] = want - static_cast<double>(base);
            used += static_cast<std::size_t>(base);
        }
        while (used < nc) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (rem[s] > rem[best] + 1e-12) best = s;
            }
            ++alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(best)];
            rem[best] = -1.0;
            ++used;
        }
    }

    // reconcile split totals with global quotas; move single samples from
    // the most over-represented class of an over-full split, preferring
    // classes not moved before so per-class deviation stays within one
    std::vector<long> total(3, 0);
    for (int c = 0; c < n_classes; ++c) {
        for (int s = 0; s < 3; ++s) total[static_cast<std::size_t>(s)] += alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
    }
    std::vector<char> moved(static_cast<std::size_t>(n_classes), 0);
    for (int guard = 0; guard < 4 * n_classes; ++guard) {
        int over = -1, under = -1;
        for (int s = 0; s < 3; ++s) {
            if (total[static_cast<std::size_t>(s)] > static_cast<long>(quota[s])) over = s;
            if (total[static_cast<std::size_t>(s)] < static_cast<long>(quota[s])) under = s;
        }
        if (over < 0 || under < 0) break;
        int pick = -1;
        double best_excess = -1e9;
        for (int pass = 0; pass < 2 && pick < 0; ++pass) {
            for (int c = 0; c < n_classes; ++c) {
                if (pass == 0 && moved[static_cast<std::size_t>(c)]) continue;
                if (alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(over)] <= 0) continue;
                const double target = static_cast<double>(by_class[static_cast<std::size_t>(c)].size()) * r[over];
                const double excess = static_cast<double>(alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(over)]) - target;
                if (excess > best_excess + 1e-12) {
                    best_excess = excess;
                    pick = c;
                }
            }
        }
        if (pick < 0) break;
        --alloc[static_cast<std::size_t>(pick)][static_cast<std::size_t>(over)];
        ++alloc[static_cast<std::size_t>(pick)][static_cast<std::size_t>(under)];
        --total[static_cast<std::size_t>(over)];
        ++total[static_cast<std::size_t>(under)];
        moved[static_cast<std::size_t>(pick)] = 1;
    }

    // shuffle within each class and slice contiguously train | val | test
    DatasetSplit result;
    result.seed = seed;
    result.ratios = ratios;
    for (int c = 0; c < n_classes; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        Rng rng(Rng::derive(seed, "split", static_cast<std::uint64_t>(c)));
        rng.shuffle(idx);
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            auto& dst = s == 0 ? result.train : (s == 1 ? result.val : result.test);
            const long take = alloc[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
            for (long i = 0; i < take; ++i) dst.push_back(samples[idx[pos++]]);
        }
    }
    return result;
}

void moving_average_time(std::vector<CsiSample>& samples, int width) {
    if (width < 1 || width % 2 == 0) throw ConfigError("moving_average_time: width must be odd and >= 1");
    if (width == 1) return;
    const int radius = width / 2;
    for (CsiSample& s : samples) {
        const int a = s.amplitudes.dim(0), k = s.amplitudes.dim(1), t = s.amplitudes.dim(2);
        Tensor out = Tensor::zeros({a, k, t});
        auto reflect = [t](int i) {
            while (i < 0 || i >= t) {
                if (i < 0) i = -i - 1;
                if (i >= t) i = 2 * t - 1 - i;
            }
            return i;
        };
        const double inv = 1.0 / width;
        for (int ia = 0; ia < a; ++ia) {
            for (int ik = 0; ik < k; ++ik) {
                const double* row = s.amplitudes.data() + idx3(k, t, ia, ik, 0);
                double* orow = out.data() + idx3(k, t, ia, ik, 0);
                for (int it = 0; it < t; ++it) {
                    double acc = 0.0;
                    for (int q = -radius; q <= radius; ++q) acc += row[reflect(it + q)];
                    orow[it] = acc * inv;
                }
            }
        }
        s.amplitudes = std::move(out);
    }
}

int count_classes(const std::vector<CsiSample>& samples) {
    int c = 0;
    for (const CsiSample& s : samples) {
        if (s.label < 0) throw ConfigError("negative class label");
        c = std::max(c, s.label + 1);
    }
    return c;
}

} // namespace csi::data
