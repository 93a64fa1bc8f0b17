#include "csi/metrics/metrics.hpp"

#include <string>

#include "csi/error.hpp"

namespace csi::metrics {

int argmax(const double* logits, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

double asr(const std::vector<int>& adv_predictions,
           const std::vector<int>& labels,
           const std::vector<bool>& mask) {
    if (adv_predictions.size() != labels.size() || labels.size() != mask.size()) {
        throw ShapeError("asr: predictions, labels and mask must align");
    }
    std::size_t total = 0, flipped = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++total;
        if (adv_predictions[i] != labels[i]) ++flipped;
    }
    if (total == 0) throw ConfigError("asr: empty evaluation mask");
    return static_cast<double>(flipped) / static_cast<double>(total);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw ShapeError("accuracy: size mismatch");
    if (predictions.empty()) throw ConfigError("accuracy: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes) {
    if (predictions.size() != labels.size()) throw ShapeError("macro_f1: size mismatch");
    if (n_classes < 1) throw ConfigError("macro_f1: n_classes must be >= 1");
    std::vector<long> tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fn(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        const int p = predictions[i];
        if (y < 0 || y >= n_classes) throw ConfigError("macro_f1: label " + std::to_string(y) + " out of range");
        if (p < 0 || p >= n_classes) throw ConfigError("macro_f1: prediction " + std::to_string(p) + " out of range");
        if (p == y) {
            ++tp[static_cast<std::size_t>(y)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(y)];
        }
    }
    MacroF1 out;
    out.per_class_precision.resize(static_cast<std::size_t>(n_classes), 0.0);
    out.per_class_recall.resize(static_cast<std::size_t>(n_classes), 0.0);
    out.per_class_f1.resize(static_cast<std::size_t>(n_classes), 0.0);
    double sum_all = 0.0, sum_present = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        const long denom_p = tp[ci] + fp[ci];
        const long denom_r = tp[ci] + fn[ci];
        const bool absent = denom_p == 0 && denom_r == 0;
        const double prec = denom_p > 0 ? static_cast<double>(tp[ci]) / static_cast<double>(denom_p) : 0.0;
        const double rec = denom_r > 0 ? static_cast<double>(tp[ci]) / static_cast<double>(denom_r) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        out.per_class_precision[ci] = prec;
        out.per_class_recall[ci] = rec;
        out.per_class_f1[ci] = f1;
        sum_all += f1;
        if (absent) {
            out.absent_classes.push_back(c);
        } else {
            sum_present += f1;
            ++present;
        }
    }
    out.macro_f1 = sum_all / static_cast<double>(n_classes);
    out.macro_f1_present = present > 0 ? sum_present / static_cast<double>(present) : 0.0;
    return out;
}

} // namespace csi::metrics
