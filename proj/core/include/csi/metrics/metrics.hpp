#pragma once

#include <vector>

namespace csi::metrics {

// argmax with lowest-index tie-break.
int argmax(const double* logits, int n);

// Attack success rate over the masked subset: fraction of masked samples
// whose prediction differs from the label. Rejects an all-false mask.
double asr(const std::vector<int>& adv_predictions,
           const std::vector<int>& labels,
           const std::vector<bool>& mask);

// Top-1 accuracy.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct MacroF1 {
    double macro_f1 = 0.0;            // absent classes contribute F1 = 0
    double macro_f1_present = 0.0;    // absent classes excluded from the mean
    std::vector<int> absent_classes;  // labels with no support and no predictions
    std::vector<double> per_class_precision;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_f1;
};

MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes);

} // namespace csi::metrics
