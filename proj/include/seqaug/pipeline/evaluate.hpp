#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqaug/pipeline/classifier.hpp"

namespace seqaug::pipeline {

struct ClassMetrics {
  double sensitivity = 0.0;  // recall
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double auroc = 0.0;  // one-vs-rest; NaN when the class lacks positives or negatives
};

// Metrics are percentages except AUROC, which lies in [0, 1]. Undefined
// ratios (zero denominators) are reported as 0.
struct EvalReport {
  std::uint64_t seed = 0;
  std::string paradigm;
  std::int64_t num_samples = 0;
  double accuracy = 0.0;
  double macro_auroc = 0.0;  // mean over classes with both positives and negatives
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  std::string to_json() const;
};

// One-vs-rest AUROC of `scores` for binary `positive`, trapezoid rule over
// the ROC curve with tied scores grouped. Requires both classes present.
double binary_auroc(const std::vector<double>& scores, const std::vector<bool>& positive);

// probs [samples][classes]; predicted class is the argmax (lowest index on ties).
EvalReport evaluate_scores(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                           std::int64_t num_classes);
EvalReport evaluate(const SequenceClassifier& model, const std::vector<SequenceClip>& test);

}  // namespace seqaug::pipeline
