#include "seqaug/pipeline/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "seqaug/core/error.hpp"

namespace seqaug::pipeline {

namespace {

double ratio(double num, double den) { return den > 0.0 ? 100.0 * num / den : 0.0; }

}  // namespace

double binary_auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw InputError("scores and labels differ in length");
  const auto P = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double N = double(scores.size()) - P;
  if (P == 0.0 || N == 0.0) throw InputError("AUROC needs both positive and negative samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  // Walk thresholds from high to low; each tie group moves the curve diagonally.
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0.0, dfp = 0.0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (positive[order[i]] ? dtp : dfp) += 1.0;
    area += (dfp / N) * ((tp + 0.5 * dtp) / P);
    tp += dtp;
    fp += dfp;
  }
  return area;
}

EvalReport evaluate_scores(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                           std::int64_t num_classes) {
  if (probs.size() != labels.size()) throw InputError("probabilities and labels differ in length");
  if (probs.empty()) throw InputError("cannot evaluate an empty test set");
  const auto K = static_cast<std::size_t>(num_classes);
  EvalReport r;
  r.num_samples = static_cast<std::int64_t>(labels.size());
  r.confusion.assign(K, std::vector<std::int64_t>(K, 0));
  std::vector<bool> present(K, false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (probs[i].size() != K) throw InputError("probability row has the wrong number of classes");
    if (labels[i] < 0 || labels[i] >= num_classes) throw InputError("label out of range");
    present[static_cast<std::size_t>(labels[i])] = true;
    const auto pred = std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin();
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)];
  }
  if (std::count(present.begin(), present.end(), true) < 2)
    throw InputError("test set must contain at least two classes");

  const double n = double(labels.size());
  double correct = 0.0, auroc_sum = 0.0;
  std::int64_t auroc_classes = 0;
  for (std::size_t c = 0; c < K; ++c) {
    double tp = double(r.confusion[c][c]), row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      row += double(r.confusion[c][j]);
      col += double(r.confusion[j][c]);
    }
    correct += tp;
    const double fn = row - tp, fp = col - tp, tn = n - tp - fn - fp;
    ClassMetrics m;
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    m.precision = ratio(tp, tp + fp);
    m.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    m.auroc = std::numeric_limits<double>::quiet_NaN();
    if (row > 0.0 && row < n) {
      std::vector<double> scores;
      std::vector<bool> pos;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        scores.push_back(probs[i][c]);
        pos.push_back(static_cast<std::size_t>(labels[i]) == c);
      }
      m.auroc = binary_auroc(scores, pos);
      auroc_sum += m.auroc;
      ++auroc_classes;
    }
    r.per_class.push_back(m);
  }
  r.accuracy = 100.0 * correct / n;
  r.macro_auroc = auroc_sum / double(auroc_classes);
  return r;
}

EvalReport evaluate(const SequenceClassifier& model, const std::vector<SequenceClip>& test) {
  std::vector<int> labels;
  for (const auto& c : test) labels.push_back(c.class_id);
  return evaluate_scores(model.predict_proba(test), labels, model.num_classes);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["paradigm"] = paradigm;
  j["num_samples"] = num_samples;
  j["accuracy"] = accuracy;
  j["macro_auroc"] = macro_auroc;
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& m : per_class) {
    nlohmann::ordered_json e{{"sensitivity", m.sensitivity},
                             {"specificity", m.specificity},
                             {"precision", m.precision},
                             {"f1", m.f1}};
    e["auroc"] = std::isnan(m.auroc) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m.auroc);
    pc.push_back(e);
  }
  j["confusion"] = confusion;
  return j.dump(2);
}

}  // namespace seqaug::pipeline
