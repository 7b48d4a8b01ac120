#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqaug/core/tensor_io.hpp"
#include "seqaug/pipeline/config.hpp"
#include "seqaug/pipeline/evaluate.hpp"

namespace seqaug::pipeline {

// Named parameters of `module` with the configuration echoed alongside.
Checkpoint module_checkpoint(const std::string& kind, const std::string& config, nn::Module<float>& module);
// Copies every parameter of `module` from the checkpoint; kind, names and
// shapes must match.
void load_module(const Checkpoint& ckpt, const std::string& kind, nn::Module<float>& module);

// Classifier arms of the downstream comparison.
enum class Arm { Baseline, JointFiltered, JointUnfiltered, FinetuneFiltered };
inline constexpr Arm kAllArms[] = {Arm::Baseline, Arm::JointFiltered, Arm::JointUnfiltered, Arm::FinetuneFiltered};
const char* to_string(Arm a);
Arm parse_arm(const std::string& name);
Paradigm paradigm_of(Arm a);

struct FilteredSet {
  std::vector<SequenceClip> kept;
  std::string report_json;
  std::string report_text;
};

struct ArmSummary {
  std::vector<double> accuracy;  // one per classifier seed, in seed order
  std::vector<double> auroc;
  double median_accuracy = 0.0;
  double median_auroc = 0.0;
};

struct ExperimentSummary {
  std::uint64_t config_hash = 0;
  std::vector<std::uint64_t> seeds;
  std::int64_t synthetic_clips = 0;
  std::int64_t filtered_clips = 0;
  std::map<std::string, ArmSummary> arms;  // keyed by arm name

  // Median JointFiltered > median Baseline and median JointFiltered >=
  // median JointUnfiltered.
  bool augmentation_helps() const;
  std::string to_json() const;
  // Markdown table of per-seed and median results.
  std::string to_markdown() const;
};

double median(std::vector<double> v);

// One run directory. Every stage is computed at most once: outputs are
// written atomically, recorded in manifest.json with their FNV-1a digests,
// and loaded back instead of recomputed when the manifest lists them. A run
// directory is bound to one config hash.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path out, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }

  const ToyDataset& dataset();
  diffusion::Autoencoder<float>& autoencoder();
  diffusion::DenoiserModel& image_model();
  diffusion::DenoiserModel& inflated_model();
  diffusion::DenoiserModel& sequence_model();
  const std::vector<diffusion::SyntheticGroup>& synthetic();
  const FilteredSet& filtered();
  const EvalReport& classifier_run(Arm arm, std::uint64_t seed);
  ExperimentSummary run_all();

  // Real training clips used as condition sources, `groups_per_class` per
  // class, evenly spaced through each class.
  std::vector<const SequenceClip*> bank_sources();
  const nlohmann::ordered_json& manifest() const { return manifest_; }

 private:
  bool stage_done(const std::string& stage) const;
  void mark_done(const std::string& stage, const std::vector<std::string>& files);
  void write_manifest();
  void log(const std::string& msg);
  diffusion::NoiseSchedule schedule() const;
  std::vector<SequenceClip> synthetic_clips();

  ExperimentConfig cfg_;
  std::filesystem::path out_;
  std::ostream* log_;
  nlohmann::ordered_json manifest_;
  std::optional<ToyDataset> dataset_;
  std::optional<diffusion::Autoencoder<float>> ae_;
  std::optional<diffusion::DenoiserModel> image_, inflated_, sequence_;
  std::optional<std::vector<diffusion::SyntheticGroup>> groups_;
  std::optional<FilteredSet> filtered_;
  std::map<std::string, EvalReport> runs_;
};

}  // namespace seqaug::pipeline
