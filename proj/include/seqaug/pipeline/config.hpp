#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seqaug/diffusion/autoencoder.hpp"
#include "seqaug/diffusion/sampler.hpp"
#include "seqaug/diffusion/training.hpp"
#include "seqaug/diffusion/unet.hpp"
#include "seqaug/filter/filter.hpp"
#include "seqaug/pipeline/classifier.hpp"
#include "seqaug/pipeline/dataset.hpp"

namespace seqaug::pipeline {

struct ScheduleConfig {
  std::int64_t T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  double ddim_eta = 0.0;  // only the deterministic sampler exists
};

struct GenerationConfig {
  std::int64_t groups_per_class = 10;
  std::int64_t clips_per_group = 5;
};

// Everything one experiment needs. Stage seeds are not listed: they derive
// from `seed` (see stage_seed) so a single value pins a run.
struct ExperimentConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;
  std::int64_t threads = 1;
  ToyDatasetSpec dataset;
  diffusion::AutoencoderConfig autoencoder;
  diffusion::TrainConfig vae_train;
  double vae_recon_threshold = 0.01;  // held-out reconstruction MSE
  ScheduleConfig schedule;
  diffusion::UNetConfig unet;
  diffusion::LdmTrainConfig image_ldm;
  diffusion::LdmTrainConfig sequence_ldm;
  diffusion::SamplerConfig sampler;
  GenerationConfig generation;
  filter::FilterConfig filter;
  ClassifierConfig classifier;
  std::vector<std::uint64_t> classifier_seeds{0, 1, 2};
};

ExperimentConfig toy_preset();
// Published sizes: 256x256 frames, VAE rate 8, T = 1000, 200 DDIM steps,
// guidance 7.5. Far beyond a desk CPU; kept for reference and echo checks.
ExperimentConfig paper_scale_preset();
ExperimentConfig preset(const std::string& name);

// Fills derived fields (stage seeds, shapes shared between sections) and
// throws ConfigError on inconsistent values.
void finalize(ExperimentConfig& cfg);

// Every field, explicit, as JSON text.
std::string to_json(const ExperimentConfig& cfg);
// Starts from the preset named by "preset" (default toy) and overrides the
// listed fields. Unknown keys, wrong types and bad values throw ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical JSON text.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

enum class Stage : std::uint64_t { Dataset = 1, Vae, ImageLdm, Inflate, SequenceLdm, Sample, Filter, Classifier };
std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

}  // namespace seqaug::pipeline
