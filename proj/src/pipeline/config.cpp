#include "seqaug/pipeline/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "seqaug/core/error.hpp"
#include "seqaug/core/rng.hpp"

namespace seqaug::pipeline {

namespace {

using Json = nlohmann::ordered_json;

// Serialises every bound field.
class Writer {
 public:
  explicit Writer(Json& j) : j_(j) {}
  template <typename T>
  void field(const char* key, const T& v) { j_[key] = v; }
  template <typename F>
  void section(const char* key, F&& body) {
    Json sub = Json::object();
    Writer w(sub);
    body(w);
    j_[key] = std::move(sub);
  }

 private:
  Json& j_;
};

// Overrides bound fields present in the JSON and rejects everything else.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + join(key) + "'");
  }
  template <typename T>
  void field(const char* key, T& v) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      v = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + join(key) + "' has the wrong type");
    }
  }
  template <typename F>
  void section(const char* key, F&& body) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Reader r(j_.at(key), join(key));
    body(r);
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename V, typename Opt>
void bind_optim(V& v, Opt& o) {
  v.field("lr", o.lr);
  v.field("warmup", o.warmup);
  v.field("beta1", o.beta1);
  v.field("beta2", o.beta2);
  v.field("eps", o.eps);
  v.field("weight_decay", o.weight_decay);
}

template <typename V, typename Train>
void bind_train(V& v, Train& t) {
  v.field("steps", t.steps);
  v.field("batch", t.batch);
  v.section("optim", [&](auto& s) { bind_optim(s, t.optim); });
}

template <typename V, typename Ldm>
void bind_ldm(V& v, Ldm& l) {
  bind_train(v, l.train);
  v.section("condition_dropout", [&](auto& s) {
    s.field("class", l.drop.p_class);
    s.field("text", l.drop.p_text);
    s.field("image", l.drop.p_image);
    s.field("motion", l.drop.p_motion);
    s.field("all", l.drop.p_all);
  });
  v.field("motion_block", l.motion_block);
  v.field("motion_radius", l.motion_radius);
}

// One binding drives both directions, so the written and accepted key sets
// cannot drift apart.
template <typename V, typename C>
void bind(V& v, C& c) {
  v.field("preset", c.preset);
  v.field("seed", c.seed);
  v.field("threads", c.threads);
  v.section("dataset", [&](auto& s) {
    s.field("num_classes", c.dataset.num_classes);
    s.field("train_counts", c.dataset.train_counts);
    s.field("test_counts", c.dataset.test_counts);
    s.field("frames", c.dataset.frames);
    s.field("size", c.dataset.size);
    s.field("noise", c.dataset.noise);
    s.field("contrast", c.dataset.contrast);
  });
  v.section("autoencoder", [&](auto& s) {
    s.field("channels", c.autoencoder.channels);
    s.field("height", c.autoencoder.height);
    s.field("width", c.autoencoder.width);
    s.field("latent_channels", c.autoencoder.latent_channels);
    s.field("rate", c.autoencoder.rate);
    s.field("hidden", c.autoencoder.hidden);
    s.field("kl_weight", c.autoencoder.kl_weight);
    s.section("train", [&](auto& t) { bind_train(t, c.vae_train); });
    s.field("recon_threshold", c.vae_recon_threshold);
  });
  v.section("schedule", [&](auto& s) {
    s.field("T", c.schedule.T);
    s.field("beta_start", c.schedule.beta_start);
    s.field("beta_end", c.schedule.beta_end);
    s.field("ddim_eta", c.schedule.ddim_eta);
  });
  v.section("unet", [&](auto& s) {
    s.field("base_width", c.unet.base_width);
    s.field("width_mult", c.unet.width_mult);
    s.field("groups", c.unet.groups);
    s.field("context_dim", c.unet.context_dim);
    s.field("vocab", c.unet.vocab);
    s.field("image_hidden", c.unet.image_hidden);
    s.field("image_strides", c.unet.image_strides);
    s.field("motion_hidden", c.unet.motion_hidden);
  });
  v.section("image_ldm", [&](auto& s) { bind_ldm(s, c.image_ldm); });
  v.section("sequence_ldm", [&](auto& s) { bind_ldm(s, c.sequence_ldm); });
  v.section("sampler", [&](auto& s) {
    s.field("steps", c.sampler.steps);
    s.field("guidance", c.sampler.guidance);
  });
  v.section("generation", [&](auto& s) {
    s.field("groups_per_class", c.generation.groups_per_class);
    s.field("clips_per_group", c.generation.clips_per_group);
  });
  v.section("filter", [&](auto& s) {
    s.field("semantic", c.filter.semantic);
    s.field("inner_sequence", c.filter.inner_sequence);
    s.field("inter_sequence", c.filter.inter_sequence);
    s.field("clusters", c.filter.clusters);
    s.field("similarity_threshold", c.filter.similarity_threshold);
    s.field("stage2_thresholds_from_s1", c.filter.stage2_thresholds_from_s1);
  });
  v.section("classifier", [&](auto& s) {
    s.field("width", c.classifier.width);
    s.field("epochs", c.classifier.epochs);
    s.field("pretrain_epochs", c.classifier.pretrain_epochs);
    s.field("batch", c.classifier.batch);
    s.section("optim", [&](auto& o) { bind_optim(o, c.classifier.optim); });
    s.section("augment", [&](auto& a) {
      auto& g = c.classifier.augment;
      a.field("brightness", g.brightness);
      a.field("brightness_delta", g.brightness_delta);
      a.field("move", g.move);
      a.field("max_shift", g.max_shift);
      a.field("gaussian", g.gaussian);
      a.field("sigma", g.sigma);
      a.field("rotation", g.rotation);
      a.field("max_degrees", g.max_degrees);
      a.field("flip", g.flip);
    });
    s.field("seeds", c.classifier_seeds);
  });
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

ExperimentConfig toy_preset() {
  ExperimentConfig c;
  c.preset = "toy";
  c.autoencoder = {1, 32, 32, 4, 4, 16, 1e-6};
  c.vae_train.steps = 1500;
  c.vae_train.batch = 16;
  c.vae_train.optim = {2e-3, 50, 0, 0.9, 0.999, 1e-8, 0.01};
  c.unet.base_width = 32;
  c.unet.width_mult = {1, 2};
  c.unet.groups = 8;
  c.unet.context_dim = 32;
  c.unet.image_hidden = 16;
  c.unet.motion_hidden = 16;
  c.image_ldm.train.steps = 3000;
  c.image_ldm.train.batch = 32;
  c.image_ldm.train.optim = {1e-3, 100, 0, 0.9, 0.999, 1e-8, 0.01};
  c.sequence_ldm.train.steps = 2000;
  c.sequence_ldm.train.batch = 2;
  c.sequence_ldm.train.optim = {5e-4, 100, 0, 0.9, 0.999, 1e-8, 0.01};
  c.sampler.steps = 50;
  c.sampler.guidance = 7.5;
  return c;
}

ExperimentConfig paper_scale_preset() {
  ExperimentConfig c;
  c.preset = "paper_scale";
  c.dataset.size = 256;
  c.autoencoder = {1, 256, 256, 4, 8, 128, 1e-6};
  c.vae_train.optim.lr = 1e-4;
  c.unet.base_width = 64;
  c.unet.width_mult = {1, 2, 2};
  c.unet.context_dim = 64;
  c.unet.image_hidden = 32;
  c.image_ldm.train.optim.lr = 1e-4;
  c.sequence_ldm.train.optim.lr = 1e-4;
  c.sampler.steps = 200;
  c.sampler.guidance = 7.5;
  return c;
}

ExperimentConfig preset(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "paper_scale") return paper_scale_preset();
  throw ConfigError("unknown preset '" + name + "' (toy, paper_scale)");
}

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) {
  return Rng(seed, 0x5ea9'0000ull + static_cast<std::uint64_t>(stage)).next_u64();
}

void finalize(ExperimentConfig& c) {
  auto& d = c.dataset;
  auto& a = c.autoencoder;
  d.seed = stage_seed(c.seed, Stage::Dataset);
  validate_spec(d);
  require(c.threads >= 1, "threads must be >= 1");
  require(a.channels == 1, "the toy dataset has one channel");
  require(a.height == d.size && a.width == d.size, "autoencoder frame size must match the dataset");
  require(a.rate >= 2 && (a.rate & (a.rate - 1)) == 0, "autoencoder rate must be a power of two >= 2");
  require(d.size % a.rate == 0, "frame size must be divisible by the autoencoder rate");
  require(a.latent_channels >= 1 && a.hidden >= 4, "autoencoder sizes must be positive");
  require(c.vae_train.steps >= 1 && c.vae_train.batch >= 1, "autoencoder training needs steps and batch");
  c.vae_train.seed = stage_seed(c.seed, Stage::Vae);

  require(c.schedule.T >= 1, "schedule T must be >= 1");
  require(c.schedule.beta_start > 0 && c.schedule.beta_end < 1 && c.schedule.beta_start <= c.schedule.beta_end,
          "betas must satisfy 0 < beta_start <= beta_end < 1");
  require(c.schedule.ddim_eta == 0.0, "only ddim_eta = 0 (deterministic DDIM) is implemented");

  auto& u = c.unet;
  u.latent_channels = a.latent_channels;
  u.latent_height = d.size / a.rate;
  u.latent_width = d.size / a.rate;
  u.num_classes = d.num_classes;
  u.image_channels = a.channels;
  u.image_height = d.size;
  u.image_width = d.size;
  u.vae_rate = a.rate;
  require(u.vocab >= kVocabSize, "unet vocab must cover the attribute tokens");
  require(!u.width_mult.empty() && u.base_width >= u.groups && u.base_width % u.groups == 0,
          "unet base_width must be a positive multiple of groups");
  require(u.latent_height % (1 << (u.width_mult.size() - 1)) == 0, "latent size must halve at every unet level");

  for (auto* l : {&c.image_ldm, &c.sequence_ldm})
    require(l->train.steps >= 1 && l->train.batch >= 1, "diffusion training needs steps and batch");
  c.image_ldm.train.seed = stage_seed(c.seed, Stage::ImageLdm);
  c.sequence_ldm.train.seed = stage_seed(c.seed, Stage::SequenceLdm);

  require(c.sampler.steps >= 1, "sampler steps must be >= 1");
  if (c.sampler.steps > c.schedule.T) throw ConfigError("sampler steps exceed schedule T");
  c.sampler.seed = stage_seed(c.seed, Stage::Sample);

  require(c.generation.groups_per_class >= 1 && c.generation.clips_per_group >= 1,
          "generation needs at least one group per class and one clip per group");
  require(c.filter.clusters >= 4, "stage 2 needs at least 4 clusters");
  require(c.filter.similarity_threshold > 0 && c.filter.similarity_threshold <= 100,
          "similarity threshold must be in (0, 100]");

  c.classifier.num_classes = d.num_classes;
  require(c.classifier.epochs >= 1 && c.classifier.pretrain_epochs >= 1 && c.classifier.batch >= 1,
          "classifier needs epochs and batch");
  require(c.classifier.width >= 4 && c.classifier.width % 4 == 0, "classifier width must be a multiple of 4");
  require(!c.classifier_seeds.empty(), "classifier needs at least one seed");
}

std::string to_json(const ExperimentConfig& cfg) {
  Json j = Json::object();
  Writer w(j);
  bind(w, cfg);
  return j.dump(2);
}

ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string name = "toy";
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("config key 'preset' has the wrong type");
    name = j["preset"].get<std::string>();
  }
  ExperimentConfig cfg = preset(name);
  {
    Reader r(j, "");
    bind(r, cfg);
  }
  finalize(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  // The thread count changes scheduling, not the requested computation.
  ExperimentConfig c = cfg;
  c.threads = 1;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c)) h = (h ^ ch) * 0x100000001b3ull;
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace seqaug::pipeline
