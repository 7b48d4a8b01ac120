#include "seqaug/pipeline/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "seqaug/core/error.hpp"

namespace seqaug::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kInitStream = 100;

std::uint64_t file_digest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ull;
  }
  return h;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  atomic_write(path, [&](std::ostream& os) { os << text; });
}

Json curve_json(const std::vector<float>& losses) {
  Json j = Json::array();
  for (float v : losses) j.push_back(v);
  return j;
}

}  // namespace

Checkpoint module_checkpoint(const std::string& kind, const std::string& config, nn::Module<float>& module) {
  Checkpoint ck;
  ck.kind = kind;
  ck.config = config;
  module.visit("", [&](const std::string& name, TensorF& p) { ck.tensors.emplace_back(name, p.detach().clone()); });
  return ck;
}

void load_module(const Checkpoint& ckpt, const std::string& kind, nn::Module<float>& module) {
  if (ckpt.kind != kind) throw DataError("checkpoint holds a " + ckpt.kind + ", expected " + kind);
  module.visit("", [&](const std::string& name, TensorF& p) {
    const auto& src = ckpt.get(name);
    if (src.shape() != p.shape()) throw DataError("checkpoint shape mismatch for " + name);
    std::copy(src.data().begin(), src.data().end(), p.data().begin());
  });
}

const char* to_string(Arm a) {
  switch (a) {
    case Arm::Baseline: return "baseline";
    case Arm::JointFiltered: return "joint_filtered";
    case Arm::JointUnfiltered: return "joint_unfiltered";
    case Arm::FinetuneFiltered: return "finetune_filtered";
  }
  return "unknown";
}

Arm parse_arm(const std::string& name) {
  for (Arm a : kAllArms)
    if (name == to_string(a)) return a;
  throw ConfigError("unknown arm '" + name + "' (baseline, joint_filtered, joint_unfiltered, finetune_filtered)");
}

Paradigm paradigm_of(Arm a) {
  switch (a) {
    case Arm::Baseline: return Paradigm::Baseline;
    case Arm::FinetuneFiltered: return Paradigm::RealFinetune;
    default: return Paradigm::JointTrain;
  }
}

double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

bool ExperimentSummary::augmentation_helps() const {
  const auto& b = arms.at(to_string(Arm::Baseline));
  const auto& f = arms.at(to_string(Arm::JointFiltered));
  const auto& u = arms.at(to_string(Arm::JointUnfiltered));
  return f.median_accuracy > b.median_accuracy && f.median_accuracy >= u.median_accuracy;
}

std::string ExperimentSummary::to_json() const {
  Json j;
  j["config_hash"] = hex64(config_hash);
  j["classifier_seeds"] = seeds;
  j["aggregate"] = "median over classifier seeds";
  j["synthetic_clips"] = synthetic_clips;
  j["filtered_clips"] = filtered_clips;
  auto& a = j["arms"] = Json::object();
  for (const auto& [name, s] : arms)
    a[name] = {{"accuracy", s.accuracy},
               {"auroc", s.auroc},
               {"median_accuracy", s.median_accuracy},
               {"median_auroc", s.median_auroc}};
  j["augmentation_helps"] = arms.size() == std::size(kAllArms) && augmentation_helps();
  return j.dump(2);
}

std::string ExperimentSummary::to_markdown() const {
  std::ostringstream os;
  os << "Test accuracy (%) and macro AUROC per classifier seed; the median column is the reported aggregate.\n\n";
  os << "| arm |";
  for (auto s : seeds) os << " acc s" << s << " |";
  os << " median acc |";
  for (auto s : seeds) os << " auroc s" << s << " |";
  os << " median auroc |\n|---|";
  for (std::size_t i = 0; i < 2 * seeds.size() + 2; ++i) os << "---|";
  os << "\n";
  char buf[32];
  for (Arm arm : kAllArms) {
    auto it = arms.find(to_string(arm));
    if (it == arms.end()) continue;
    const auto& s = it->second;
    os << "| " << it->first << " |";
    for (double v : s.accuracy) std::snprintf(buf, sizeof buf, " %.2f |", v), os << buf;
    std::snprintf(buf, sizeof buf, " %.2f |", s.median_accuracy), os << buf;
    for (double v : s.auroc) std::snprintf(buf, sizeof buf, " %.4f |", v), os << buf;
    std::snprintf(buf, sizeof buf, " %.4f |", s.median_auroc), os << buf;
    os << "\n";
  }
  os << "\nSynthetic clips generated: " << synthetic_clips << "; kept by the filter: " << filtered_clips << ".\n";
  return os.str();
}

Experiment::Experiment(ExperimentConfig cfg, fs::path out, std::ostream* log)
    : cfg_(std::move(cfg)), out_(std::move(out)), log_(log) {
  finalize(cfg_);
  fs::create_directories(out_);
  const auto hash = hex64(config_hash(cfg_));
  const auto mpath = out_ / "manifest.json";
  if (fs::exists(mpath)) {
    try {
      manifest_ = Json::parse(read_text(mpath));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corrupt manifest " + mpath.string() + ": " + e.what());
    }
    if (manifest_.value("config_hash", "") != hash)
      throw ConfigError("run directory " + out_.string() + " belongs to config " +
                        manifest_.value("config_hash", "?") + ", not " + hash);
  } else {
    manifest_["config_hash"] = hash;
    manifest_["seed"] = cfg_.seed;
    manifest_["stage_seeds"] = {{"dataset", cfg_.dataset.seed},
                                {"vae", cfg_.vae_train.seed},
                                {"image_ldm", cfg_.image_ldm.train.seed},
                                {"sequence_ldm", cfg_.sequence_ldm.train.seed},
                                {"sampler", cfg_.sampler.seed},
                                {"filter_classifier", stage_seed(cfg_.seed, Stage::Filter)}};
    manifest_["classifier_seeds"] = cfg_.classifier_seeds;
    manifest_["stages"] = Json::object();
    write_text(out_ / "config.json", to_json(cfg_) + "\n");
    write_manifest();
  }
  manifest_["threads"] = cfg_.threads;
  manifest_["bit_exact_replay"] = cfg_.threads == 1;
}

void Experiment::log(const std::string& msg) {
  if (log_) *log_ << "[seqaug] " << msg << std::endl;
}

void Experiment::write_manifest() { write_text(out_ / "manifest.json", manifest_.dump(2) + "\n"); }

bool Experiment::stage_done(const std::string& stage) const {
  const auto& st = manifest_["stages"];
  if (!st.contains(stage)) return false;
  for (const auto& [file, digest] : st[stage]["outputs"].items()) {
    if (!fs::exists(out_ / file)) return false;
    if (hex64(file_digest(out_ / file)) != digest.get<std::string>())
      throw DataError("stage output " + file + " changed since it was recorded");
  }
  return true;
}

void Experiment::mark_done(const std::string& stage, const std::vector<std::string>& files) {
  Json outputs = Json::object();
  for (const auto& f : files) outputs[f] = hex64(file_digest(out_ / f));
  manifest_["stages"][stage] = {{"outputs", outputs}};
  write_manifest();
}

diffusion::NoiseSchedule Experiment::schedule() const {
  return diffusion::NoiseSchedule::linear(cfg_.schedule.T, cfg_.schedule.beta_start, cfg_.schedule.beta_end);
}

const ToyDataset& Experiment::dataset() {
  if (dataset_) return *dataset_;
  const fs::path dir = out_ / "dataset";
  if (stage_done("dataset")) {
    dataset_ = ToyDataset{load_clip_set(dir, "train"), load_clip_set(dir, "test")};
    return *dataset_;
  }
  log("dataset: generating toy clips");
  dataset_ = make_toy_dataset(cfg_.dataset);
  save_clip_set(dir, "train", dataset_->train);
  save_clip_set(dir, "test", dataset_->test);
  std::vector<std::string> files{"dataset/train.json", "dataset/test.json"};
  for (const auto* set : {&dataset_->train, &dataset_->test})
    for (const auto& c : *set) files.push_back("dataset/" + std::string(set == &dataset_->train ? "train/" : "test/") + c.id + ".cga");
  mark_done("dataset", files);
  return *dataset_;
}

diffusion::Autoencoder<float>& Experiment::autoencoder() {
  if (ae_) return *ae_;
  Rng init(cfg_.vae_train.seed, kInitStream);
  ae_.emplace(cfg_.autoencoder, init);
  const fs::path ckpt = out_ / "vae.ckpt";
  auto restore_scale = [&](const Checkpoint& ck) {
    ae_->latent_scale = ck.get("latent_scale").data()[0];
    ae_->fitted = true;
  };
  if (stage_done("vae")) {
    const auto ck = load_checkpoint(ckpt);
    Checkpoint params = ck;
    std::erase_if(params.tensors, [](const auto& t) { return t.first == "latent_scale"; });
    load_module(params, "autoencoder", *ae_);
    restore_scale(ck);
    return *ae_;
  }
  const auto& ds = dataset();
  log("vae: training for " + std::to_string(cfg_.vae_train.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  const auto losses = diffusion::train_autoencoder(*ae_, ds.train, cfg_.vae_train);

  // Held-out reconstruction error over every test frame.
  double se = 0.0, count = 0.0;
  {
    NoGradGuard guard;
    for (const auto& c : ds.test) {
      const auto& px = c.pixels;
      const auto rec = ae_->decode(ae_->encode(px));
      for (std::int64_t i = 0; i < px.numel(); ++i) {
        const double d = double(rec.data()[i]) - double(px.data()[i]);
        se += d * d;
      }
      count += double(px.numel());
    }
  }
  const double mse = se / count;
  auto ck = module_checkpoint("autoencoder", to_json(cfg_), *ae_);
  ck.tensors.emplace_back("latent_scale", TensorF({1}, std::vector<float>{ae_->latent_scale}));
  save_checkpoint(ckpt, ck);
  Json metrics{{"loss", curve_json(losses)},
               {"heldout_mse", mse},
               {"recon_threshold", cfg_.vae_recon_threshold},
               {"within_threshold", mse < cfg_.vae_recon_threshold},
               {"latent_scale", ae_->latent_scale}};
  write_text(out_ / "vae_metrics.json", metrics.dump(2) + "\n");
  log("vae: held-out MSE " + std::to_string(mse) + " (" +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
  if (!(mse < cfg_.vae_recon_threshold)) log("vae: WARNING held-out MSE above the configured threshold");
  mark_done("vae", {"vae.ckpt", "vae_metrics.json"});
  return *ae_;
}

diffusion::DenoiserModel& Experiment::image_model() {
  if (image_) return *image_;
  Rng init(cfg_.image_ldm.train.seed, kInitStream);
  image_.emplace(cfg_.unet, init);
  if (stage_done("image_ldm")) {
    load_module(load_checkpoint(out_ / "image_ldm.ckpt"), "denoiser_image", *image_);
    return *image_;
  }
  auto& ae = autoencoder();
  log("image_ldm: training for " + std::to_string(cfg_.image_ldm.train.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  const auto losses = diffusion::pretrain_image_ldm(*image_, ae, dataset().train, cfg_.image_ldm, schedule(),
                                                    [&](std::int64_t step, float loss) {
                                                      if (step % 500 == 0) log("image_ldm: step " + std::to_string(step) + " loss " + std::to_string(loss));
                                                    });
  save_checkpoint(out_ / "image_ldm.ckpt", module_checkpoint("denoiser_image", to_json(cfg_), *image_));
  write_text(out_ / "image_ldm_loss.json", curve_json(losses).dump() + "\n");
  log("image_ldm: done (" + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
  mark_done("image_ldm", {"image_ldm.ckpt", "image_ldm_loss.json"});
  return *image_;
}

diffusion::DenoiserModel& Experiment::inflated_model() {
  if (inflated_) return *inflated_;
  Rng rng(cfg_.sequence_ldm.train.seed, kInitStream);
  if (stage_done("inflate")) {
    Rng init(cfg_.image_ldm.train.seed, kInitStream);
    inflated_.emplace(cfg_.unet, init);
    inflated_->inflate(rng);
    load_module(load_checkpoint(out_ / "inflated.ckpt"), "denoiser_sequence", *inflated_);
    return *inflated_;
  }
  auto& image = image_model();
  log("inflate: inserting sequence layers");
  inflated_.emplace(diffusion::inflate_2d_to_3d(image, rng));
  save_checkpoint(out_ / "inflated.ckpt", module_checkpoint("denoiser_sequence", to_json(cfg_), *inflated_));
  mark_done("inflate", {"inflated.ckpt"});
  return *inflated_;
}

diffusion::DenoiserModel& Experiment::sequence_model() {
  if (sequence_) return *sequence_;
  Rng init(cfg_.image_ldm.train.seed, kInitStream), rng(cfg_.sequence_ldm.train.seed, kInitStream);
  sequence_.emplace(cfg_.unet, init);
  sequence_->inflate(rng);
  if (stage_done("sequence_ldm")) {
    load_module(load_checkpoint(out_ / "sequence_ldm.ckpt"), "denoiser_sequence", *sequence_);
    return *sequence_;
  }
  nn::copy_parameters(*sequence_, inflated_model());
  auto& ae = autoencoder();
  log("sequence_ldm: finetuning for " + std::to_string(cfg_.sequence_ldm.train.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  const auto losses = diffusion::finetune_sequence_ldm(*sequence_, ae, dataset().train, cfg_.sequence_ldm,
                                                       schedule(), [&](std::int64_t step, float loss) {
                                                         if (step % 500 == 0) log("sequence_ldm: step " + std::to_string(step) + " loss " + std::to_string(loss));
                                                       });
  save_checkpoint(out_ / "sequence_ldm.ckpt", module_checkpoint("denoiser_sequence", to_json(cfg_), *sequence_));
  write_text(out_ / "sequence_ldm_loss.json", curve_json(losses).dump() + "\n");
  log("sequence_ldm: done (" + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
  mark_done("sequence_ldm", {"sequence_ldm.ckpt", "sequence_ldm_loss.json"});
  return *sequence_;
}

std::vector<const SequenceClip*> Experiment::bank_sources() {
  const auto& train = dataset().train;
  std::vector<const SequenceClip*> out;
  const std::int64_t G = cfg_.generation.groups_per_class;
  for (std::int64_t c = 0; c < cfg_.dataset.num_classes; ++c) {
    std::vector<const SequenceClip*> pool;
    for (const auto& clip : train)
      if (clip.class_id == c) pool.push_back(&clip);
    if (pool.empty()) throw DataError("class " + std::to_string(c) + " has no training clips");
    const auto n = static_cast<std::int64_t>(pool.size());
    // Evenly spaced; sources repeat when there are more groups than clips.
    for (std::int64_t g = 0; g < G; ++g) out.push_back(pool[static_cast<std::size_t>(g * n / G)]);
  }
  return out;
}

const std::vector<diffusion::SyntheticGroup>& Experiment::synthetic() {
  if (groups_) return *groups_;
  const auto sources = bank_sources();
  const auto& l = cfg_.sequence_ldm;
  std::vector<cond::ConditionsBank> banks;
  for (const auto* c : sources) banks.push_back(cond::ConditionsBank::from_clip(*c, l.motion_block, l.motion_radius));

  const fs::path dir = out_ / "synthetic";
  if (stage_done("sample")) {
    auto clips = load_clip_set(dir, "synthetic");
    const auto M = cfg_.generation.clips_per_group;
    if (static_cast<std::int64_t>(clips.size()) != M * static_cast<std::int64_t>(banks.size()))
      throw DataError("synthetic clip set does not match the configured group sizes");
    groups_.emplace();
    for (std::size_t g = 0; g < banks.size(); ++g) {
      diffusion::SyntheticGroup grp;
      grp.group_id = static_cast<std::int64_t>(g);
      grp.bank = banks[g];
      for (std::int64_t j = 0; j < M; ++j) grp.clips.push_back(std::move(clips[g * M + j]));
      groups_->push_back(std::move(grp));
    }
    return *groups_;
  }
  auto& model = sequence_model();
  auto& ae = autoencoder();
  log("sample: " + std::to_string(banks.size()) + " groups x " + std::to_string(cfg_.generation.clips_per_group) +
      " clips, " + std::to_string(cfg_.sampler.steps) + " DDIM steps");
  const auto t0 = std::chrono::steady_clock::now();
  groups_ = diffusion::generate_groups(model, ae, banks, cfg_.generation.clips_per_group, cfg_.dataset.frames,
                                       cfg_.sampler, schedule());
  std::vector<SequenceClip> all;
  Json gj = Json::array();
  for (std::size_t g = 0; g < groups_->size(); ++g) {
    Json ids = Json::array();
    for (const auto& c : (*groups_)[g].clips) {
      all.push_back(c);
      ids.push_back(c.id);
    }
    gj.push_back({{"group", g}, {"class", sources[g]->class_id}, {"bank_source", sources[g]->id}, {"clips", ids}});
  }
  save_clip_set(dir, "synthetic", all);
  write_text(out_ / "synthetic" / "groups.json", gj.dump(2) + "\n");
  log("sample: done (" + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
  std::vector<std::string> files{"synthetic/synthetic.json", "synthetic/groups.json"};
  for (const auto& c : all) files.push_back("synthetic/synthetic/" + c.id + ".cga");
  mark_done("sample", files);
  return *groups_;
}

std::vector<SequenceClip> Experiment::synthetic_clips() {
  std::vector<SequenceClip> all;
  for (const auto& g : synthetic())
    for (const auto& c : g.clips) all.push_back(c);
  return all;
}

const FilteredSet& Experiment::filtered() {
  if (filtered_) return *filtered_;
  const auto& groups = synthetic();
  const fs::path dir = out_ / "filter";
  std::map<std::string, const SequenceClip*> by_id;
  for (const auto& g : groups)
    for (const auto& c : g.clips) by_id[c.id] = &c;
  if (stage_done("filter")) {
    filtered_.emplace();
    const auto kept = Json::parse(read_text(dir / "kept.json"));
    for (const auto& id : kept) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw DataError("filter kept unknown clip " + id.get<std::string>());
      filtered_->kept.push_back(*it->second);
    }
    filtered_->report_json = read_text(dir / "report.json");
    filtered_->report_text = read_text(dir / "report.txt");
    return *filtered_;
  }
  // The stage-1 judge is a classifier trained on the real clips alone.
  log("filter: training the semantic judge");
  const auto judge =
      train_classifier(dataset().train, {}, Paradigm::Baseline, cfg_.classifier, stage_seed(cfg_.seed, Stage::Filter));
  filter::AutoencoderFrameEncoder encoder(autoencoder());
  filter::ModelMetrics metrics(judge.model, encoder);
  auto result = filter::run_filter_pipeline(groups, metrics, cfg_.filter);
  filtered_.emplace();
  Json kept = Json::array();
  for (const auto& c : result.kept) {
    filtered_->kept.push_back(c);
    kept.push_back(c.id);
  }
  filtered_->report_json = result.report.to_json();
  filtered_->report_text = result.report.to_text();
  write_text(dir / "kept.json", kept.dump(2) + "\n");
  write_text(dir / "report.json", filtered_->report_json + "\n");
  write_text(dir / "report.txt", filtered_->report_text);
  write_text(dir / "decisions.tsv", result.report.to_table());
  const auto& r = result.report;
  log("filter: N=" + std::to_string(r.N) + " N1=" + std::to_string(r.N1) + " N2=" + std::to_string(r.N2) +
      " N3=" + std::to_string(r.N3));
  mark_done("filter", {"filter/kept.json", "filter/report.json", "filter/report.txt", "filter/decisions.tsv"});
  return *filtered_;
}

const EvalReport& Experiment::classifier_run(Arm arm, std::uint64_t seed) {
  const std::string name = std::string(to_string(arm)) + "-s" + std::to_string(seed);
  if (auto it = runs_.find(name); it != runs_.end()) return it->second;
  const std::string stage = "classifier/" + name;
  const fs::path json_path = out_ / "classifiers" / (name + ".json");
  const auto& test = dataset().test;
  SequenceClassifier model;
  if (stage_done(stage)) {
    Rng init(seed, 1);
    model = SequenceClassifier(test.front().channels(), cfg_.classifier.num_classes, cfg_.classifier.width, init);
    load_module(load_checkpoint(out_ / "classifiers" / (name + ".ckpt")), "classifier", model);
  } else {
    std::vector<SequenceClip> synthetic;
    if (arm == Arm::JointUnfiltered) synthetic = synthetic_clips();
    else if (arm != Arm::Baseline) synthetic = filtered().kept;
    log("classifier: " + name + " on " + std::to_string(dataset().train.size()) + " real + " +
        std::to_string(synthetic.size()) + " synthetic clips");
    auto trained = train_classifier(dataset().train, synthetic, paradigm_of(arm), cfg_.classifier, seed);
    save_checkpoint(out_ / "classifiers" / (name + ".ckpt"), module_checkpoint("classifier", to_json(cfg_), trained.model));
    Json curve = Json::array();
    for (double v : trained.epoch_losses) curve.push_back(v);
    write_text(out_ / "classifiers" / (name + "_loss.json"), curve.dump() + "\n");
    model = std::move(trained.model);
  }
  EvalReport r = evaluate(model, test);
  r.seed = seed;
  r.paradigm = to_string(paradigm_of(arm));
  if (!stage_done(stage)) {
    write_text(json_path, r.to_json() + "\n");
    mark_done(stage, {"classifiers/" + name + ".ckpt", "classifiers/" + name + "_loss.json",
                      "classifiers/" + name + ".json"});
  }
  return runs_.emplace(name, std::move(r)).first->second;
}

ExperimentSummary Experiment::run_all() {
  const auto t0 = std::chrono::steady_clock::now();
  // Materialise the shared stages first so classifier runs only read them.
  dataset();
  synthetic();
  filtered();
  std::vector<std::pair<Arm, std::uint64_t>> jobs;
  for (Arm arm : kAllArms)
    for (auto s : cfg_.classifier_seeds) jobs.emplace_back(arm, s);
  if (cfg_.threads > 1) {
    // Independent runs; the manifest is updated from this thread afterwards.
    std::vector<std::future<TrainedClassifier>> futures;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto [arm, s] = jobs[i];
      const std::string name = std::string(to_string(arm)) + "-s" + std::to_string(s);
      if (stage_done("classifier/" + name)) continue;
      pending.push_back(i);
    }
    std::vector<SequenceClip> unfiltered = synthetic_clips();
    const auto& kept = filtered().kept;
    const auto& train = dataset().train;
    for (std::size_t k = 0; k < pending.size(); k += static_cast<std::size_t>(cfg_.threads)) {
      std::vector<std::pair<std::size_t, std::future<TrainedClassifier>>> wave;
      for (std::size_t w = k; w < std::min(pending.size(), k + static_cast<std::size_t>(cfg_.threads)); ++w) {
        const auto [arm, s] = jobs[pending[w]];
        const auto* syn = arm == Arm::JointUnfiltered ? &unfiltered : &kept;
        static const std::vector<SequenceClip> none;
        if (arm == Arm::Baseline) syn = &none;
        wave.emplace_back(pending[w], std::async(std::launch::async, [&, arm, s, syn] {
                            return train_classifier(train, *syn, paradigm_of(arm), cfg_.classifier, s);
                          }));
      }
      for (auto& [i, fut] : wave) {
        auto trained = fut.get();
        const auto [arm, s] = jobs[i];
        const std::string name = std::string(to_string(arm)) + "-s" + std::to_string(s);
        save_checkpoint(out_ / "classifiers" / (name + ".ckpt"),
                        module_checkpoint("classifier", to_json(cfg_), trained.model));
        Json curve = Json::array();
        for (double v : trained.epoch_losses) curve.push_back(v);
        write_text(out_ / "classifiers" / (name + "_loss.json"), curve.dump() + "\n");
        EvalReport r = evaluate(trained.model, dataset().test);
        r.seed = s;
        r.paradigm = to_string(paradigm_of(arm));
        write_text(out_ / "classifiers" / (name + ".json"), r.to_json() + "\n");
        mark_done("classifier/" + name, {"classifiers/" + name + ".ckpt", "classifiers/" + name + "_loss.json",
                                         "classifiers/" + name + ".json"});
        runs_.emplace(name, std::move(r));
      }
    }
  }

  ExperimentSummary sum;
  sum.config_hash = config_hash(cfg_);
  sum.seeds = cfg_.classifier_seeds;
  sum.synthetic_clips = static_cast<std::int64_t>(synthetic_clips().size());
  sum.filtered_clips = static_cast<std::int64_t>(filtered().kept.size());
  for (Arm arm : kAllArms) {
    ArmSummary a;
    for (auto s : cfg_.classifier_seeds) {
      const auto& r = classifier_run(arm, s);
      a.accuracy.push_back(r.accuracy);
      a.auroc.push_back(r.macro_auroc);
    }
    a.median_accuracy = median(a.accuracy);
    a.median_auroc = median(a.auroc);
    sum.arms[to_string(arm)] = a;
  }
  write_text(out_ / "results.json", sum.to_json() + "\n");
  write_text(out_ / "results.md", sum.to_markdown());
  log("run_all: finished in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  return sum;
}

}  // namespace seqaug::pipeline
