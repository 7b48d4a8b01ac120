// Command-line driver: every subcommand materialises one stage of a run
// directory (and whatever it depends on), reusing finished stages.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "seqaug/core/error.hpp"
#include "seqaug/pipeline/experiment.hpp"

using namespace seqaug;
using namespace seqaug::pipeline;

namespace {

struct Globals {
  std::string config;
  std::string preset = "toy";
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";
  std::int64_t threads = 1;
  bool quiet = false;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? preset(g.preset) : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.threads = g.threads;
  finalize(cfg);
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("missing " + p.string() + " (run the producing stage first)");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqaug: conditioned sequence generation, synthetic-data filtering and downstream evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file (unknown keys are errors)");
  app.add_option("--preset", g.preset, "preset used when no config file is given")->check(CLI::IsMember({"toy", "paper_scale"}));
  app.add_option("--seed", g.seed, "override the experiment seed");
  app.add_option("--out", g.out, "run directory");
  app.add_option("--threads", g.threads, "worker threads; values above 1 void bit-exact replay")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "suppress progress messages");

  std::string arm_name = "joint_filtered", model_path;
  std::uint64_t clf_seed = 0;

  auto* make_dataset = app.add_subcommand("make-dataset", "generate the toy clip dataset");
  auto* train_vae = app.add_subcommand("train-vae", "train the frame autoencoder");
  auto* pretrain = app.add_subcommand("pretrain-ldm", "train the image-mode denoiser");
  auto* inflate = app.add_subcommand("inflate", "insert the sequence layers into the image denoiser");
  auto* finetune = app.add_subcommand("finetune-seq", "finetune the sequence denoiser");
  auto* sample = app.add_subcommand("sample", "generate the synthetic groups");
  auto* filter_cmd = app.add_subcommand("filter", "run the three-stage synthetic-data filter");
  auto* train_clf = app.add_subcommand("train-classifier", "train and evaluate one downstream classifier");
  train_clf->add_option("--arm", arm_name, "baseline | joint_filtered | joint_unfiltered | finetune_filtered");
  train_clf->add_option("--classifier-seed", clf_seed, "classifier seed");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a classifier checkpoint on the test split");
  evaluate_cmd->add_option("--model", model_path, "classifier checkpoint")->required();
  auto* run = app.add_subcommand("run-experiment", "run every stage and the full classifier comparison");
  auto* report = app.add_subcommand("report", "print the results and filter report of a run directory");
  auto* print_config = app.add_subcommand("print-config", "print the resolved configuration with every field");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(g);
    if (print_config->parsed()) {
      std::cout << to_json(cfg) << "\n";
      return 0;
    }
    if (report->parsed()) {
      const std::filesystem::path out(g.out);
      std::cout << slurp(out / "results.md") << "\n" << slurp(out / "filter" / "report.txt");
      return 0;
    }
    if (g.threads > 1 && !g.quiet) std::cerr << "[seqaug] threads > 1: bit-exact replay is not guaranteed\n";
    Experiment exp(cfg, g.out, g.quiet ? nullptr : &std::cerr);
    if (make_dataset->parsed()) {
      const auto& ds = exp.dataset();
      std::cout << "train " << ds.train.size() << " clips, test " << ds.test.size() << " clips in " << g.out << "/dataset\n";
    } else if (train_vae->parsed()) {
      exp.autoencoder();
      std::cout << "autoencoder: " << (exp.out() / "vae.ckpt").string() << "\n";
    } else if (pretrain->parsed()) {
      exp.image_model();
      std::cout << "image denoiser: " << (exp.out() / "image_ldm.ckpt").string() << "\n";
    } else if (inflate->parsed()) {
      exp.inflated_model();
      std::cout << "inflated denoiser: " << (exp.out() / "inflated.ckpt").string() << "\n";
    } else if (finetune->parsed()) {
      exp.sequence_model();
      std::cout << "sequence denoiser: " << (exp.out() / "sequence_ldm.ckpt").string() << "\n";
    } else if (sample->parsed()) {
      const auto& groups = exp.synthetic();
      std::cout << groups.size() << " groups written to " << (exp.out() / "synthetic").string() << "\n";
    } else if (filter_cmd->parsed()) {
      std::cout << exp.filtered().report_text;
    } else if (train_clf->parsed()) {
      std::cout << exp.classifier_run(parse_arm(arm_name), clf_seed).to_json() << "\n";
    } else if (evaluate_cmd->parsed()) {
      const auto ck = load_checkpoint(model_path);
      const auto& test = exp.dataset().test;
      Rng init(0, 1);
      SequenceClassifier model(test.front().channels(), cfg.classifier.num_classes, cfg.classifier.width, init);
      load_module(ck, "classifier", model);
      std::cout << evaluate(model, test).to_json() << "\n";
    } else if (run->parsed()) {
      const auto summary = exp.run_all();
      std::cout << summary.to_markdown();
      std::cout << "augmentation helps (median joint_filtered > baseline and >= joint_unfiltered): "
                << (summary.augmentation_helps() ? "yes" : "no") << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
