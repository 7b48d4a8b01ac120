#include "seqaug/pipeline/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "seqaug/core/error.hpp"
#include "seqaug/core/tensor_io.hpp"

namespace seqaug::pipeline {

namespace {

constexpr std::uint64_t kTrainStream = 1'000'000;
constexpr std::uint64_t kTestStream = 2'000'000;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) { return rng.integer(lo, std::max(lo, hi)); }

}  // namespace

void validate_spec(const ToyDatasetSpec& spec) {
  if (spec.num_classes != 3) throw ConfigError("the toy dataset defines exactly 3 classes");
  if (static_cast<std::int64_t>(spec.train_counts.size()) != spec.num_classes ||
      static_cast<std::int64_t>(spec.test_counts.size()) != spec.num_classes)
    throw ConfigError("need one train and one test count per class");
  for (auto c : spec.train_counts)
    if (c < 1) throw ConfigError("every class needs at least one training clip");
  for (auto c : spec.test_counts)
    if (c < 1) throw ConfigError("every class needs at least one test clip");
  if (spec.frames < 2) throw ConfigError("clips need at least two frames");
  // The largest disc (radius 5) must travel 2 px per frame inside the frame.
  if (spec.size < 13 + 2 * (spec.frames - 1)) throw ConfigError("frame size too small for the motion range");
  if (!(spec.noise >= 0.0) || !(spec.contrast > 0.0)) throw ConfigError("noise must be >= 0 and contrast > 0");
}

SequenceClip make_toy_clip(const ToyDatasetSpec& spec, std::int64_t label, Rng& rng, const std::string& id) {
  const std::int64_t S = spec.size, F = spec.frames;
  const std::int64_t travel = 2 * (F - 1);
  const std::int64_t r = pick(rng, 3, 5);
  const double bg = rng.uniform(0.25, 0.45);
  const double delta = spec.contrast * rng.uniform(0.7, 1.3);
  const double bg_phase_x = rng.uniform(0.0, 2 * std::numbers::pi), bg_phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
  const double tex_phase = rng.uniform(0.0, 2 * std::numbers::pi);

  // Object centre per frame.
  std::vector<std::int64_t> cx(static_cast<std::size_t>(F)), cy(static_cast<std::size_t>(F));
  if (label == 0) {
    const std::int64_t x0 = pick(rng, r + 1, S - 2 - r - travel);
    const std::int64_t y0 = pick(rng, r + 1, S - 2 - r);
    for (std::int64_t f = 0; f < F; ++f) {
      cx[f] = x0 + 2 * f;
      cy[f] = y0;
    }
  } else if (label == 1) {
    const std::int64_t x0 = pick(rng, r + 1, S - 2 - r);
    const std::int64_t y0 = pick(rng, r + 1, S - 2 - r - travel);
    for (std::int64_t f = 0; f < F; ++f) {
      cx[f] = x0;
      cy[f] = y0 + 2 * f;
    }
  } else {
    const std::int64_t amp = pick(rng, 3, 5);
    const std::int64_t mid = pick(rng, r + 1 + amp, S - 2 - r - amp);
    const std::int64_t y0 = pick(rng, r + 1, S - 2 - r);
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    for (std::int64_t f = 0; f < F; ++f) {
      cx[f] = mid + std::llround(amp * std::sin(2 * std::numbers::pi * double(f) / double(F) + phase));
      cy[f] = y0;
    }
  }

  std::vector<float> px(static_cast<std::size_t>(F * S * S));
  for (std::int64_t f = 0; f < F; ++f)
    for (std::int64_t y = 0; y < S; ++y)
      for (std::int64_t x = 0; x < S; ++x) {
        const std::int64_t dx = x - cx[f], dy = y - cy[f];
        const bool inside = label == 1 ? (std::abs(dx) <= r && std::abs(dy) <= r) : (dx * dx + dy * dy <= r * r);
        double v = bg + 0.04 * std::sin(0.55 * double(x) + bg_phase_x) * std::sin(0.45 * double(y) + bg_phase_y);
        if (inside) v = bg + delta + 0.08 * std::sin(1.1 * double(dx) + tex_phase) * std::cos(0.9 * double(dy));
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        px[static_cast<std::size_t>((f * S + y) * S + x)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }

  SequenceClip clip;
  clip.id = id;
  clip.class_id = label;
  clip.source = ClipSource::Real;
  clip.pixels = TensorF({F, 1, S, S}, std::move(px));
  clip.tokens = {label == 1 ? kTokSquare : kTokDisc, delta > spec.contrast ? kTokBright : kTokDim,
                 label == 0 ? kTokRight : (label == 1 ? kTokDown : kTokOscillate), r >= 5 ? kTokLarge : kTokSmall};
  return clip;
}

ToyDataset make_toy_dataset(const ToyDatasetSpec& spec) {
  validate_spec(spec);
  ToyDataset ds;
  auto build = [&](const std::vector<std::int64_t>& counts, std::uint64_t base, const std::string& split,
                   std::vector<SequenceClip>& out) {
    std::uint64_t index = 0;
    for (std::int64_t c = 0; c < spec.num_classes; ++c)
      for (std::int64_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i, ++index) {
        Rng rng(spec.seed, base + index);
        out.push_back(make_toy_clip(spec, c, rng, split + "-c" + std::to_string(c) + "-" + std::to_string(i)));
      }
  };
  build(spec.train_counts, kTrainStream, "train", ds.train);
  build(spec.test_counts, kTestStream, "test", ds.test);
  return ds;
}

std::vector<std::int64_t> class_counts(const std::vector<SequenceClip>& clips, std::int64_t num_classes) {
  std::vector<std::int64_t> n(static_cast<std::size_t>(num_classes), 0);
  for (const auto& c : clips) {
    if (c.class_id < 0 || c.class_id >= num_classes) throw DataError("clip " + c.id + " has an unknown class");
    ++n[static_cast<std::size_t>(c.class_id)];
  }
  return n;
}

void save_clip_set(const std::filesystem::path& dir, const std::string& split, const std::vector<SequenceClip>& clips) {
  nlohmann::ordered_json manifest;
  manifest["split"] = split;
  auto& list = manifest["clips"] = nlohmann::ordered_json::array();
  for (const auto& c : clips) {
    const auto file = std::filesystem::path(split) / (c.id + ".cga");
    save_tensor(dir / file, c.pixels);
    list.push_back({{"id", c.id},
                    {"file", file.generic_string()},
                    {"class", c.class_id},
                    {"tokens", c.tokens},
                    {"source", to_string(c.source)},
                    {"split", split}});
  }
  atomic_write(dir / (split + ".json"), [&](std::ostream& os) { os << manifest.dump(2) << "\n"; });
}

std::vector<SequenceClip> load_clip_set(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream is(dir / (split + ".json"));
  if (!is) throw DataError("missing clip manifest " + (dir / (split + ".json")).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed clip manifest: " + std::string(e.what()));
  }
  std::vector<SequenceClip> out;
  for (const auto& item : manifest.at("clips")) {
    SequenceClip c;
    c.id = item.at("id").get<std::string>();
    c.class_id = item.at("class").get<std::int64_t>();
    c.tokens = item.at("tokens").get<std::vector<std::int64_t>>();
    const auto source = item.at("source").get<std::string>();
    if (source != "real" && source != "synthetic") throw DataError("clip " + c.id + " has unknown source " + source);
    c.source = source == "real" ? ClipSource::Real : ClipSource::Synthetic;
    c.pixels = load_tensor(dir / item.at("file").get<std::string>());
    validate_clip(c);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace seqaug::pipeline
