#include <algorithm>
#include <cmath>
#include <limits>

#include "seqaug/core/error.hpp"
#include "seqaug/sam/sam.hpp"

namespace seqaug::sam {

bool PatchPathwaySet::is_partition() const {
  if (static_cast<std::int64_t>(cells.size()) != slots()) return false;
  for (std::int64_t l = 0; l < frames; ++l) {
    std::vector<char> seen(static_cast<std::size_t>(count()), 0);
    for (std::int64_t p = 0; p < count(); ++p) {
      const std::int64_t c = cell(p, l);
      if (c < 0 || c >= count() || seen[static_cast<std::size_t>(c)]) return false;
      seen[static_cast<std::size_t>(c)] = 1;
    }
  }
  return true;
}

namespace {

// Mean displacement per m x m cell in cell units.
std::vector<std::int64_t> downsample(const std::vector<float>& d, std::int64_t W, std::int64_t gh, std::int64_t gw,
                                     std::int64_t m) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(gh * gw));
  for (std::int64_t r = 0; r < gh; ++r)
    for (std::int64_t c = 0; c < gw; ++c) {
      double s = 0.0;
      for (std::int64_t y = r * m; y < (r + 1) * m; ++y)
        for (std::int64_t x = c * m; x < (c + 1) * m; ++x) s += d[static_cast<std::size_t>(y * W + x)];
      const double mean = s / static_cast<double>(m * m);
      out[static_cast<std::size_t>(r * gw + c)] = static_cast<std::int64_t>(std::round(mean / static_cast<double>(m)));
    }
  return out;
}

}  // namespace

PatchPathwaySet sample_patch_pathways(std::span<const cond::MotionField> fields, std::int64_t height,
                                      std::int64_t width, std::int64_t m, std::int64_t frames, Rng& rng) {
  if (m < 1 || height % m != 0 || width % m != 0) throw InputError("patch scale must divide the frame size");
  if (frames < 1) throw InputError("pathways need at least one frame");
  if (!fields.empty() && static_cast<std::int64_t>(fields.size()) != frames - 1)
    throw DimensionError("expected " + std::to_string(frames - 1) + " motion fields, got " +
                         std::to_string(fields.size()));
  for (const auto& f : fields)
    if (f.height != height || f.width != width) throw DimensionError("motion field size does not match the frame");

  PatchPathwaySet set;
  set.frames = frames;
  set.grid_h = height / m;
  set.grid_w = width / m;
  set.scale = m;
  const std::int64_t gh = set.grid_h, gw = set.grid_w, P = set.count();
  set.cells.assign(static_cast<std::size_t>(P * frames), 0);
  for (std::int64_t p = 0; p < P; ++p) set.cells[static_cast<std::size_t>(p * frames)] = p;

  std::vector<std::int64_t> want(static_cast<std::size_t>(P));
  std::vector<std::int64_t> owner(static_cast<std::size_t>(P));
  std::vector<std::vector<std::int64_t>> claimants(static_cast<std::size_t>(P));
  for (std::int64_t l = 1; l < frames; ++l) {
    std::vector<std::int64_t> ddy, ddx;
    if (!fields.empty()) {
      ddy = downsample(fields[static_cast<std::size_t>(l - 1)].dy, width, gh, gw, m);
      ddx = downsample(fields[static_cast<std::size_t>(l - 1)].dx, width, gh, gw, m);
    }
    for (auto& c : claimants) c.clear();
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int64_t prev = set.cell(p, l - 1);
      std::int64_t r = prev / gw, c = prev % gw;
      if (!fields.empty()) {
        r = std::clamp(r + ddy[static_cast<std::size_t>(prev)], std::int64_t{0}, gh - 1);
        c = std::clamp(c + ddx[static_cast<std::size_t>(prev)], std::int64_t{0}, gw - 1);
      }
      want[static_cast<std::size_t>(p)] = r * gw + c;
      claimants[static_cast<std::size_t>(r * gw + c)].push_back(p);
    }

    std::fill(owner.begin(), owner.end(), -1);
    std::vector<std::int64_t> losers;
    for (std::int64_t cell = 0; cell < P; ++cell) {
      const auto& cl = claimants[static_cast<std::size_t>(cell)];
      if (cl.empty()) continue;
      const std::size_t win = cl.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(cl.size()));
      owner[static_cast<std::size_t>(cell)] = cl[win];
      for (std::size_t i = 0; i < cl.size(); ++i)
        if (i != win) losers.push_back(cl[i]);
    }
    std::sort(losers.begin(), losers.end());
    for (std::int64_t p : losers) {
      const std::int64_t w = want[static_cast<std::size_t>(p)];
      const std::int64_t wr = w / gw, wc = w % gw;
      std::int64_t best = -1, best_d = std::numeric_limits<std::int64_t>::max();
      for (std::int64_t cell = 0; cell < P; ++cell) {
        if (owner[static_cast<std::size_t>(cell)] >= 0) continue;
        const std::int64_t dr = cell / gw - wr, dc = cell % gw - wc;
        const std::int64_t d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = cell;
        }
      }
      owner[static_cast<std::size_t>(best)] = p;
      want[static_cast<std::size_t>(p)] = best;
    }
    for (std::int64_t p = 0; p < P; ++p) set.cells[static_cast<std::size_t>(p * frames + l)] = want[static_cast<std::size_t>(p)];
  }
  return set;
}

std::vector<PatchPathwaySet> sample_batch_pathways(std::span<const std::vector<cond::MotionField>> fields,
                                                   std::int64_t height, std::int64_t width, std::int64_t m,
                                                   std::int64_t frames, Rng& rng) {
  std::vector<PatchPathwaySet> out;
  out.reserve(fields.size());
  for (const auto& f : fields) out.push_back(sample_patch_pathways(f, height, width, m, frames, rng));
  return out;
}

}  // namespace seqaug::sam
