#include "mopt/fusion.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

namespace mopt {

Box Box::Clipped(std::uint32_t frame_width, std::uint32_t frame_height) const {
  Box b;
  b.x0 = std::max<std::int32_t>(x0, 0);
  b.y0 = std::max<std::int32_t>(y0, 0);
  b.x1 = static_cast<std::int32_t>(
      std::min<std::int64_t>(x1, static_cast<std::int64_t>(frame_width)));
  b.y1 = static_cast<std::int32_t>(
      std::min<std::int64_t>(y1, static_cast<std::int64_t>(frame_height)));
  if (b.x1 < b.x0) b.x1 = b.x0;
  if (b.y1 < b.y0) b.y1 = b.y0;
  return b;
}

std::span<const float> SemanticLogits::channel(std::size_t c) const {
  const std::size_t n = shape.element_count();
  return std::span<const float>(values).subspan(c * n, n);
}

std::optional<std::size_t> SemanticLogits::channel_of(ClassId class_id) const {
  for (std::size_t c = 0; c < channel_classes.size(); ++c) {
    if (channel_classes[c] == class_id) return c;
  }
  return std::nullopt;
}

void ValidateSemanticLogits(const SemanticLogits& logits,
                            const ClassTaxonomy& taxonomy) {
  if (!logits.shape.is_grid() || logits.shape.element_count() == 0) {
    throw InvalidInput("semantic logits need a non-empty grid shape");
  }
  if (logits.values.size() !=
      logits.channels() * logits.shape.element_count()) {
    throw InvalidInput("semantic logits hold " +
                       std::to_string(logits.values.size()) +
                       " values, expected channels x elements = " +
                       std::to_string(logits.channels() *
                                      logits.shape.element_count()));
  }
  std::set<ClassId> seen;
  for (ClassId c : logits.channel_classes) {
    if (!taxonomy.contains(c)) {
      throw InvalidInput("semantic channel for unknown class " +
                         std::to_string(c));
    }
    if (!seen.insert(c).second) {
      throw InvalidInput("duplicate semantic channel for class " +
                         std::to_string(c));
    }
  }
  if (!std::all_of(logits.values.begin(), logits.values.end(),
                   [](float v) { return std::isfinite(v); })) {
    throw InvalidInput("semantic logits contain non-finite values");
  }
}

std::size_t LogitMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

std::vector<InstanceCandidate> FilterAndRank(
    std::span<const InstanceCandidate> candidates, const FusionConfig& config) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].score > config.min_score) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const InstanceCandidate& ca = candidates[a];
                     const InstanceCandidate& cb = candidates[b];
                     if (ca.score != cb.score) return ca.score > cb.score;
                     return ca.box.area() > cb.box.area();
                   });
  std::vector<InstanceCandidate> ranked;
  ranked.reserve(order.size());
  for (std::size_t i : order) ranked.push_back(candidates[i]);
  return ranked;
}

LogitMap UpsampleMask(const InstanceCandidate& candidate,
                      const FrameShape& shape) {
  if (!shape.is_grid()) {
    throw InvalidInput("mask upsampling needs a grid frame");
  }
  const std::uint32_t pw = candidate.patch_width;
  const std::uint32_t ph = candidate.patch_height;
  if (pw == 0 || ph == 0 ||
      candidate.mask_logits.size() != static_cast<std::size_t>(pw) * ph) {
    throw InvalidInput("mask patch size does not match its declared " +
                       std::to_string(pw) + "x" + std::to_string(ph) +
                       " resolution");
  }
  if (!std::all_of(candidate.mask_logits.begin(), candidate.mask_logits.end(),
                   [](float v) { return std::isfinite(v); })) {
    throw InvalidInput("mask patch contains non-finite values");
  }
  if (candidate.box.width() <= 0 || candidate.box.height() <= 0) {
    throw InvalidInput("candidate box is degenerate");
  }

  LogitMap map = LogitMap::Invalid(shape.element_count());
  const Box& box = candidate.box;
  const Box clip = box.Clipped(shape.width, shape.height);
  if (clip.empty()) return map;

  // Patch coordinate of box offset `t` along an axis of `extent` elements.
  auto patch_coord = [](std::int64_t t, std::int64_t extent,
                        std::uint32_t patch) {
    if (patch == 1) return 0.0;
    if (extent == 1) return 0.5 * (patch - 1);
    return static_cast<double>(t) * (patch - 1) /
           static_cast<double>(extent - 1);
  };
  const auto& patch = candidate.mask_logits;
  for (std::int32_t y = clip.y0; y < clip.y1; ++y) {
    const double v = patch_coord(y - box.y0, box.height(), ph);
    const auto v0 = static_cast<std::uint32_t>(std::floor(v));
    const std::uint32_t v1 = std::min(v0 + 1, ph - 1);
    const double fy = v - v0;
    for (std::int32_t x = clip.x0; x < clip.x1; ++x) {
      const double u = patch_coord(x - box.x0, box.width(), pw);
      const auto u0 = static_cast<std::uint32_t>(std::floor(u));
      const std::uint32_t u1 = std::min(u0 + 1, pw - 1);
      const double fx = u - u0;
      const double top = (1.0 - fx) * patch[v0 * pw + u0] + fx * patch[v0 * pw + u1];
      const double bottom = (1.0 - fx) * patch[v1 * pw + u0] + fx * patch[v1 * pw + u1];
      const std::size_t i = static_cast<std::size_t>(y) * shape.width + x;
      map.values[i] = static_cast<float>((1.0 - fy) * top + fy * bottom);
      map.valid[i] = 1;
    }
  }
  return map;
}

std::vector<ResolvedInstance> ResolveOverlaps(
    std::span<const InstanceCandidate> ranked, const FrameShape& shape) {
  const std::size_t n = shape.element_count();
  std::vector<std::uint8_t> claimed(n, 0);
  std::vector<ResolvedInstance> resolved;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r].box.Clipped(shape.width, shape.height).empty()) continue;
    LogitMap map = UpsampleMask(ranked[r], shape);
    for (std::size_t i = 0; i < n; ++i) {
      if (!map.valid[i]) continue;
      if (claimed[i]) {
        map.valid[i] = 0;
        map.values[i] = 0.0f;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (map.valid[i] && map.values[i] > 0.0f) claimed[i] = 1;
    }
    resolved.push_back({r, std::move(map)});
  }
  return resolved;
}

LogitMap SemanticCounterpart(const SemanticLogits& semantic,
                             const InstanceCandidate& candidate) {
  const auto c = semantic.channel_of(candidate.class_id);
  if (!c) {
    throw InvalidInput("no semantic channel for class " +
                       std::to_string(candidate.class_id));
  }
  const FrameShape& shape = semantic.shape;
  const auto values = semantic.channel(*c);
  LogitMap map = LogitMap::Invalid(shape.element_count());
  const Box clip = candidate.box.Clipped(shape.width, shape.height);
  for (std::int32_t y = clip.y0; y < clip.y1; ++y) {
    for (std::int32_t x = clip.x0; x < clip.x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * shape.width + x;
      map.values[i] = values[i];
      map.valid[i] = 1;
    }
  }
  return map;
}

LogitMap FuseInstance(const LogitMap& instance, const LogitMap& semantic) {
  if (instance.values.size() != semantic.values.size()) {
    throw InvalidInput("instance and semantic maps differ in size");
  }
  LogitMap fused = LogitMap::Invalid(instance.values.size());
  for (std::size_t i = 0; i < fused.values.size(); ++i) {
    if (!instance.valid[i] || !semantic.valid[i]) continue;
    fused.values[i] = static_cast<float>(
        FuseLogits(instance.values[i], semantic.values[i]));
    fused.valid[i] = 1;
  }
  return fused;
}

FrameLabeling AssemblePanoptic(std::span<const FusedInstance> instances,
                               const SemanticLogits& semantic,
                               const ClassTaxonomy& taxonomy,
                               const FusionConfig& config,
                               FrameIndex frame_index) {
  ValidateSemanticLogits(semantic, taxonomy);
  const std::size_t n = semantic.shape.element_count();

  std::vector<std::size_t> stuff_channels;
  for (std::size_t c = 0; c < semantic.channels(); ++c) {
    const ClassId id = semantic.channel_classes[c];
    if (!taxonomy.is_thing(id) && !taxonomy.is_void(id)) {
      stuff_channels.push_back(c);
    }
  }
  if (instances.empty() && stuff_channels.empty()) {
    throw InvalidInput("nothing to assemble: no instances and no stuff channels");
  }
  for (const FusedInstance& inst : instances) {
    if (inst.logits.values.size() != n || inst.logits.valid.size() != n) {
      throw InvalidInput("fused instance map does not match the frame shape");
    }
    if (!taxonomy.is_thing(inst.class_id) || inst.track_id == kNoTrack) {
      throw InvalidInput("fused instance of class " +
                         std::to_string(inst.class_id) +
                         " needs a thing class and a track id");
    }
  }

  const Element void_element{taxonomy.void_id(), kNoTrack};
  std::vector<Element> elements(n, void_element);
  // Winning stuff channel per element, or -1.
  std::vector<std::int32_t> stuff_winner(n, -1);
  std::unordered_map<std::int32_t, std::uint64_t> stuff_area;

  for (std::size_t i = 0; i < n; ++i) {
    float best = -std::numeric_limits<float>::infinity();
    std::int64_t winner = -1;
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const LogitMap& m = instances[k].logits;
      if (m.valid[i] && (winner < 0 || m.values[i] > best)) {
        best = m.values[i];
        winner = static_cast<std::int64_t>(k);
      }
    }
    std::int32_t stuff = -1;
    for (std::size_t s = 0; s < stuff_channels.size(); ++s) {
      const float v = semantic.values[stuff_channels[s] * n + i];
      const bool first = winner < 0 && stuff < 0;
      if (first || v > best) {
        best = v;
        stuff = static_cast<std::int32_t>(stuff_channels[s]);
      }
    }
    if (stuff >= 0) {
      stuff_winner[i] = stuff;
      ++stuff_area[stuff];
    } else if (winner >= 0) {
      const FusedInstance& inst = instances[static_cast<std::size_t>(winner)];
      elements[i] = {inst.class_id, inst.track_id};
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t s = stuff_winner[i];
    if (s >= 0 && stuff_area[s] > config.min_stuff_area) {
      elements[i] = {semantic.channel_classes[static_cast<std::size_t>(s)],
                     kNoTrack};
    }
  }
  return FrameLabeling(semantic.shape, std::move(elements), frame_index);
}

FrameLabeling FuseFrame(std::span<const InstanceCandidate> candidates,
                        const SemanticLogits& semantic,
                        const ClassTaxonomy& taxonomy,
                        const FusionConfig& config, FrameIndex frame_index) {
  ValidateSemanticLogits(semantic, taxonomy);
  const std::vector<InstanceCandidate> ranked =
      FilterAndRank(candidates, config);
  for (const InstanceCandidate& c : ranked) {
    if (!taxonomy.is_thing(c.class_id)) {
      throw InvalidInput("candidate class " + std::to_string(c.class_id) +
                         " is not a thing class");
    }
    if (c.track_id == kNoTrack) {
      throw InvalidInput("candidate with score " + std::to_string(c.score) +
                         " reached fusion without a track id");
    }
  }
  std::vector<ResolvedInstance> resolved =
      ResolveOverlaps(ranked, semantic.shape);
  std::vector<FusedInstance> fused;
  fused.reserve(resolved.size());
  for (ResolvedInstance& r : resolved) {
    const InstanceCandidate& c = ranked[r.rank];
    fused.push_back({c.class_id, c.track_id,
                     FuseInstance(r.logits, SemanticCounterpart(semantic, c))});
  }
  return AssemblePanoptic(fused, semantic, taxonomy, config, frame_index);
}

}  // namespace mopt
