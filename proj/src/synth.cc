#include "mopt/synth.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace mopt {

std::uint64_t SplitMix64::Next() {
  state_ += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double SplitMix64::Uniform01() {
  return static_cast<double>(Next() >> 11) * 0x1.0p-53;
}

std::int64_t SplitMix64::UniformInt(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(Next() % span);
}

namespace {

struct Mover {
  Box box;
  std::int32_t vx = 0;
  std::int32_t vy = 0;
};

void Step(Mover& m, std::uint32_t width, std::uint32_t height) {
  auto axis = [](std::int32_t& lo, std::int32_t& hi, std::int32_t& v,
                 std::int32_t limit) {
    const std::int32_t extent = hi - lo;
    lo += v;
    if (lo < 0) {
      lo = 0;
      v = -v;
    } else if (lo + extent > limit) {
      lo = limit - extent;
      v = -v;
    }
    hi = lo + extent;
  };
  axis(m.box.x0, m.box.x1, m.vx, static_cast<std::int32_t>(width));
  axis(m.box.y0, m.box.y1, m.vy, static_cast<std::int32_t>(height));
}

std::vector<float> BaseEmbedding(const SynthConfig& config, TrackId track,
                                 SplitMix64& rng) {
  std::vector<float> v(config.embedding_dim, 0.0f);
  if (track <= config.embedding_dim) {
    v[track - 1] = static_cast<float>(config.embedding_separation);
  } else {
    for (float& x : v) {
      x = static_cast<float>(config.embedding_separation *
                             (2.0 * rng.Uniform01() - 1.0));
    }
  }
  return v;
}

}  // namespace

ClassTaxonomy SynthTaxonomy(const SynthConfig& config) {
  std::vector<ClassEntry> entries;
  entries.push_back({config.void_class, "void", ClassKind::kStuff});
  entries.push_back({config.background_class, "background", ClassKind::kStuff});
  for (ClassId c : config.thing_classes) {
    entries.push_back({c, "thing" + std::to_string(c), ClassKind::kThing});
  }
  return ClassTaxonomy(std::move(entries), config.void_class);
}

SynthSequence GenerateSequence(const SynthConfig& config) {
  if (config.frames < 1 || config.width == 0 || config.height == 0) {
    throw InvalidInput("synthetic sequence needs frames >= 1 and a non-empty grid");
  }
  if (config.min_size == 0 || config.min_size > config.max_size) {
    throw InvalidInput("object size range is empty");
  }
  if (config.objects > 0 && config.thing_classes.empty()) {
    throw InvalidInput("objects need at least one thing class");
  }
  if (config.embedding_dim == 0 || config.patch_size == 0) {
    throw InvalidInput("embedding dimension and patch size must be positive");
  }
  if (config.max_speed < 0) {
    throw InvalidInput("max speed must be non-negative");
  }

  SynthSequence seq{SynthTaxonomy(config), {}, {}, {}, {}, {}};
  SplitMix64 geometry(config.seed);
  SplitMix64 embedding_rng(config.seed ^ 0xE3B0C44298FC1C14ull);
  SplitMix64 noise_rng(config.seed ^ 0x6A09E667F3BCC908ull);

  const auto width = static_cast<std::int64_t>(config.width);
  const auto height = static_cast<std::int64_t>(config.height);
  std::vector<Mover> movers;
  for (std::uint32_t o = 0; o < config.objects; ++o) {
    Mover m;
    std::int64_t top = 0;
    std::int64_t rows = height;
    if (!config.allow_overlap) {
      rows = height / config.objects;
      top = rows * o;
    }
    if (static_cast<std::int64_t>(config.min_size) > rows ||
        static_cast<std::int64_t>(config.min_size) > width) {
      throw InvalidInput("object " + std::to_string(o) +
                         " cannot fit the frame");
    }
    const std::int64_t h = geometry.UniformInt(
        config.min_size, std::min<std::int64_t>(config.max_size, rows));
    const std::int64_t w = geometry.UniformInt(
        config.min_size, std::min<std::int64_t>(config.max_size, width));
    const std::int64_t y = top + geometry.UniformInt(0, rows - h);
    const std::int64_t x = geometry.UniformInt(0, width - w);
    m.box = {static_cast<std::int32_t>(x), static_cast<std::int32_t>(y),
             static_cast<std::int32_t>(x + w), static_cast<std::int32_t>(y + h)};
    m.vx = static_cast<std::int32_t>(
        geometry.UniformInt(-config.max_speed, config.max_speed));
    m.vy = config.allow_overlap
               ? static_cast<std::int32_t>(geometry.UniformInt(
                     -config.max_speed, config.max_speed))
               : 0;
    movers.push_back(m);

    const TrackId track = o + 1;
    seq.objects.push_back(
        {config.thing_classes[o % config.thing_classes.size()], track,
         BaseEmbedding(config, track, embedding_rng)});
  }

  std::vector<ClassId> channels{config.background_class};
  for (ClassId c : seq.taxonomy.thing_ids()) channels.push_back(c);

  const FrameShape shape = FrameShape::Grid(config.width, config.height);
  const float L = config.logit_magnitude;
  for (std::int64_t f = 0; f < config.frames; ++f) {
    std::vector<Element> elements(shape.element_count(),
                                  {config.background_class, kNoTrack});
    std::vector<Box> boxes;
    for (std::size_t o = 0; o < movers.size(); ++o) {
      const Box& b = movers[o].box;
      boxes.push_back(b);
      for (std::int32_t y = b.y0; y < b.y1; ++y) {
        for (std::int32_t x = b.x0; x < b.x1; ++x) {
          elements[static_cast<std::size_t>(y) * config.width + x] = {
              seq.objects[o].class_id, seq.objects[o].track_id};
        }
      }
    }
    FrameLabeling frame(shape, std::move(elements), f);

    std::vector<InstanceCandidate> candidates;
    const std::uint32_t ps = config.patch_size;
    for (std::size_t o = 0; o < movers.size(); ++o) {
      const Box& b = boxes[o];
      const Element self{seq.objects[o].class_id, seq.objects[o].track_id};
      InstanceCandidate c;
      c.class_id = self.class_id;
      c.score = 1.0;
      c.box = b;
      c.patch_width = ps;
      c.patch_height = ps;
      c.mask_logits.resize(static_cast<std::size_t>(ps) * ps);
      bool visible = false;
      auto sample = [ps](std::uint32_t p, std::int64_t extent) {
        if (ps == 1) return extent / 2;
        return static_cast<std::int64_t>(
            std::lround(static_cast<double>(p) * (extent - 1) / (ps - 1)));
      };
      for (std::uint32_t pv = 0; pv < ps; ++pv) {
        const auto y = static_cast<std::uint32_t>(b.y0 + sample(pv, b.height()));
        for (std::uint32_t pu = 0; pu < ps; ++pu) {
          const auto x =
              static_cast<std::uint32_t>(b.x0 + sample(pu, b.width()));
          const bool on = frame.at(x, y) == self;
          visible = visible || on;
          c.mask_logits[pv * ps + pu] = on ? L : -L;
        }
      }
      if (!visible) continue;
      c.track_id = self.track_id;
      c.embedding = seq.objects[o].base_embedding;
      if (config.embedding_noise > 0.0) {
        for (float& v : c.embedding) {
          v += static_cast<float>(config.embedding_noise *
                                  (2.0 * noise_rng.Uniform01() - 1.0));
        }
      }
      candidates.push_back(std::move(c));
    }

    SemanticLogits logits;
    logits.shape = shape;
    logits.channel_classes = channels;
    logits.values.resize(channels.size() * shape.element_count());
    for (std::size_t c = 0; c < channels.size(); ++c) {
      for (std::size_t i = 0; i < shape.element_count(); ++i) {
        logits.values[c * shape.element_count() + i] =
            frame[i].class_id == channels[c] ? L : -L;
      }
    }

    seq.gt.push_back(std::move(frame));
    seq.boxes.push_back(std::move(boxes));
    seq.candidates.push_back(std::move(candidates));
    seq.semantic.push_back(std::move(logits));
    for (Mover& m : movers) Step(m, config.width, config.height);
  }
  return seq;
}

CorruptedSequence ApplyCorruptions(const SynthSequence& sequence,
                                   const CorruptionSpec& spec) {
  const auto frames = static_cast<FrameIndex>(sequence.gt.size());
  const std::size_t n_objects = sequence.objects.size();
  auto object_of = [&](TrackId track) -> std::size_t {
    for (std::size_t o = 0; o < n_objects; ++o) {
      if (sequence.objects[o].track_id == track) return o;
    }
    throw InvalidInput("corruption references unknown track " +
                       std::to_string(track));
  };
  auto check_frame = [&](FrameIndex f) {
    if (f < 0 || f >= frames) {
      throw InvalidInput("corruption references unknown frame " +
                         std::to_string(f));
    }
  };
  const ClassTaxonomy& taxonomy = sequence.taxonomy;
  const ClassId background =
      sequence.gt.empty() ? ClassId{0} : taxonomy.stuff_ids().front();

  // [frame][object] corruption flags.
  std::vector<std::vector<std::uint8_t>> dropped(
      static_cast<std::size_t>(frames), std::vector<std::uint8_t>(n_objects, 0));
  std::vector<std::vector<std::optional<TrackId>>> switched(
      static_cast<std::size_t>(frames),
      std::vector<std::optional<TrackId>>(n_objects));
  std::vector<double> erosion(n_objects, 0.0);
  std::vector<std::uint8_t> eroded_set(n_objects, 0);

  TrackId max_label = 0;
  for (const SynthObject& o : sequence.objects) {
    max_label = std::max(max_label, o.track_id);
  }
  std::map<TrackId, std::size_t> label_owner;
  for (std::size_t o = 0; o < n_objects; ++o) {
    label_owner[sequence.objects[o].track_id] = o;
  }
  for (const IdSwitch& s : spec.id_switches) {
    check_frame(s.frame);
    const std::size_t o = object_of(s.gt_track);
    if (s.new_track == kNoTrack) {
      throw InvalidInput("id switch needs a non-zero new track label");
    }
    auto [it, inserted] = label_owner.try_emplace(s.new_track, o);
    if (!inserted && it->second != o) {
      throw InvalidInput("id switch label " + std::to_string(s.new_track) +
                         " already belongs to another object");
    }
    auto& slot = switched[static_cast<std::size_t>(s.frame)][o];
    if (slot) {
      throw InvalidInput("two id switches for one segment");
    }
    slot = s.new_track;
    max_label = std::max(max_label, s.new_track);
  }
  for (const Dropout& d : spec.dropouts) {
    check_frame(d.frame);
    const std::size_t o = object_of(d.gt_track);
    const auto f = static_cast<std::size_t>(d.frame);
    if (dropped[f][o]) throw InvalidInput("duplicate dropout for one segment");
    if (switched[f][o]) {
      throw InvalidInput("dropout and id switch on one segment");
    }
    dropped[f][o] = 1;
  }
  for (const Erosion& e : spec.erosions) {
    const std::size_t o = object_of(e.gt_track);
    if (!(e.fraction >= 0.0 && e.fraction < 1.0)) {
      throw InvalidInput("erosion fraction must lie in [0, 1)");
    }
    if (eroded_set[o]) throw InvalidInput("duplicate erosion for one object");
    eroded_set[o] = 1;
    erosion[o] = e.fraction;
  }

  CorruptedSequence out;
  std::vector<TrackId> label(n_objects);
  for (std::size_t o = 0; o < n_objects; ++o) {
    label[o] = sequence.objects[o].track_id;
  }
  std::map<TrackId, TrackId> last_matched_label;  // gt track -> label
  TrackId next_spurious = max_label + 1;

  for (FrameIndex f = 0; f < frames; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    const FrameLabeling& gt = sequence.gt[fi];
    const FrameShape& shape = gt.shape();
    std::vector<Element> pred(gt.elements().begin(), gt.elements().end());
    const Element bg{background, kNoTrack};

    std::uint64_t bg_gt_area = 0;
    for (const Element& e : gt.elements()) {
      if (e.class_id == background) ++bg_gt_area;
    }
    std::uint64_t moved_to_bg = 0;  // dropped or eroded object elements
    std::uint64_t spurious_area = 0;

    for (std::size_t o = 0; o < n_objects; ++o) {
      if (switched[fi][o]) label[o] = *switched[fi][o];
      const SynthObject& obj = sequence.objects[o];
      const Element self{obj.class_id, obj.track_id};
      const Box& box = sequence.boxes[fi][o];
      const auto strip = static_cast<std::int32_t>(
          std::floor(erosion[o] * static_cast<double>(box.height())));

      std::uint64_t area = 0;
      std::uint64_t removed = 0;
      for (std::int32_t y = box.y0; y < box.y1; ++y) {
        for (std::int32_t x = box.x0; x < box.x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * shape.width + x;
          if (!(gt[i] == self)) continue;
          ++area;
          if (dropped[fi][o] || y >= box.y1 - strip) {
            pred[i] = bg;
            ++removed;
          } else {
            pred[i] = {obj.class_id, label[o]};
          }
        }
      }
      if (area == 0) continue;
      moved_to_bg += removed;

      ClassStats& s = out.ledger[obj.class_id];
      const std::uint64_t kept = area - removed;
      if (kept == 0) {
        ++s.fn;
        continue;
      }
      const double iou =
          static_cast<double>(kept) / static_cast<double>(area);
      if (iou > 0.5) {
        ++s.tp;
        s.iou_sum += iou;
        auto [it, first] = last_matched_label.try_emplace(obj.track_id, label[o]);
        if (!first && it->second != label[o]) {
          ++s.ids;
          s.sids_sum += iou;
        }
        it->second = label[o];
      } else {
        ++s.fp;
        ++s.fn;
      }
    }

    std::vector<Box> placed;
    for (const SpuriousSegment& sp : spec.spurious) {
      if (sp.frame != f) continue;
      if (!taxonomy.is_thing(sp.class_id)) {
        throw InvalidInput("spurious segments must use a thing class");
      }
      const Box b = sp.box.Clipped(shape.width, shape.height);
      if (b.empty()) throw InvalidInput("spurious box lies outside the frame");
      for (const Box& other : placed) {
        if (b.x0 < other.x1 && other.x0 < b.x1 && b.y0 < other.y1 &&
            other.y0 < b.y1) {
          throw InvalidInput("spurious boxes overlap in frame " +
                             std::to_string(f));
        }
      }
      placed.push_back(b);
      const Element spur{sp.class_id, next_spurious++};
      for (std::int32_t y = b.y0; y < b.y1; ++y) {
        for (std::int32_t x = b.x0; x < b.x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * shape.width + x;
          if (gt[i].class_id != background) {
            throw InvalidInput("spurious box covers a groundtruth object");
          }
          pred[i] = spur;
        }
      }
      spurious_area += static_cast<std::uint64_t>(b.area());
      ++out.ledger[sp.class_id].fp;
    }

    // Background: pred = gt background - spurious + moved; pred ⊇ gt ∩ pred.
    const std::uint64_t pred_bg = bg_gt_area - spurious_area + moved_to_bg;
    if (bg_gt_area > 0 || pred_bg > 0) {
      ClassStats& s = out.ledger[background];
      const std::uint64_t inter = bg_gt_area - spurious_area;
      const std::uint64_t uni = bg_gt_area + moved_to_bg;
      const double iou =
          static_cast<double>(inter) / static_cast<double>(uni);
      if (bg_gt_area > 0 && iou > 0.5) {
        ++s.tp;
        s.iou_sum += iou;
      } else {
        if (bg_gt_area > 0) ++s.fn;
        if (pred_bg > 0) ++s.fp;
      }
    }
    out.pred.emplace_back(shape, std::move(pred), f);
  }

  for (auto& [c, s] : out.ledger) s.gt_segments = s.tp + s.fn;
  return out;
}

}  // namespace mopt
