#pragma once

// Deterministic synthetic sequences of moving rectangles, plus controlled
// corruptions whose effect on every per-class count is known in closed form.

#include <cstdint>
#include <map>
#include <vector>

#include "mopt/candidate.h"
#include "mopt/core.h"
#include "mopt/fusion.h"
#include "mopt/metrics.h"

namespace mopt {

// SplitMix64: state += 0x9E3779B97F4A7C15, then the output mix
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t Next();
  // Top 53 bits scaled to [0, 1).
  double Uniform01();
  // Inclusive range, lo + Next() % span.
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi);

 private:
  std::uint64_t state_;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::int64_t frames = 10;
  std::uint32_t width = 64;
  std::uint32_t height = 48;
  std::uint32_t objects = 2;
  std::uint32_t min_size = 6;
  std::uint32_t max_size = 14;
  std::int32_t max_speed = 2;
  // Without overlap every object moves horizontally inside its own band of
  // rows, so objects never occlude each other.
  bool allow_overlap = false;

  ClassId void_class = 0;
  ClassId background_class = 1;
  std::vector<ClassId> thing_classes = {2, 3};

  std::uint32_t embedding_dim = 32;
  double embedding_separation = 1.0;  // track t's base vector is sep * e_t
  double embedding_noise = 0.0;       // uniform in [-noise, noise] per dim
  std::uint32_t patch_size = 28;
  float logit_magnitude = 10.0f;
};

struct SynthObject {
  ClassId class_id = 0;
  TrackId track_id = kNoTrack;
  std::vector<float> base_embedding;
};

struct SynthSequence {
  ClassTaxonomy taxonomy;
  std::vector<SynthObject> objects;
  std::vector<std::vector<Box>> boxes;  // [frame][object]
  std::vector<FrameLabeling> gt;
  // Score 1.0, exact masks, track_id = groundtruth track.
  std::vector<std::vector<InstanceCandidate>> candidates;
  std::vector<SemanticLogits> semantic;
};

ClassTaxonomy SynthTaxonomy(const SynthConfig& config);

// Throws InvalidInput when the objects cannot fit the frame or the config is
// otherwise unusable.
SynthSequence GenerateSequence(const SynthConfig& config);

struct IdSwitch {
  FrameIndex frame = 0;
  TrackId gt_track = kNoTrack;
  TrackId new_track = kNoTrack;  // persists from `frame` onwards
};

struct Dropout {
  FrameIndex frame = 0;
  TrackId gt_track = kNoTrack;
};

struct SpuriousSegment {
  FrameIndex frame = 0;
  ClassId class_id = 0;  // a thing class
  Box box;               // must cover groundtruth background only
};

struct Erosion {
  TrackId gt_track = kNoTrack;
  double fraction = 0.0;  // removes floor(fraction * box height) bottom rows
};

struct CorruptionSpec {
  std::vector<IdSwitch> id_switches;
  std::vector<Dropout> dropouts;
  std::vector<SpuriousSegment> spurious;
  std::vector<Erosion> erosions;
};

struct CorruptedSequence {
  std::vector<FrameLabeling> pred;
  // Expected per-class counts, derived from the corruptions alone.
  std::map<ClassId, ClassStats> ledger;
};

// Throws InvalidInput for references to unknown frames or tracks and for
// corruptions that conflict on one segment.
CorruptedSequence ApplyCorruptions(const SynthSequence& sequence,
                                   const CorruptionSpec& spec);

}  // namespace mopt
