#pragma once

// Fusion of instance candidates and semantic logits into one panoptic
// tracking frame.
//
// Pipeline per frame:
//   FilterAndRank -> ResolveOverlaps (B_d) -> SemanticCounterpart (B_s)
//   -> FuseInstance, (σ(B_d) + σ(B_s)) ⊙ (B_d + B_s) -> AssemblePanoptic.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mopt/candidate.h"
#include "mopt/core.h"

namespace mopt {

// Dense per-class logits, channel-major: values[channel * elements + i].
struct SemanticLogits {
  FrameShape shape;
  std::vector<ClassId> channel_classes;
  std::vector<float> values;

  std::size_t channels() const { return channel_classes.size(); }
  std::span<const float> channel(std::size_t c) const;
  std::optional<std::size_t> channel_of(ClassId class_id) const;
};

// Throws InvalidInput unless the logits are a grid, sized channels x
// elements, finite, and every channel class is a distinct taxonomy class.
void ValidateSemanticLogits(const SemanticLogits& logits,
                            const ClassTaxonomy& taxonomy);

struct FusionConfig {
  double min_score = 0.5;             // u_p, candidates need score > u_p
  std::uint64_t min_stuff_area = 375;  // u_a, stuff regions need area > u_a

  static FusionConfig ImageProfile() { return {0.5, 375}; }
  static FusionConfig PointProfile() { return {0.5, 32}; }
};

// Full-resolution logit map with an explicit validity mask; invalid
// elements are "outside the box" or "resolved away".
struct LogitMap {
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  static LogitMap Invalid(std::size_t elements) {
    return {std::vector<float>(elements, 0.0f),
            std::vector<std::uint8_t>(elements, 0)};
  }
  bool is_valid(std::size_t i) const { return valid[i] != 0; }
  std::size_t valid_count() const;
};

// Keeps candidates with score > min_score, ordered by descending score,
// then descending box area, then input order.
std::vector<InstanceCandidate> FilterAndRank(
    std::span<const InstanceCandidate> candidates, const FusionConfig& config);

// Corner-aligned bilinear upsampling of the candidate's mask patch into its
// box, clipped to the frame. Throws InvalidInput for a malformed patch.
LogitMap UpsampleMask(const InstanceCandidate& candidate,
                      const FrameShape& shape);

struct ResolvedInstance {
  std::size_t rank = 0;  // index into the ranked candidate list
  LogitMap logits;       // B_d
};

// Upsamples every ranked candidate and removes from each map the elements
// claimed (logit > 0) by a higher-ranked candidate. Candidates whose box
// clips to nothing are dropped.
std::vector<ResolvedInstance> ResolveOverlaps(
    std::span<const InstanceCandidate> ranked, const FrameShape& shape);

// B_s: the candidate's class channel inside its clipped box. Throws
// InvalidInput when the class has no channel.
LogitMap SemanticCounterpart(const SemanticLogits& semantic,
                             const InstanceCandidate& candidate);

inline double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// (σ(d) + σ(s)) · (d + s)
inline double FuseLogits(double instance_logit, double semantic_logit) {
  return (Sigmoid(instance_logit) + Sigmoid(semantic_logit)) *
         (instance_logit + semantic_logit);
}

// Element-wise FuseLogits where both maps are valid.
LogitMap FuseInstance(const LogitMap& instance, const LogitMap& semantic);

struct FusedInstance {
  ClassId class_id = 0;
  TrackId track_id = kNoTrack;
  LogitMap logits;
};

// Argmax over [instances ∥ stuff channels]; invalid entries never win and
// ties go to the lowest channel index. Instance winners keep their
// (class, track). Stuff classes whose won area is at most min_stuff_area,
// and elements nothing wins, become void.
FrameLabeling AssemblePanoptic(std::span<const FusedInstance> instances,
                               const SemanticLogits& semantic,
                               const ClassTaxonomy& taxonomy,
                               const FusionConfig& config,
                               FrameIndex frame_index);

// The whole pipeline. Every candidate that survives filtering must carry a
// track id.
FrameLabeling FuseFrame(std::span<const InstanceCandidate> candidates,
                        const SemanticLogits& semantic,
                        const ClassTaxonomy& taxonomy,
                        const FusionConfig& config, FrameIndex frame_index);

}  // namespace mopt
