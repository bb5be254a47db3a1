#pragma once

// Brute-force references for the equivalence tests and `mopt selftest`.
// Nothing here shares code with the fast paths it checks, and every entry
// point caps its input size.

#include <cstddef>
#include <span>
#include <string>

#include "mopt/core.h"
#include "mopt/metrics.h"
#include "mopt/synth.h"
#include "mopt/tracker.h"

namespace mopt::oracle {

inline constexpr std::size_t kMaxElements = 64 * 64;
inline constexpr std::size_t kMaxFrames = 64;
inline constexpr std::size_t kMaxAssignmentSize = 6;

// For every pair of distinct identities, counts co-occurrences by scanning
// all elements.
OverlapTable NaiveOverlap(const FrameLabeling& pred, const FrameLabeling& gt,
                          ClassId void_id);

// Recomputes every segment, IoU and switch from the set definitions frame
// by frame, then the report formulas.
MetricReport NaiveEvaluate(std::span<const FrameLabeling> pred,
                           std::span<const FrameLabeling> gt,
                           const ClassTaxonomy& taxonomy);

// True iff no groundtruth segment has more than one predicted segment of
// any class with IoU > 0.5 (groundtruth void removed from predictions).
bool CheckUniqueMatching(const FrameLabeling& pred, const FrameLabeling& gt,
                         ClassId void_id);

struct ExhaustiveResult {
  std::size_t assigned = 0;
  double total_cost = 0.0;
};

// Enumerates every partial one-to-one assignment over allowed entries and
// returns the minimum cost among those with the most pairs. Throws
// InvalidInput when either dimension exceeds kMaxAssignmentSize.
ExhaustiveResult ExhaustiveAssignment(const CostMatrix& matrix);

// All-pairs batch-hard triplet loss with no shared helpers.
double NaiveTripletLoss(std::span<const EmbeddingSample> samples,
                        double margin);

// Empty when the reports agree: equal counts, equal class sets, reals
// within `tolerance`. Otherwise a description of the first difference.
std::string CompareReports(const MetricReport& fast, const MetricReport& naive,
                           double tolerance);

// A random taxonomy (void 0, at least one stuff and one thing class) and a
// groundtruth/prediction sequence pair of blocky labelings. Groundtruth
// blocks persist and drift across frames, sometimes hidden. Predictions are
// perturbed copies: shifted, with track relabelings that change now and
// then, per-element noise and stray blocks, so IoUs land on both sides of
// 0.5 and identity switches occur.
struct RandomCase {
  ClassTaxonomy taxonomy{{}, 0};
  std::vector<FrameLabeling> pred;
  std::vector<FrameLabeling> gt;
};

RandomCase MakeRandomCase(SplitMix64& rng, std::uint32_t max_side,
                          std::size_t max_frames, std::size_t max_classes);

}  // namespace mopt::oracle
