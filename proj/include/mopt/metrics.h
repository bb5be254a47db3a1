#pragma once

// Panoptic tracking metrics over sequences of predicted/groundtruth frames:
// sPTQ, PTQ, PQ, SQ, RQ and the MOTS companions (sMOTSA, MOTSA, MOTSP).
//
// The engine runs in two phases. Matching (BuildOverlapTable, MatchFrame) is
// pure per frame and runs in parallel. Track continuity is a sequential fold
// in frame order that turns matchings into identity-switch events. Stats
// accumulation is associative, so partial stats may be merged in any order.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mopt/core.h"

namespace mopt {

// Exact co-occurrence counts between the segments of a predicted and a
// groundtruth frame.
struct OverlapTable {
  std::map<SegmentKey, std::uint64_t> pred_area;
  std::map<SegmentKey, std::uint64_t> gt_area;
  // Elements of each predicted segment that fall on groundtruth void. Holds
  // an entry (possibly 0) for every predicted segment.
  std::map<SegmentKey, std::uint64_t> pred_void_area;
  // (pred, gt) -> intersection area; only nonzero intersections are stored.
  std::map<std::pair<SegmentKey, SegmentKey>, std::uint64_t> intersections;

  std::uint64_t intersection(const SegmentKey& pred,
                             const SegmentKey& gt) const;

  friend bool operator==(const OverlapTable&, const OverlapTable&) = default;
};

// Single pass over the elements. Throws InvalidInput on shape mismatch.
OverlapTable BuildOverlapTable(const FrameLabeling& pred,
                               const FrameLabeling& gt, ClassId void_id);

// |p ∩ g| / |p ∪ g| with the groundtruth-void part of p removed from both.
// Throws InvalidInput if either key is not a segment of the table.
double SegmentIou(const SegmentKey& pred, const SegmentKey& gt,
                  const OverlapTable& table);

struct MatchedPair {
  SegmentKey pred;
  SegmentKey gt;
  double iou = 0.0;
};

struct ClassMatching {
  bool is_thing = false;
  std::vector<MatchedPair> tp;
  std::vector<SegmentKey> fp;
  std::vector<SegmentKey> fn;
};

struct FrameMatching {
  FrameIndex frame_index = 0;
  std::map<ClassId, ClassMatching> classes;
};

// Class-gated matching with IoU strictly above 0.5. Void predictions and
// unmatched predictions lying mostly (> 50%) on groundtruth void are
// dropped. Throws InvalidInput for invalid or mismatched frames and
// InvariantError if a segment ends up in two matched pairs.
FrameMatching MatchFrame(const FrameLabeling& pred, const FrameLabeling& gt,
                         const ClassTaxonomy& taxonomy);

struct IdsEvent {
  ClassId class_id = 0;
  TrackId gt_track = kNoTrack;
  TrackId previous_pred_track = kNoTrack;
  TrackId pred_track = kNoTrack;
  double iou = 0.0;
};

// For every groundtruth thing track, the predicted track it was matched to
// most recently.
class TrackContinuity {
 public:
  struct Entry {
    TrackId pred_track = kNoTrack;
    FrameIndex frame_index = 0;
  };

  // Emits one event per thing TP whose groundtruth track was last matched to
  // a different predicted track, then records every thing TP. Throws
  // InvalidInput unless matching.frame_index is past every frame seen so far.
  std::vector<IdsEvent> Update(const FrameMatching& matching);

  const std::map<SegmentKey, Entry>& entries() const { return entries_; }
  std::optional<FrameIndex> last_frame() const { return last_frame_; }

 private:
  std::map<SegmentKey, Entry> entries_;  // keyed by groundtruth segment key
  std::optional<FrameIndex> last_frame_;
};

struct ClassStats {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t ids = 0;
  std::uint64_t gt_segments = 0;
  double iou_sum = 0.0;
  double sids_sum = 0.0;

  ClassStats& operator+=(const ClassStats& o);
  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

struct SegmentStats {
  std::map<ClassId, ClassStats> classes;
  std::uint64_t frames = 0;

  friend bool operator==(const SegmentStats&, const SegmentStats&) = default;
};

void Accumulate(SegmentStats& stats, const FrameMatching& matching,
                std::span<const IdsEvent> events);
void Merge(SegmentStats& into, const SegmentStats& other);

struct ClassMetrics {
  ClassId class_id = 0;
  std::string name;
  bool is_thing = false;
  double sptq = 0.0;
  double ptq = 0.0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  ClassStats counts;
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;  // ascending class id, D_c > 0 only
  double sptq = 0.0;
  double ptq = 0.0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  double smotsa = 0.0;
  double motsa = 0.0;
  double motsp = 0.0;
  std::uint64_t frames = 0;

  const ClassMetrics* find(ClassId id) const;
};

// With D_c = tp + fp/2 + fn/2:
//   sPTQ_c = (ΣIoU - ΣsIDS) / D_c    PTQ_c = (ΣIoU - IDS) / D_c
//   PQ_c = ΣIoU / D_c    SQ_c = ΣIoU / tp    RQ_c = tp / D_c
// Classes with D_c = 0 are left out of the report and of every average.
// MOTS companions pool thing classes:
//   MOTSA = (tp - fp - ids) / gt    sMOTSA = (ΣIoU - fp - ids) / gt
//   MOTSP = ΣIoU / tp
// A zero denominator yields 0.
MetricReport FinalizeReport(const SegmentStats& stats,
                            const ClassTaxonomy& taxonomy);

struct EvalOptions {
  unsigned threads = 0;  // match-phase workers, 0 = hardware concurrency
};

SegmentStats EvaluateSequenceStats(std::span<const FrameLabeling> pred,
                                   std::span<const FrameLabeling> gt,
                                   const ClassTaxonomy& taxonomy,
                                   const EvalOptions& options = {});

// Frames are paired by position; the position is the frame index used for
// track continuity. Throws InvalidInput on length or shape mismatch.
MetricReport EvaluateSequence(std::span<const FrameLabeling> pred,
                              std::span<const FrameLabeling> gt,
                              const ClassTaxonomy& taxonomy,
                              const EvalOptions& options = {});

// Streaming counterpart of EvaluateSequence for frames loaded one at a time.
class SequenceEvaluator {
 public:
  explicit SequenceEvaluator(ClassTaxonomy taxonomy)
      : taxonomy_(std::move(taxonomy)) {}

  // Returns the identity-switch events produced by this frame.
  std::vector<IdsEvent> AddFrame(const FrameLabeling& pred,
                                 const FrameLabeling& gt);

  const SegmentStats& stats() const { return stats_; }
  MetricReport Report() const { return FinalizeReport(stats_, taxonomy_); }

 private:
  ClassTaxonomy taxonomy_;
  TrackContinuity continuity_;
  SegmentStats stats_;
  FrameIndex next_frame_ = 0;
};

}  // namespace mopt
