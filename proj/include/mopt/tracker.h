#pragma once

// Track-ID reconstruction from per-candidate association embeddings, and the
// batch-hard triplet loss used to judge embedding quality.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mopt/candidate.h"
#include "mopt/core.h"

namespace mopt {

struct TrackerConfig {
  double min_score = 0.5;   // u_s, candidates need score > u_s to be tracked
  std::int64_t window = 3;  // N_T, frames a track stays associable
  double margin = 0.2;      // alpha of the triplet loss
  std::optional<double> max_distance;  // association gate, off by default
};

// Dense candidates x tracks matrix; forbidden entries are never assigned.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> cost;
  std::vector<std::uint8_t> allowed;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c)
      : rows(r), cols(c), cost(r * c, 0.0), allowed(r * c, 1) {}

  double& at(std::size_t r, std::size_t c) { return cost[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return cost[r * cols + c]; }
  bool is_allowed(std::size_t r, std::size_t c) const {
    return allowed[r * cols + c] != 0;
  }
  void forbid(std::size_t r, std::size_t c) { allowed[r * cols + c] = 0; }
};

struct Assignment {
  // row -> column, or nullopt when the row stays unassigned.
  std::vector<std::optional<std::size_t>> row_to_col;
  std::size_t assigned = 0;
  double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment among the assignments with the largest
// possible number of allowed pairs. Rectangular matrices are fine.
Assignment HungarianAssign(const CostMatrix& matrix);

class TrackerState {
 public:
  struct Observation {
    FrameIndex frame_index = 0;
    std::vector<float> embedding;
    ClassId class_id = 0;
  };

  // Track ids active for association at `frame_index`, ascending.
  std::vector<TrackId> ActiveTracks(FrameIndex frame_index,
                                    std::int64_t window) const;
  const Observation& Latest(TrackId id) const;
  const std::map<TrackId, std::vector<Observation>>& tracks() const {
    return tracks_;
  }

  // Ids are issued from 1 upwards and never reused.
  TrackId IssueId() { return next_id_++; }
  TrackId next_id() const { return next_id_; }
  std::optional<FrameIndex> last_frame() const { return last_frame_; }
  std::optional<std::size_t> dimension() const { return dimension_; }

  void Record(TrackId id, Observation observation);
  void Prune(FrameIndex frame_index, std::int64_t window);
  void MarkFrame(FrameIndex frame_index) { last_frame_ = frame_index; }
  void SetDimension(std::size_t d) { dimension_ = d; }

 private:
  std::map<TrackId, std::vector<Observation>> tracks_;
  TrackId next_id_ = 1;
  std::optional<FrameIndex> last_frame_;
  std::optional<std::size_t> dimension_;
};

double EuclideanDistance(std::span<const float> a, std::span<const float> b);

// Rows follow `candidates`, columns follow `tracks`. Entry (i, j) is the
// distance between candidate i's embedding and the latest embedding of track
// j; class mismatches and distances beyond max_distance are forbidden.
// Throws InvalidInput on embedding dimension mismatch.
CostMatrix BuildCostMatrix(std::span<const InstanceCandidate> candidates,
                           std::span<const TrackId> tracks,
                           const TrackerState& state,
                           const TrackerConfig& config);

// Assigns track ids to the candidates of one frame in place. Candidates with
// score <= min_score get kNoTrack; the rest are matched against tracks seen
// within the last `window` frames or receive fresh ids. Returns the number
// of fresh ids issued. Throws InvalidInput unless frame_index increases.
std::size_t AssociateFrame(TrackerState& state,
                           std::span<InstanceCandidate> candidates,
                           FrameIndex frame_index,
                           const TrackerConfig& config);

struct EmbeddingSample {
  std::vector<float> embedding;
  ClassId class_id = 0;
  TrackId track_id = kNoTrack;
};

// Mean over anchors of max(hardest positive - hardest negative + margin, 0).
// Positives share class and track (the anchor included); negatives share
// the class only. An anchor without negatives contributes 0.
double BatchHardTripletLoss(std::span<const EmbeddingSample> samples,
                            double margin);

}  // namespace mopt
