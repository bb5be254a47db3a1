#include "mopt/tracker.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mopt {

Assignment HungarianAssign(const CostMatrix& matrix) {
  Assignment result;
  result.row_to_col.assign(matrix.rows, std::nullopt);
  if (matrix.rows == 0 || matrix.cols == 0) return result;

  // Pad to a square problem. Forbidden cells get a cost larger than any
  // achievable saving, so the optimum first maximises the allowed pairs.
  const std::size_t n = std::max(matrix.rows, matrix.cols);
  double allowed_total = 0.0;
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      if (matrix.is_allowed(r, c)) allowed_total += std::abs(matrix.at(r, c));
    }
  }
  const double forbidden = 2.0 * allowed_total + 1.0;
  auto cell = [&](std::size_t r, std::size_t c) {
    if (r >= matrix.rows || c >= matrix.cols) return 0.0;
    return matrix.is_allowed(r, c) ? matrix.at(r, c) : forbidden;
  };

  // Shortest augmenting paths with row/column potentials; 1-based with
  // column 0 as the virtual source.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<std::uint8_t> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cell(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t r = p[j] - 1;
    const std::size_t c = j - 1;
    if (r < matrix.rows && c < matrix.cols && matrix.is_allowed(r, c)) {
      result.row_to_col[r] = c;
      ++result.assigned;
      result.total_cost += matrix.at(r, c);
    }
  }
  return result;
}

std::vector<TrackId> TrackerState::ActiveTracks(FrameIndex frame_index,
                                                std::int64_t window) const {
  std::vector<TrackId> ids;
  for (const auto& [id, obs] : tracks_) {
    if (!obs.empty() && obs.back().frame_index >= frame_index - window) {
      ids.push_back(id);
    }
  }
  return ids;
}

const TrackerState::Observation& TrackerState::Latest(TrackId id) const {
  auto it = tracks_.find(id);
  if (it == tracks_.end() || it->second.empty()) {
    throw InvalidInput("unknown track " + std::to_string(id));
  }
  return it->second.back();
}

void TrackerState::Record(TrackId id, Observation observation) {
  tracks_[id].push_back(std::move(observation));
}

void TrackerState::Prune(FrameIndex frame_index, std::int64_t window) {
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    auto& obs = it->second;
    std::erase_if(obs, [&](const Observation& o) {
      return o.frame_index < frame_index - window;
    });
    it = obs.empty() ? tracks_.erase(it) : std::next(it);
  }
}

double EuclideanDistance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw InvalidInput("embedding dimensions differ: " +
                       std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

CostMatrix BuildCostMatrix(std::span<const InstanceCandidate> candidates,
                           std::span<const TrackId> tracks,
                           const TrackerState& state,
                           const TrackerConfig& config) {
  CostMatrix m(candidates.size(), tracks.size());
  for (std::size_t j = 0; j < tracks.size(); ++j) {
    const TrackerState::Observation& latest = state.Latest(tracks[j]);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double d = EuclideanDistance(candidates[i].embedding,
                                         latest.embedding);
      m.at(i, j) = d;
      if (candidates[i].class_id != latest.class_id ||
          (config.max_distance && d > *config.max_distance)) {
        m.forbid(i, j);
      }
    }
  }
  return m;
}

std::size_t AssociateFrame(TrackerState& state,
                           std::span<InstanceCandidate> candidates,
                           FrameIndex frame_index,
                           const TrackerConfig& config) {
  if (state.last_frame() && frame_index <= *state.last_frame()) {
    throw InvalidInput("tracker frame " + std::to_string(frame_index) +
                       " does not follow frame " +
                       std::to_string(*state.last_frame()));
  }
  if (config.window < 1) {
    throw InvalidInput("tracker window must be at least 1 frame");
  }

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].track_id = kNoTrack;
    if (candidates[i].score > config.min_score) eligible.push_back(i);
  }
  for (std::size_t i : eligible) {
    const std::size_t d = candidates[i].embedding.size();
    if (!state.dimension()) state.SetDimension(d);
    if (d != *state.dimension()) {
      throw InvalidInput("candidate embedding has dimension " +
                         std::to_string(d) + ", tracker uses " +
                         std::to_string(*state.dimension()));
    }
  }

  state.Prune(frame_index, config.window);
  const std::vector<TrackId> active =
      state.ActiveTracks(frame_index, config.window);
  std::vector<InstanceCandidate> rows;
  rows.reserve(eligible.size());
  for (std::size_t i : eligible) rows.push_back(candidates[i]);
  const Assignment assignment =
      HungarianAssign(BuildCostMatrix(rows, active, state, config));

  std::size_t fresh = 0;
  for (std::size_t r = 0; r < eligible.size(); ++r) {
    InstanceCandidate& c = candidates[eligible[r]];
    if (assignment.row_to_col[r]) {
      c.track_id = active[*assignment.row_to_col[r]];
    } else {
      c.track_id = state.IssueId();
      ++fresh;
    }
    state.Record(c.track_id, {frame_index, c.embedding, c.class_id});
  }
  state.MarkFrame(frame_index);
  return fresh;
}

double BatchHardTripletLoss(std::span<const EmbeddingSample> samples,
                            double margin) {
  if (samples.empty()) {
    throw InvalidInput("triplet loss needs at least one embedding");
  }
  double total = 0.0;
  for (const EmbeddingSample& anchor : samples) {
    double hardest_positive = 0.0;
    double hardest_negative = std::numeric_limits<double>::infinity();
    for (const EmbeddingSample& other : samples) {
      if (other.class_id != anchor.class_id) continue;
      const double d = EuclideanDistance(anchor.embedding, other.embedding);
      if (other.track_id == anchor.track_id) {
        hardest_positive = std::max(hardest_positive, d);
      } else {
        hardest_negative = std::min(hardest_negative, d);
      }
    }
    if (std::isinf(hardest_negative)) continue;
    total += std::max(hardest_positive - hardest_negative + margin, 0.0);
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace mopt
