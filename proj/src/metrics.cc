#include "mopt/metrics.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

namespace mopt {
namespace {

std::uint64_t PackIdentity(const Element& e) {
  return (static_cast<std::uint64_t>(e.class_id) << 32) | e.track_id;
}

SegmentKey UnpackIdentity(std::uint64_t code) {
  return {static_cast<ClassId>(code >> 32),
          static_cast<TrackId>(code & 0xffffffffu)};
}

// Maps identity codes to dense indices; remembers the last lookup since
// neighbouring elements usually share a label.
class DenseIndex {
 public:
  std::uint32_t operator()(std::uint64_t code) {
    if (code == last_code_ && has_last_) return last_index_;
    auto [it, inserted] =
        index_.try_emplace(code, static_cast<std::uint32_t>(codes_.size()));
    if (inserted) codes_.push_back(code);
    last_code_ = code;
    last_index_ = it->second;
    has_last_ = true;
    return last_index_;
  }
  const std::vector<std::uint64_t>& codes() const { return codes_; }

 private:
  std::unordered_map<std::uint64_t, std::uint32_t> index_;
  std::vector<std::uint64_t> codes_;
  std::uint64_t last_code_ = 0;
  std::uint32_t last_index_ = 0;
  bool has_last_ = false;
};

void RequireSameShape(const FrameLabeling& pred, const FrameLabeling& gt) {
  if (pred.shape() != gt.shape() || pred.size() != gt.size()) {
    throw InvalidInput("prediction and groundtruth shapes differ (" +
                       std::to_string(pred.size()) + " vs " +
                       std::to_string(gt.size()) + " elements)");
  }
}

double SafeRatio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

std::uint64_t OverlapTable::intersection(const SegmentKey& pred,
                                         const SegmentKey& gt) const {
  auto it = intersections.find({pred, gt});
  return it == intersections.end() ? 0 : it->second;
}

OverlapTable BuildOverlapTable(const FrameLabeling& pred,
                               const FrameLabeling& gt, ClassId void_id) {
  RequireSameShape(pred, gt);
  DenseIndex pred_index;
  DenseIndex gt_index;
  std::unordered_map<std::uint64_t, std::uint64_t> pair_counts;
  std::uint64_t last_pair = 0;
  std::uint64_t* last_count = nullptr;

  const auto pe = pred.elements();
  const auto ge = gt.elements();
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const std::uint64_t p = pred_index(PackIdentity(pe[i]));
    const std::uint64_t g = gt_index(PackIdentity(ge[i]));
    const std::uint64_t pair = (p << 32) | g;
    if (last_count == nullptr || pair != last_pair) {
      last_count = &pair_counts[pair];
      last_pair = pair;
    }
    ++*last_count;
  }

  OverlapTable table;
  for (std::uint64_t code : pred_index.codes()) {
    table.pred_area.emplace(UnpackIdentity(code), 0);
    table.pred_void_area.emplace(UnpackIdentity(code), 0);
  }
  for (std::uint64_t code : gt_index.codes()) {
    table.gt_area.emplace(UnpackIdentity(code), 0);
  }
  for (const auto& [pair, count] : pair_counts) {
    const SegmentKey p = UnpackIdentity(pred_index.codes()[pair >> 32]);
    const SegmentKey g = UnpackIdentity(gt_index.codes()[pair & 0xffffffffu]);
    table.intersections.emplace(std::make_pair(p, g), count);
    table.pred_area[p] += count;
    table.gt_area[g] += count;
    if (g.class_id == void_id) table.pred_void_area[p] += count;
  }
  return table;
}

double SegmentIou(const SegmentKey& pred, const SegmentKey& gt,
                  const OverlapTable& table) {
  auto p = table.pred_area.find(pred);
  auto g = table.gt_area.find(gt);
  if (p == table.pred_area.end() || g == table.gt_area.end()) {
    throw InvalidInput("segment key not present in overlap table");
  }
  const std::uint64_t inter = table.intersection(pred, gt);
  const std::uint64_t pred_valid = p->second - table.pred_void_area.at(pred);
  const std::uint64_t uni = pred_valid + g->second - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

FrameMatching MatchFrame(const FrameLabeling& pred, const FrameLabeling& gt,
                         const ClassTaxonomy& taxonomy) {
  RequireSameShape(pred, gt);
  RequireValidFrame(pred, taxonomy);
  RequireValidFrame(gt, taxonomy);
  const ClassId void_id = taxonomy.void_id();
  const OverlapTable table = BuildOverlapTable(pred, gt, void_id);

  FrameMatching matching;
  matching.frame_index = gt.frame_index();
  auto class_entry = [&](ClassId c) -> ClassMatching& {
    auto [it, inserted] = matching.classes.try_emplace(c);
    if (inserted) it->second.is_thing = taxonomy.is_thing(c);
    return it->second;
  };

  std::set<SegmentKey> matched_pred;
  std::set<SegmentKey> matched_gt;
  for (const auto& [pair, inter] : table.intersections) {
    const auto& [p, g] = pair;
    if (p.class_id == void_id || g.class_id == void_id) continue;
    if (p.class_id != g.class_id) continue;
    const double iou = SegmentIou(p, g, table);
    if (iou <= 0.5) continue;
    if (!matched_pred.insert(p).second || !matched_gt.insert(g).second) {
      throw InvariantError("segment matched twice in frame " +
                           std::to_string(gt.frame_index()));
    }
    class_entry(g.class_id).tp.push_back({p, g, iou});
  }

  for (const auto& [g, area] : table.gt_area) {
    if (g.class_id == void_id || matched_gt.count(g)) continue;
    class_entry(g.class_id).fn.push_back(g);
  }
  for (const auto& [p, area] : table.pred_area) {
    if (p.class_id == void_id || matched_pred.count(p)) continue;
    const std::uint64_t on_void = table.pred_void_area.at(p);
    if (2 * on_void > area) continue;
    class_entry(p.class_id).fp.push_back(p);
  }
  return matching;
}

std::vector<IdsEvent> TrackContinuity::Update(const FrameMatching& matching) {
  if (last_frame_ && matching.frame_index <= *last_frame_) {
    throw InvalidInput("frame " + std::to_string(matching.frame_index) +
                       " is not after frame " + std::to_string(*last_frame_));
  }
  std::vector<IdsEvent> events;
  for (const auto& [class_id, cm] : matching.classes) {
    if (!cm.is_thing) continue;
    for (const MatchedPair& pair : cm.tp) {
      auto [it, first] = entries_.try_emplace(pair.gt);
      if (!first && it->second.pred_track != pair.pred.track_id) {
        events.push_back({class_id, pair.gt.track_id, it->second.pred_track,
                          pair.pred.track_id, pair.iou});
      }
      it->second = {pair.pred.track_id, matching.frame_index};
    }
  }
  last_frame_ = matching.frame_index;
  return events;
}

ClassStats& ClassStats::operator+=(const ClassStats& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  ids += o.ids;
  gt_segments += o.gt_segments;
  iou_sum += o.iou_sum;
  sids_sum += o.sids_sum;
  return *this;
}

void Accumulate(SegmentStats& stats, const FrameMatching& matching,
                std::span<const IdsEvent> events) {
  for (const auto& [class_id, cm] : matching.classes) {
    ClassStats& s = stats.classes[class_id];
    s.tp += cm.tp.size();
    s.fp += cm.fp.size();
    s.fn += cm.fn.size();
    s.gt_segments += cm.tp.size() + cm.fn.size();
    for (const MatchedPair& pair : cm.tp) s.iou_sum += pair.iou;
  }
  for (const IdsEvent& e : events) {
    ClassStats& s = stats.classes[e.class_id];
    ++s.ids;
    s.sids_sum += e.iou;
  }
}

void Merge(SegmentStats& into, const SegmentStats& other) {
  for (const auto& [class_id, s] : other.classes) into.classes[class_id] += s;
  into.frames += other.frames;
}

const ClassMetrics* MetricReport::find(ClassId id) const {
  for (const ClassMetrics& m : per_class) {
    if (m.class_id == id) return &m;
  }
  return nullptr;
}

MetricReport FinalizeReport(const SegmentStats& stats,
                            const ClassTaxonomy& taxonomy) {
  MetricReport report;
  report.frames = stats.frames;
  ClassStats things;
  for (const auto& [class_id, s] : stats.classes) {
    if (taxonomy.is_void(class_id)) continue;
    const double tp = static_cast<double>(s.tp);
    const double denom =
        tp + 0.5 * static_cast<double>(s.fp) + 0.5 * static_cast<double>(s.fn);
    if (denom <= 0.0) continue;

    ClassMetrics m;
    m.class_id = class_id;
    m.name = taxonomy.contains(class_id) ? taxonomy.entry(class_id).name : "";
    m.is_thing = taxonomy.is_thing(class_id);
    m.sptq = (s.iou_sum - s.sids_sum) / denom;
    m.ptq = (s.iou_sum - static_cast<double>(s.ids)) / denom;
    m.pq = s.iou_sum / denom;
    m.sq = SafeRatio(s.iou_sum, tp);
    m.rq = tp / denom;
    m.counts = s;
    if (m.is_thing) things += s;
    report.per_class.push_back(std::move(m));
  }

  if (!report.per_class.empty()) {
    const double n = static_cast<double>(report.per_class.size());
    for (const ClassMetrics& m : report.per_class) {
      report.sptq += m.sptq;
      report.ptq += m.ptq;
      report.pq += m.pq;
      report.sq += m.sq;
      report.rq += m.rq;
    }
    report.sptq /= n;
    report.ptq /= n;
    report.pq /= n;
    report.sq /= n;
    report.rq /= n;
  }

  const double gt = static_cast<double>(things.gt_segments);
  const double penalties =
      static_cast<double>(things.fp) + static_cast<double>(things.ids);
  report.motsa = SafeRatio(static_cast<double>(things.tp) - penalties, gt);
  report.smotsa = SafeRatio(things.iou_sum - penalties, gt);
  report.motsp = SafeRatio(things.iou_sum, static_cast<double>(things.tp));
  return report;
}

SegmentStats EvaluateSequenceStats(std::span<const FrameLabeling> pred,
                                   std::span<const FrameLabeling> gt,
                                   const ClassTaxonomy& taxonomy,
                                   const EvalOptions& options) {
  if (pred.size() != gt.size()) {
    throw InvalidInput("sequence length mismatch: " +
                       std::to_string(pred.size()) + " predicted vs " +
                       std::to_string(gt.size()) + " groundtruth frames");
  }
  const std::size_t n = gt.size();
  std::vector<FrameMatching> matchings(n);

  unsigned workers = options.threads;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));

  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      matchings[i] = MatchFrame(pred[i], gt[i], taxonomy);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            matchings[i] = MatchFrame(pred[i], gt[i], taxonomy);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  TrackContinuity continuity;
  SegmentStats stats;
  for (std::size_t i = 0; i < n; ++i) {
    matchings[i].frame_index = static_cast<FrameIndex>(i);
    const std::vector<IdsEvent> events = continuity.Update(matchings[i]);
    Accumulate(stats, matchings[i], events);
  }
  stats.frames = n;
  return stats;
}

MetricReport EvaluateSequence(std::span<const FrameLabeling> pred,
                              std::span<const FrameLabeling> gt,
                              const ClassTaxonomy& taxonomy,
                              const EvalOptions& options) {
  return FinalizeReport(EvaluateSequenceStats(pred, gt, taxonomy, options),
                        taxonomy);
}

std::vector<IdsEvent> SequenceEvaluator::AddFrame(const FrameLabeling& pred,
                                                  const FrameLabeling& gt) {
  FrameMatching matching = MatchFrame(pred, gt, taxonomy_);
  matching.frame_index = next_frame_++;
  std::vector<IdsEvent> events = continuity_.Update(matching);
  Accumulate(stats_, matching, events);
  ++stats_.frames;
  return events;
}

}  // namespace mopt
