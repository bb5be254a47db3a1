#include "mopt/oracle.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <utility>
#include <vector>

namespace mopt::oracle {
namespace {

using Identity = std::pair<ClassId, TrackId>;

Identity IdentityOf(const Element& e) { return {e.class_id, e.track_id}; }
SegmentKey KeyOf(const Identity& id) { return {id.first, id.second}; }

void CheckPair(const FrameLabeling& pred, const FrameLabeling& gt) {
  if (pred.size() != gt.size() || !(pred.shape() == gt.shape())) {
    throw InvalidInput("oracle: frame shapes differ");
  }
  if (gt.size() > kMaxElements) {
    throw InvalidInput("oracle: frame exceeds the oracle size cap");
  }
}

std::map<Identity, std::uint64_t> CountIdentities(const FrameLabeling& f) {
  std::map<Identity, std::uint64_t> counts;
  for (std::size_t i = 0; i < f.size(); ++i) ++counts[IdentityOf(f[i])];
  return counts;
}

struct PairGeometry {
  std::uint64_t intersection = 0;
  std::uint64_t pred_on_void = 0;
};

PairGeometry Measure(const FrameLabeling& pred, const FrameLabeling& gt,
                     const Identity& p, const Identity& g, ClassId void_id) {
  PairGeometry m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (IdentityOf(pred[i]) != p) continue;
    if (IdentityOf(gt[i]) == g) ++m.intersection;
    if (gt[i].class_id == void_id) ++m.pred_on_void;
  }
  return m;
}

double Iou(std::uint64_t pred_area, std::uint64_t gt_area,
           const PairGeometry& m) {
  const std::uint64_t uni = pred_area - m.pred_on_void + gt_area - m.intersection;
  return uni == 0 ? 0.0
                  : static_cast<double>(m.intersection) /
                        static_cast<double>(uni);
}

}  // namespace

OverlapTable NaiveOverlap(const FrameLabeling& pred, const FrameLabeling& gt,
                          ClassId void_id) {
  CheckPair(pred, gt);
  std::set<Identity> pred_ids;
  std::set<Identity> gt_ids;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred_ids.insert(IdentityOf(pred[i]));
    gt_ids.insert(IdentityOf(gt[i]));
  }
  OverlapTable table;
  for (const Identity& p : pred_ids) {
    std::uint64_t area = 0;
    std::uint64_t on_void = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (IdentityOf(pred[i]) != p) continue;
      ++area;
      if (gt[i].class_id == void_id) ++on_void;
    }
    table.pred_area[KeyOf(p)] = area;
    table.pred_void_area[KeyOf(p)] = on_void;
  }
  for (const Identity& g : gt_ids) {
    std::uint64_t area = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (IdentityOf(gt[i]) == g) ++area;
    }
    table.gt_area[KeyOf(g)] = area;
  }
  for (const Identity& p : pred_ids) {
    for (const Identity& g : gt_ids) {
      std::uint64_t count = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (IdentityOf(pred[i]) == p && IdentityOf(gt[i]) == g) ++count;
      }
      if (count > 0) table.intersections[{KeyOf(p), KeyOf(g)}] = count;
    }
  }
  return table;
}

MetricReport NaiveEvaluate(std::span<const FrameLabeling> pred,
                           std::span<const FrameLabeling> gt,
                           const ClassTaxonomy& taxonomy) {
  if (pred.size() != gt.size()) {
    throw InvalidInput("oracle: sequence lengths differ");
  }
  if (gt.size() > kMaxFrames) {
    throw InvalidInput("oracle: sequence exceeds the oracle frame cap");
  }
  const ClassId void_id = taxonomy.void_id();

  struct Totals {
    std::uint64_t tp = 0, fp = 0, fn = 0, ids = 0, gt_count = 0;
    double iou = 0.0, sids = 0.0;
  };
  std::map<ClassId, Totals> totals;
  std::map<Identity, TrackId> last_pred_track;  // gt identity -> pred track

  for (std::size_t f = 0; f < gt.size(); ++f) {
    CheckPair(pred[f], gt[f]);
    RequireValidFrame(pred[f], taxonomy);
    RequireValidFrame(gt[f], taxonomy);
    const auto pred_segments = CountIdentities(pred[f]);
    const auto gt_segments = CountIdentities(gt[f]);

    std::set<Identity> pred_matched;
    for (const auto& [g, g_area] : gt_segments) {
      if (g.first == void_id) continue;
      Totals& t = totals[g.first];
      ++t.gt_count;
      bool matched = false;
      for (const auto& [p, p_area] : pred_segments) {
        if (p.first != g.first) continue;
        const double iou =
            Iou(p_area, g_area, Measure(pred[f], gt[f], p, g, void_id));
        if (iou <= 0.5) continue;
        matched = true;
        pred_matched.insert(p);
        ++t.tp;
        t.iou += iou;
        if (taxonomy.is_thing(g.first)) {
          auto it = last_pred_track.find(g);
          if (it != last_pred_track.end() && it->second != p.second) {
            ++t.ids;
            t.sids += iou;
          }
          last_pred_track[g] = p.second;
        }
      }
      if (!matched) ++t.fn;
    }
    for (const auto& [p, p_area] : pred_segments) {
      if (p.first == void_id || pred_matched.count(p)) continue;
      std::uint64_t on_void = 0;
      for (std::size_t i = 0; i < pred[f].size(); ++i) {
        if (IdentityOf(pred[f][i]) == p && gt[f][i].class_id == void_id) {
          ++on_void;
        }
      }
      if (on_void * 2 > p_area) continue;
      ++totals[p.first].fp;
    }
  }

  MetricReport report;
  report.frames = gt.size();
  Totals things;
  for (const auto& [c, t] : totals) {
    const double denom = static_cast<double>(t.tp) + 0.5 * t.fp + 0.5 * t.fn;
    if (denom == 0.0) continue;
    ClassMetrics m;
    m.class_id = c;
    m.name = taxonomy.entry(c).name;
    m.is_thing = taxonomy.is_thing(c);
    m.sptq = (t.iou - t.sids) / denom;
    m.ptq = (t.iou - static_cast<double>(t.ids)) / denom;
    m.pq = t.iou / denom;
    m.sq = t.tp == 0 ? 0.0 : t.iou / static_cast<double>(t.tp);
    m.rq = static_cast<double>(t.tp) / denom;
    m.counts = {t.tp, t.fp, t.fn, t.ids, t.gt_count, t.iou, t.sids};
    report.per_class.push_back(m);
    if (m.is_thing) {
      things.tp += t.tp;
      things.fp += t.fp;
      things.ids += t.ids;
      things.gt_count += t.gt_count;
      things.iou += t.iou;
    }
  }
  const double k = static_cast<double>(report.per_class.size());
  for (const ClassMetrics& m : report.per_class) {
    report.sptq += m.sptq / k;
    report.ptq += m.ptq / k;
    report.pq += m.pq / k;
    report.sq += m.sq / k;
    report.rq += m.rq / k;
  }
  if (things.gt_count > 0) {
    const double g = static_cast<double>(things.gt_count);
    const double penalty = static_cast<double>(things.fp + things.ids);
    report.motsa = (static_cast<double>(things.tp) - penalty) / g;
    report.smotsa = (things.iou - penalty) / g;
  }
  if (things.tp > 0) report.motsp = things.iou / static_cast<double>(things.tp);
  return report;
}

bool CheckUniqueMatching(const FrameLabeling& pred, const FrameLabeling& gt,
                         ClassId void_id) {
  CheckPair(pred, gt);
  const auto pred_segments = CountIdentities(pred);
  const auto gt_segments = CountIdentities(gt);
  for (const auto& [g, g_area] : gt_segments) {
    if (g.first == void_id) continue;
    int above = 0;
    for (const auto& [p, p_area] : pred_segments) {
      if (p.first == void_id) continue;
      if (Iou(p_area, g_area, Measure(pred, gt, p, g, void_id)) > 0.5) ++above;
    }
    if (above > 1) return false;
  }
  return true;
}

ExhaustiveResult ExhaustiveAssignment(const CostMatrix& matrix) {
  if (matrix.rows > kMaxAssignmentSize || matrix.cols > kMaxAssignmentSize) {
    throw InvalidInput("oracle: assignment larger than 6x6");
  }
  ExhaustiveResult best;
  best.total_cost = std::numeric_limits<double>::infinity();
  std::vector<bool> used(matrix.cols, false);

  // Each row either stays unassigned or takes a free allowed column.
  auto visit = [&](auto&& self, std::size_t row, std::size_t assigned,
                   double cost) -> void {
    if (row == matrix.rows) {
      if (assigned > best.assigned ||
          (assigned == best.assigned && cost < best.total_cost)) {
        best.assigned = assigned;
        best.total_cost = cost;
      }
      return;
    }
    self(self, row + 1, assigned, cost);
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      if (used[c] || !matrix.allowed[row * matrix.cols + c]) continue;
      used[c] = true;
      self(self, row + 1, assigned + 1, cost + matrix.cost[row * matrix.cols + c]);
      used[c] = false;
    }
  };
  visit(visit, 0, 0, 0.0);
  return best;
}

double NaiveTripletLoss(std::span<const EmbeddingSample> samples,
                        double margin) {
  if (samples.empty()) throw InvalidInput("oracle: no embeddings");
  const std::size_t n = samples.size();
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < samples[a].embedding.size(); ++k) {
        const double d = static_cast<double>(samples[a].embedding[k]) -
                         static_cast<double>(samples[b].embedding[k]);
        s += d * d;
      }
      dist[a * n + b] = std::sqrt(s);
    }
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<double> positives;
    std::vector<double> negatives;
    for (std::size_t b = 0; b < n; ++b) {
      if (samples[b].class_id != samples[a].class_id) continue;
      (samples[b].track_id == samples[a].track_id ? positives : negatives)
          .push_back(dist[a * n + b]);
    }
    if (negatives.empty()) continue;
    double hp = positives.front();
    for (double d : positives) hp = d > hp ? d : hp;
    double hn = negatives.front();
    for (double d : negatives) hn = d < hn ? d : hn;
    const double hinge = hp - hn + margin;
    sum += hinge > 0.0 ? hinge : 0.0;
  }
  return sum / static_cast<double>(n);
}

}  // namespace mopt::oracle

namespace mopt::oracle {
namespace {

void PaintBlocks(SplitMix64& rng, std::vector<Element>& elements,
                 std::uint32_t w, std::uint32_t h, int blocks,
                 const std::vector<ClassId>& classes,
                 const ClassTaxonomy& taxonomy) {
  for (int b = 0; b < blocks; ++b) {
    const auto x0 = static_cast<std::uint32_t>(rng.UniformInt(0, w - 1));
    const auto y0 = static_cast<std::uint32_t>(rng.UniformInt(0, h - 1));
    const auto x1 = static_cast<std::uint32_t>(rng.UniformInt(x0 + 1, w));
    const auto y1 = static_cast<std::uint32_t>(rng.UniformInt(y0 + 1, h));
    const ClassId c = classes[rng.UniformInt(0, classes.size() - 1)];
    const TrackId t =
        taxonomy.is_thing(c) ? static_cast<TrackId>(rng.UniformInt(1, 4)) : 0;
    for (std::uint32_t y = y0; y < y1; ++y) {
      for (std::uint32_t x = x0; x < x1; ++x) elements[y * w + x] = {c, t};
    }
  }
}

}  // namespace

RandomCase MakeRandomCase(SplitMix64& rng, std::uint32_t max_side,
                          std::size_t max_frames, std::size_t max_classes) {
  const auto n_classes = static_cast<std::size_t>(
      rng.UniformInt(2, static_cast<std::int64_t>(std::max<std::size_t>(2, max_classes))));
  const auto n_things = static_cast<std::size_t>(
      rng.UniformInt(1, static_cast<std::int64_t>(n_classes) - 1));
  std::vector<ClassEntry> entries{{0, "void", ClassKind::kStuff}};
  std::vector<ClassId> labels;
  for (std::size_t i = 0; i < n_classes; ++i) {
    const auto id = static_cast<ClassId>(i + 1);
    const bool thing = i >= n_classes - n_things;
    entries.push_back({id, (thing ? "thing" : "stuff") + std::to_string(id),
                       thing ? ClassKind::kThing : ClassKind::kStuff});
    labels.push_back(id);
  }
  RandomCase rc{ClassTaxonomy(entries, 0), {}, {}};
  std::vector<ClassId> with_void = labels;
  with_void.push_back(0);

  const auto w = static_cast<std::uint32_t>(rng.UniformInt(1, max_side));
  const auto h = static_cast<std::uint32_t>(rng.UniformInt(1, max_side));
  const auto frames = static_cast<std::size_t>(
      rng.UniformInt(1, static_cast<std::int64_t>(max_frames)));
  const FrameShape shape = FrameShape::Grid(w, h);
  const double noise = 0.3 * rng.Uniform01() * rng.Uniform01();

  // Persistent objects moving a little every frame.
  struct Block {
    std::int64_t x0, y0, x1, y1, vx, vy;
    Element value;
  };
  auto random_block = [&](ClassId c) {
    Block b{};
    b.x0 = rng.UniformInt(0, w - 1);
    b.y0 = rng.UniformInt(0, h - 1);
    b.x1 = rng.UniformInt(b.x0 + 1, w);
    b.y1 = rng.UniformInt(b.y0 + 1, h);
    b.vx = rng.UniformInt(-1, 1);
    b.vy = rng.UniformInt(-1, 1);
    b.value = {c, rc.taxonomy.is_thing(c)
                      ? static_cast<TrackId>(rng.UniformInt(1, 4))
                      : kNoTrack};
    return b;
  };
  std::vector<Block> blocks;
  const std::int64_t n_blocks = rng.UniformInt(1, 6);
  for (std::int64_t b = 0; b < n_blocks; ++b) {
    const bool thing = rng.Uniform01() < 0.6;
    const std::vector<ClassId> things = rc.taxonomy.thing_ids();
    blocks.push_back(random_block(
        thing ? things[rng.UniformInt(0, things.size() - 1)]
              : with_void[rng.UniformInt(0, with_void.size() - 1)]));
  }
  auto paint = [&](std::vector<Element>& out, const Block& b, std::int64_t dx,
                   std::int64_t dy) {
    for (std::int64_t y = std::max<std::int64_t>(0, b.y0 + dy);
         y < std::min<std::int64_t>(h, b.y1 + dy); ++y) {
      for (std::int64_t x = std::max<std::int64_t>(0, b.x0 + dx);
           x < std::min<std::int64_t>(w, b.x1 + dx); ++x) {
        out[static_cast<std::size_t>(y) * w + x] = b.value;
      }
    }
  };

  std::int64_t dx = rng.UniformInt(-1, 1);
  std::int64_t dy = rng.UniformInt(-1, 1);
  TrackId shift = static_cast<TrackId>(rng.UniformInt(0, 3));
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<Element> gt(shape.element_count(), {labels.front(), 0});
    for (Block& b : blocks) {
      const bool hidden = rng.Uniform01() < 0.15;
      if (!hidden) paint(gt, b, 0, 0);
      b.x0 += b.vx;
      b.x1 += b.vx;
      b.y0 += b.vy;
      b.y1 += b.vy;
    }
    if (rng.Uniform01() < 0.3) {
      PaintBlocks(rng, gt, w, h, 1, with_void, rc.taxonomy);
    }

    if (rng.Uniform01() < 0.3) {
      dx = rng.UniformInt(-1, 1);
      dy = rng.UniformInt(-1, 1);
    }
    if (rng.Uniform01() < 0.4) shift = static_cast<TrackId>(rng.UniformInt(0, 3));
    std::vector<Element> pred(gt.size());
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) {
        const std::int64_t sx = std::clamp<std::int64_t>(x + dx, 0, w - 1);
        const std::int64_t sy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
        Element e = gt[static_cast<std::size_t>(sy) * w + sx];
        if (e.track_id != 0) e.track_id = (e.track_id - 1 + shift) % 4 + 1;
        pred[static_cast<std::size_t>(y) * w + x] = e;
      }
    }
    for (Element& e : pred) {
      if (rng.Uniform01() >= noise) continue;
      e.class_id = labels[rng.UniformInt(0, labels.size() - 1)];
      e.track_id = rc.taxonomy.is_thing(e.class_id)
                       ? static_cast<TrackId>(rng.UniformInt(1, 4))
                       : 0;
    }
    if (rng.Uniform01() < 0.3) {
      PaintBlocks(rng, pred, w, h, 1, with_void, rc.taxonomy);
    }
    rc.gt.emplace_back(shape, std::move(gt), static_cast<FrameIndex>(f));
    rc.pred.emplace_back(shape, std::move(pred), static_cast<FrameIndex>(f));
  }
  return rc;
}

}  // namespace mopt::oracle

namespace mopt::oracle {

std::string CompareReports(const MetricReport& fast, const MetricReport& naive,
                           double tolerance) {
  auto real = [&](const std::string& what, double a, double b) -> std::string {
    if (std::fabs(a - b) <= tolerance) return {};
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: %.17g vs %.17g", what.c_str(), a, b);
    return buf;
  };
  if (fast.frames != naive.frames) return "frame counts differ";
  if (fast.per_class.size() != naive.per_class.size()) {
    return "reported class sets differ";
  }
  for (std::size_t i = 0; i < fast.per_class.size(); ++i) {
    const ClassMetrics& a = fast.per_class[i];
    const ClassMetrics& b = naive.per_class[i];
    const std::string c = "class " + std::to_string(a.class_id) + " ";
    if (a.class_id != b.class_id) return "reported class sets differ";
    if (a.counts.tp != b.counts.tp || a.counts.fp != b.counts.fp ||
        a.counts.fn != b.counts.fn || a.counts.ids != b.counts.ids ||
        a.counts.gt_segments != b.counts.gt_segments) {
      return c + "counts differ";
    }
    for (const std::string& d :
         {real(c + "IoU sum", a.counts.iou_sum, b.counts.iou_sum),
          real(c + "sIDS", a.counts.sids_sum, b.counts.sids_sum),
          real(c + "sPTQ", a.sptq, b.sptq), real(c + "PTQ", a.ptq, b.ptq),
          real(c + "PQ", a.pq, b.pq), real(c + "SQ", a.sq, b.sq),
          real(c + "RQ", a.rq, b.rq)}) {
      if (!d.empty()) return d;
    }
  }
  for (const std::string& d :
       {real("sPTQ", fast.sptq, naive.sptq), real("PTQ", fast.ptq, naive.ptq),
        real("PQ", fast.pq, naive.pq), real("SQ", fast.sq, naive.sq),
        real("RQ", fast.rq, naive.rq), real("sMOTSA", fast.smotsa, naive.smotsa),
        real("MOTSA", fast.motsa, naive.motsa),
        real("MOTSP", fast.motsp, naive.motsp)}) {
    if (!d.empty()) return d;
  }
  return {};
}

}  // namespace mopt::oracle
