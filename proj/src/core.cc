#include "mopt/core.h"

#include <algorithm>
#include <array>
#include <unordered_map>

namespace mopt {

ClassTaxonomy::ClassTaxonomy(std::vector<ClassEntry> entries, ClassId void_id)
    : entries_(std::move(entries)),
      index_(static_cast<std::size_t>(kMaxClassId) + 1, -1),
      void_id_(void_id) {
  if (void_id_ > kMaxClassId) {
    throw InvalidInput("void id " + std::to_string(void_id_) +
                       " exceeds the maximum class id");
  }
  if (std::none_of(entries_.begin(), entries_.end(),
                   [&](const ClassEntry& e) { return e.id == void_id_; })) {
    entries_.push_back({void_id_, "void", ClassKind::kStuff});
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const ClassEntry& e = entries_[i];
    if (e.id > kMaxClassId) {
      throw InvalidInput("class id " + std::to_string(e.id) +
                         " exceeds the maximum class id");
    }
    if (index_[e.id] != -1) {
      throw InvalidInput("duplicate class id " + std::to_string(e.id));
    }
    if (e.id == void_id_ && e.kind != ClassKind::kStuff) {
      throw InvalidInput("void class must be of kind stuff");
    }
    index_[e.id] = static_cast<std::int32_t>(i);
  }
}

bool ClassTaxonomy::contains(ClassId id) const {
  return id <= kMaxClassId && index_[id] >= 0;
}

const ClassEntry& ClassTaxonomy::entry(ClassId id) const {
  if (!contains(id)) {
    throw InvalidInput("unknown class id " + std::to_string(id));
  }
  return entries_[static_cast<std::size_t>(index_[id])];
}

bool ClassTaxonomy::is_thing(ClassId id) const {
  return contains(id) &&
         entries_[static_cast<std::size_t>(index_[id])].kind ==
             ClassKind::kThing;
}

std::vector<ClassId> ClassTaxonomy::thing_ids() const {
  std::vector<ClassId> ids;
  for (const ClassEntry& e : entries_) {
    if (e.kind == ClassKind::kThing) ids.push_back(e.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<ClassId> ClassTaxonomy::stuff_ids() const {
  std::vector<ClassId> ids;
  for (const ClassEntry& e : entries_) {
    if (e.kind == ClassKind::kStuff && e.id != void_id_) ids.push_back(e.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool ClassTaxonomy::supports_panoptic_tracking() const {
  return !thing_ids().empty() && !stuff_ids().empty();
}

bool ValidationResult::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.kind == kind; });
}

std::string ValidationResult::summary() const {
  if (ok()) return "ok";
  std::string out;
  for (const Violation& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.message;
  }
  return out;
}

ValidationResult ValidateFrame(const FrameLabeling& frame,
                               const ClassTaxonomy& taxonomy,
                               std::size_t max_per_kind) {
  ValidationResult result;
  const FrameShape& shape = frame.shape();
  const bool empty_shape =
      shape.width == 0 || (shape.is_grid() && shape.height == 0);
  if (empty_shape) {
    result.violations.push_back(
        {ViolationKind::kEmptyShape, 0, "frame shape has no elements"});
  }
  if (frame.size() != shape.element_count()) {
    result.violations.push_back(
        {ViolationKind::kShapeMismatch, 0,
         "shape mismatch: expected " + std::to_string(shape.element_count()) +
             " elements, got " + std::to_string(frame.size())});
  }

  std::array<std::size_t, 5> reported{};
  auto report = [&](ViolationKind kind, std::size_t i, std::string msg) {
    auto& n = reported[static_cast<std::size_t>(kind)];
    if (n++ < max_per_kind) {
      result.violations.push_back(
          {kind, i, std::move(msg) + " at element " + std::to_string(i)});
    }
  };

  const auto elements = frame.elements();
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const Element& e = elements[i];
    if (!taxonomy.contains(e.class_id)) {
      report(ViolationKind::kUnknownClass, i,
             "unknown class " + std::to_string(e.class_id));
      continue;
    }
    if (taxonomy.is_thing(e.class_id)) {
      if (e.track_id == kNoTrack) {
        report(ViolationKind::kThingWithoutTrack, i,
               "thing element without track id");
      }
    } else if (e.track_id != kNoTrack) {
      report(ViolationKind::kStuffWithTrack, i,
             "stuff element with track id " + std::to_string(e.track_id));
    }
  }
  return result;
}

void RequireValidFrame(const FrameLabeling& frame,
                       const ClassTaxonomy& taxonomy) {
  ValidationResult r = ValidateFrame(frame, taxonomy);
  if (!r.ok()) {
    throw InvalidInput("invalid frame " + std::to_string(frame.frame_index()) +
                       ": " + r.summary());
  }
}

std::vector<Segment> ExtractSegments(const FrameLabeling& frame,
                                     const ClassTaxonomy& taxonomy) {
  RequireValidFrame(frame, taxonomy);
  std::unordered_map<SegmentKey, std::uint64_t, SegmentKeyHash> areas;
  for (const Element& e : frame.elements()) {
    ++areas[SegmentKey{e.class_id, e.track_id}];
  }
  std::vector<Segment> segments;
  segments.reserve(areas.size());
  for (const auto& [key, area] : areas) {
    segments.push_back({key, frame.frame_index(), area});
  }
  std::sort(segments.begin(), segments.end(),
            [](const Segment& a, const Segment& b) { return a.key < b.key; });
  return segments;
}

}  // namespace mopt
