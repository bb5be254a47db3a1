#pragma once

// Domain model shared by every mopt module: class taxonomy, per-frame
// panoptic labelings and identity-defined segments.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mopt {

using ClassId = std::uint16_t;
using TrackId = std::uint32_t;
using FrameIndex = std::int64_t;

// track_id 0 marks "no instance"; stuff and void elements always carry it.
inline constexpr TrackId kNoTrack = 0;
inline constexpr ClassId kMaxClassId = 65534;

// Input that violates a documented precondition (bad shape, unknown class,
// out-of-order frames, ...).
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An internal consistency check failed. Indicates a bug, not bad data.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class ClassKind : std::uint8_t { kStuff, kThing };

struct ClassEntry {
  ClassId id = 0;
  std::string name;
  ClassKind kind = ClassKind::kStuff;
};

class ClassTaxonomy {
 public:
  // Throws InvalidInput on duplicate ids, ids above kMaxClassId, or a void
  // entry declared as a thing. A void_id missing from `entries` is added as
  // a stuff entry named "void".
  ClassTaxonomy(std::vector<ClassEntry> entries, ClassId void_id);

  const std::vector<ClassEntry>& entries() const { return entries_; }
  ClassId void_id() const { return void_id_; }

  bool contains(ClassId id) const;
  const ClassEntry& entry(ClassId id) const;  // throws InvalidInput
  bool is_thing(ClassId id) const;
  bool is_void(ClassId id) const { return id == void_id_; }

  // Sorted ids, void excluded.
  std::vector<ClassId> thing_ids() const;
  std::vector<ClassId> stuff_ids() const;

  // At least one thing and one non-void stuff class.
  bool supports_panoptic_tracking() const;

 private:
  std::vector<ClassEntry> entries_;
  std::vector<std::int32_t> index_;  // class id -> position in entries_, -1 if absent
  ClassId void_id_;
};

enum class ShapeKind : std::uint8_t { kGrid = 0, kPoints = 1 };

struct FrameShape {
  ShapeKind kind = ShapeKind::kGrid;
  std::uint32_t width = 0;   // point count for kPoints
  std::uint32_t height = 0;  // 0 for kPoints

  static FrameShape Grid(std::uint32_t width, std::uint32_t height) {
    return {ShapeKind::kGrid, width, height};
  }
  static FrameShape Points(std::uint32_t count) {
    return {ShapeKind::kPoints, count, 0};
  }

  std::size_t element_count() const {
    return kind == ShapeKind::kGrid
               ? static_cast<std::size_t>(width) * height
               : static_cast<std::size_t>(width);
  }
  bool is_grid() const { return kind == ShapeKind::kGrid; }

  friend bool operator==(const FrameShape&, const FrameShape&) = default;
};

struct Element {
  ClassId class_id = 0;
  TrackId track_id = kNoTrack;

  friend bool operator==(const Element&, const Element&) = default;
};

// Per-element (class, track) assignment for one frame. Elements of a grid are
// stored row-major. Construction does not validate; see ValidateFrame.
class FrameLabeling {
 public:
  FrameLabeling() = default;
  FrameLabeling(FrameShape shape, std::vector<Element> elements,
                FrameIndex frame_index = 0)
      : shape_(shape),
        elements_(std::move(elements)),
        frame_index_(frame_index) {}

  // A frame filled with a single (class, track) value.
  static FrameLabeling Filled(FrameShape shape, Element value,
                              FrameIndex frame_index = 0) {
    return {shape, std::vector<Element>(shape.element_count(), value),
            frame_index};
  }

  const FrameShape& shape() const { return shape_; }
  std::span<const Element> elements() const { return elements_; }
  std::size_t size() const { return elements_.size(); }
  FrameIndex frame_index() const { return frame_index_; }

  const Element& operator[](std::size_t i) const { return elements_[i]; }
  const Element& at(std::uint32_t x, std::uint32_t y) const {
    return elements_[static_cast<std::size_t>(y) * shape_.width + x];
  }

  friend bool operator==(const FrameLabeling&, const FrameLabeling&) = default;

 private:
  FrameShape shape_;
  std::vector<Element> elements_;
  FrameIndex frame_index_ = 0;
};

enum class ViolationKind : std::uint8_t {
  kShapeMismatch,
  kUnknownClass,
  kThingWithoutTrack,
  kStuffWithTrack,
  kEmptyShape,
};

struct Violation {
  ViolationKind kind;
  std::size_t element = 0;  // offending element index, 0 for frame-level
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(ViolationKind kind) const;
  std::string summary() const;
};

// Reports at most `max_per_kind` violations of each kind.
ValidationResult ValidateFrame(const FrameLabeling& frame,
                               const ClassTaxonomy& taxonomy,
                               std::size_t max_per_kind = 8);

// Throws InvalidInput with the validation summary when the frame is invalid.
void RequireValidFrame(const FrameLabeling& frame,
                       const ClassTaxonomy& taxonomy);

struct SegmentKey {
  ClassId class_id = 0;
  TrackId track_id = kNoTrack;

  friend auto operator<=>(const SegmentKey&, const SegmentKey&) = default;
};

struct SegmentKeyHash {
  std::size_t operator()(const SegmentKey& k) const noexcept {
    return std::hash<std::uint64_t>{}(
        (static_cast<std::uint64_t>(k.class_id) << 32) | k.track_id);
  }
};

// All elements of one frame sharing a (class, track) pair. Never split by
// spatial connectivity.
struct Segment {
  SegmentKey key;
  FrameIndex frame_index = 0;
  std::uint64_t area = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Segments sorted by key. The void class yields an ordinary segment here;
// matching is what ignores it.
std::vector<Segment> ExtractSegments(const FrameLabeling& frame,
                                     const ClassTaxonomy& taxonomy);

}  // namespace mopt
