#pragma once

// File formats.
//
// Canonical frame (.mopt), all integers little-endian:
//   "MOPT" | u16 version = 1 | u8 shape kind (0 grid, 1 points)
//   | u32 width (or count) | u32 height (or 0)
//   | per element: u16 class_id, u16 track_id
//
// Tensor container (.mtc) for logits and candidates:
//   "MOPTTNSR" | u32 header length | JSON header | f32 payload
//
// Point labels: one u32 per point, class in the low 16 bits and track in
// the high 16 bits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mopt/candidate.h"
#include "mopt/core.h"
#include "mopt/fusion.h"
#include "mopt/metrics.h"

namespace mopt::io {

// Malformed, truncated or unreadable data.
class FormatError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

inline constexpr std::uint16_t kCanonicalVersion = 1;

std::vector<std::uint8_t> EncodeCanonical(const FrameLabeling& frame);
FrameLabeling DecodeCanonical(std::span<const std::uint8_t> bytes,
                              FrameIndex frame_index = 0);
void WriteCanonical(const FrameLabeling& frame,
                    const std::filesystem::path& path);
FrameLabeling ReadCanonical(const std::filesystem::path& path,
                            FrameIndex frame_index = 0);

std::vector<std::uint8_t> ReadBytes(const std::filesystem::path& path);
void WriteBytes(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

// ---- COCO-panoptic style id maps ------------------------------------------

inline std::uint32_t IdFromRgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return r + 256u * g + 65536u * b;
}

struct IdmapImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint32_t> ids;  // row-major
};

IdmapImage ReadIdmapImage(const std::filesystem::path& png);
void WriteIdmapPng(const std::filesystem::path& png, const IdmapImage& image);

// Segment id -> (class, track). Accepts {"segments_info": [{"id",
// "category_id", "track_id" | "instance_id"}]} or a bare array of those.
std::map<std::uint32_t, Element> ReadSegmentsJson(
    const std::filesystem::path& json);

// Unknown ids become void; stuff tracks are forced to 0.
FrameLabeling LabelIdmap(const IdmapImage& image,
                         const std::map<std::uint32_t, Element>& segments,
                         const ClassTaxonomy& taxonomy,
                         FrameIndex frame_index = 0);
FrameLabeling ReadIdmapPng(const std::filesystem::path& png,
                           const std::filesystem::path& segments_json,
                           const ClassTaxonomy& taxonomy,
                           FrameIndex frame_index = 0);

// ---- LiDAR point labels ---------------------------------------------------

// Raw (class, track) words, no remapping.
std::vector<Element> DecodePointWords(std::span<const std::uint8_t> bytes);

// Raw class -> taxonomy class. An empty map keeps raw classes; a raw class
// missing from a non-empty map becomes void. Stuff tracks are forced to 0.
using LabelMap = std::map<std::uint16_t, ClassId>;

FrameLabeling DecodePointLabels(std::span<const std::uint8_t> bytes,
                                const LabelMap& label_map,
                                const ClassTaxonomy& taxonomy,
                                FrameIndex frame_index = 0);
FrameLabeling ReadPointLabels(const std::filesystem::path& path,
                              const LabelMap& label_map,
                              const ClassTaxonomy& taxonomy,
                              FrameIndex frame_index = 0);

// ---- Taxonomy and manifests -----------------------------------------------

// {"void_id": 0, "classes": [{"id": 1, "name": "road", "kind": "stuff"}]}
ClassTaxonomy TaxonomyFromJson(const nlohmann::json& j);
nlohmann::json TaxonomyToJson(const ClassTaxonomy& taxonomy);
ClassTaxonomy ReadTaxonomy(const std::filesystem::path& path);
void WriteTaxonomy(const ClassTaxonomy& taxonomy,
                   const std::filesystem::path& path);

enum class FrameFormat { kCanonical, kIdmapPng, kPointLabels };

struct FrameSource {
  std::filesystem::path file;
  std::filesystem::path segments;  // id-map PNGs only
};

// {"dataset": "...", "format": "canonical" | "idmap_png" | "point_labels",
//  "taxonomy": "taxonomy.json", "label_map": {"10": 1, ...},
//  "pred": [...], "gt": [...]}
// Frame entries are paths, or {"image", "segments"} objects for id maps.
// Relative paths resolve against the manifest's directory.
struct SequenceManifest {
  std::string dataset;
  FrameFormat format = FrameFormat::kCanonical;
  std::filesystem::path taxonomy;
  LabelMap label_map;
  std::vector<FrameSource> pred;
  std::vector<FrameSource> gt;
};

// Throws FormatError on malformed JSON, unequal pred/gt lengths or missing
// files.
SequenceManifest ReadManifest(const std::filesystem::path& path);
void WriteManifest(const SequenceManifest& manifest,
                   const std::filesystem::path& path);

FrameLabeling LoadFrame(const FrameSource& source,
                        const SequenceManifest& manifest,
                        const ClassTaxonomy& taxonomy, FrameIndex frame_index);

// ---- Tensor container -----------------------------------------------------

struct TensorContainer {
  nlohmann::json header;
  std::vector<float> payload;
};

void WriteContainer(const std::filesystem::path& path,
                    const TensorContainer& container);
TensorContainer ReadContainer(const std::filesystem::path& path);

// header: {"kind": "semantic_logits", "frame_index", "width", "height",
//          "channels": [class ids]}; payload channel-major.
void WriteSemanticLogits(const std::filesystem::path& path,
                         const SemanticLogits& logits, FrameIndex frame_index);
SemanticLogits ReadSemanticLogits(const std::filesystem::path& path,
                                  FrameIndex* frame_index = nullptr);

// header: {"kind": "candidates", "frame_index", "candidates": [{"class_id",
//          "score", "box": [x0, y0, x1, y1], "patch": [w, h], "track_id",
//          "embedding_dim"}]}; payload per candidate: patch then embedding.
void WriteCandidates(const std::filesystem::path& path,
                     std::span<const InstanceCandidate> candidates,
                     FrameIndex frame_index);
std::vector<InstanceCandidate> ReadCandidates(
    const std::filesystem::path& path, FrameIndex* frame_index = nullptr);

// ---- Reports --------------------------------------------------------------

// Fixed key order, reals with six decimals.
std::string ReportToJson(const MetricReport& report);
void WriteReport(const MetricReport& report, const std::filesystem::path& path);

// ---- Overlays -------------------------------------------------------------

struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Stuff classes use a fixed palette, thing elements a colour hashed from the
// track id alone, void is black.
Rgb ElementColor(const Element& e, const ClassTaxonomy& taxonomy,
                 std::uint64_t palette_seed);
// Throws InvalidInput for point frames.
RgbImage RenderOverlay(const FrameLabeling& frame,
                       const ClassTaxonomy& taxonomy,
                       std::uint64_t palette_seed);
std::vector<std::uint8_t> EncodePpm(const RgbImage& image);
void WritePpm(const RgbImage& image, const std::filesystem::path& path);

}  // namespace mopt::io
