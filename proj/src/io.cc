#include "mopt/io.h"

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mopt::io {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::array<std::uint8_t, 4> kCanonicalMagic{'M', 'O', 'P', 'T'};
constexpr std::array<std::uint8_t, 8> kContainerMagic{'M', 'O', 'P', 'T',
                                                      'T', 'N', 'S', 'R'};
constexpr std::size_t kCanonicalHeader = 4 + 2 + 1 + 4 + 4;

void PutU16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
  }
}

std::uint16_t GetU16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t GetU32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) |
         (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void PutF32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  PutU32(out, bits);
}

float GetF32(std::span<const std::uint8_t> b, std::size_t at) {
  const std::uint32_t bits = GetU32(b, at);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

json ParseJsonFile(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = ReadBytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed json: " + e.what());
  }
}

void WriteText(const fs::path& path, const std::string& text) {
  WriteBytes(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(text.data()),
                       text.size()));
}

// Applies the "stuff carries no track" rule and rejects frames that still
// fail validation.
FrameLabeling Ingest(FrameShape shape, std::vector<Element> elements,
                     const ClassTaxonomy& taxonomy, FrameIndex frame_index,
                     const std::string& source) {
  for (Element& e : elements) {
    if (taxonomy.contains(e.class_id) && !taxonomy.is_thing(e.class_id)) {
      e.track_id = kNoTrack;
    }
  }
  FrameLabeling frame(shape, std::move(elements), frame_index);
  const ValidationResult r = ValidateFrame(frame, taxonomy);
  if (!r.ok()) throw FormatError(source + ": " + r.summary());
  return frame;
}

std::uint64_t Mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string Fixed6(double v) {
  if (std::abs(v) < 5e-7) v = 0.0;  // no "-0.000000"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<std::uint8_t> ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void WriteBytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::vector<std::uint8_t> EncodeCanonical(const FrameLabeling& frame) {
  const FrameShape& shape = frame.shape();
  if (frame.size() != shape.element_count()) {
    throw InvalidInput("cannot encode a frame whose size disagrees with its shape");
  }
  std::vector<std::uint8_t> out(kCanonicalMagic.begin(), kCanonicalMagic.end());
  out.reserve(kCanonicalHeader + 4 * frame.size());
  PutU16(out, kCanonicalVersion);
  out.push_back(static_cast<std::uint8_t>(shape.kind));
  PutU32(out, shape.width);
  PutU32(out, shape.is_grid() ? shape.height : 0);
  for (const Element& e : frame.elements()) {
    if (e.track_id > 0xffff) {
      throw InvalidInput("track id " + std::to_string(e.track_id) +
                         " does not fit the canonical 16-bit field");
    }
    PutU16(out, e.class_id);
    PutU16(out, static_cast<std::uint16_t>(e.track_id));
  }
  return out;
}

FrameLabeling DecodeCanonical(std::span<const std::uint8_t> bytes,
                              FrameIndex frame_index) {
  if (bytes.size() < kCanonicalHeader) {
    throw FormatError("truncated canonical frame: header needs " +
                      std::to_string(kCanonicalHeader) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (!std::equal(kCanonicalMagic.begin(), kCanonicalMagic.end(),
                  bytes.begin())) {
    throw FormatError("bad magic: not a canonical MOPT frame");
  }
  const std::uint16_t version = GetU16(bytes, 4);
  if (version != kCanonicalVersion) {
    throw FormatError("unsupported canonical version " +
                      std::to_string(version));
  }
  const std::uint8_t kind = bytes[6];
  if (kind > 1) throw FormatError("unknown shape kind " + std::to_string(kind));
  const std::uint32_t a = GetU32(bytes, 7);
  const std::uint32_t b = GetU32(bytes, 11);
  const FrameShape shape =
      kind == 0 ? FrameShape::Grid(a, b) : FrameShape::Points(a);
  if (kind == 1 && b != 0) {
    throw FormatError("point frame with non-zero height field");
  }
  const std::size_t n = shape.element_count();
  const std::size_t expected = kCanonicalHeader + 4 * n;
  if (bytes.size() < expected) {
    throw FormatError("truncated canonical frame: expected " +
                      std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing bytes after canonical frame");
  }
  std::vector<Element> elements(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = kCanonicalHeader + 4 * i;
    elements[i] = {GetU16(bytes, at), GetU16(bytes, at + 2)};
  }
  return FrameLabeling(shape, std::move(elements), frame_index);
}

void WriteCanonical(const FrameLabeling& frame, const fs::path& path) {
  WriteBytes(path, EncodeCanonical(frame));
}

FrameLabeling ReadCanonical(const fs::path& path, FrameIndex frame_index) {
  try {
    return DecodeCanonical(ReadBytes(path), frame_index);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

IdmapImage ReadIdmapImage(const fs::path& png) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, png.string().c_str())) {
    throw FormatError(png.string() + ": unreadable image: " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(png.string() + ": unreadable image: " + msg);
  }
  IdmapImage out;
  out.width = image.width;
  out.height = image.height;
  out.ids.resize(static_cast<std::size_t>(out.width) * out.height);
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    out.ids[i] = IdFromRgb(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
  }
  return out;
}

void WriteIdmapPng(const fs::path& png, const IdmapImage& image) {
  if (image.ids.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw InvalidInput("id map size disagrees with its dimensions");
  }
  std::vector<std::uint8_t> rgb(3 * image.ids.size());
  for (std::size_t i = 0; i < image.ids.size(); ++i) {
    const std::uint32_t id = image.ids[i];
    if (id >= (1u << 24)) throw InvalidInput("segment id does not fit RGB");
    rgb[3 * i] = static_cast<std::uint8_t>(id & 0xff);
    rgb[3 * i + 1] = static_cast<std::uint8_t>((id >> 8) & 0xff);
    rgb[3 * i + 2] = static_cast<std::uint8_t>((id >> 16) & 0xff);
  }
  png_image out;
  std::memset(&out, 0, sizeof out);
  out.version = PNG_IMAGE_VERSION;
  out.width = image.width;
  out.height = image.height;
  out.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&out, png.string().c_str(), 0, rgb.data(), 0,
                               nullptr)) {
    throw FormatError(png.string() + ": cannot write png: " + out.message);
  }
}

std::map<std::uint32_t, Element> ReadSegmentsJson(const fs::path& path) {
  const json doc = ParseJsonFile(path);
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("segments_info")) {
      throw FormatError(path.string() + ": missing \"segments_info\"");
    }
    list = &doc.at("segments_info");
  }
  if (!list->is_array()) {
    throw FormatError(path.string() + ": segments must be an array");
  }
  std::map<std::uint32_t, Element> segments;
  try {
    for (const json& s : *list) {
      const auto id = s.at("id").get<std::uint32_t>();
      Element e;
      e.class_id = s.at("category_id").get<ClassId>();
      if (s.contains("track_id")) {
        e.track_id = s.at("track_id").get<TrackId>();
      } else if (s.contains("instance_id")) {
        e.track_id = s.at("instance_id").get<TrackId>();
      }
      if (!segments.emplace(id, e).second) {
        throw FormatError(path.string() + ": duplicate segment id " +
                          std::to_string(id));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed segment entry: " + e.what());
  }
  return segments;
}

FrameLabeling LabelIdmap(const IdmapImage& image,
                         const std::map<std::uint32_t, Element>& segments,
                         const ClassTaxonomy& taxonomy,
                         FrameIndex frame_index) {
  const Element void_element{taxonomy.void_id(), kNoTrack};
  std::vector<Element> elements(image.ids.size(), void_element);
  for (std::size_t i = 0; i < image.ids.size(); ++i) {
    auto it = segments.find(image.ids[i]);
    if (it != segments.end()) elements[i] = it->second;
  }
  return Ingest(FrameShape::Grid(image.width, image.height),
                std::move(elements), taxonomy, frame_index, "id map");
}

FrameLabeling ReadIdmapPng(const fs::path& png, const fs::path& segments_json,
                           const ClassTaxonomy& taxonomy,
                           FrameIndex frame_index) {
  return LabelIdmap(ReadIdmapImage(png), ReadSegmentsJson(segments_json),
                    taxonomy, frame_index);
}

std::vector<Element> DecodePointWords(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) {
    throw FormatError("point label data length " +
                      std::to_string(bytes.size()) +
                      " is not a multiple of 4");
  }
  std::vector<Element> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t word = GetU32(bytes, 4 * i);
    out[i] = {static_cast<ClassId>(word & 0xffff), word >> 16};
  }
  return out;
}

FrameLabeling DecodePointLabels(std::span<const std::uint8_t> bytes,
                                const LabelMap& label_map,
                                const ClassTaxonomy& taxonomy,
                                FrameIndex frame_index) {
  std::vector<Element> elements = DecodePointWords(bytes);
  if (elements.empty()) throw FormatError("point label file holds no points");
  if (!label_map.empty()) {
    for (Element& e : elements) {
      auto it = label_map.find(e.class_id);
      e.class_id = it == label_map.end() ? taxonomy.void_id() : it->second;
    }
  }
  const auto count = static_cast<std::uint32_t>(elements.size());
  return Ingest(FrameShape::Points(count), std::move(elements), taxonomy,
                frame_index, "point labels");
}

FrameLabeling ReadPointLabels(const fs::path& path, const LabelMap& label_map,
                              const ClassTaxonomy& taxonomy,
                              FrameIndex frame_index) {
  try {
    return DecodePointLabels(ReadBytes(path), label_map, taxonomy,
                             frame_index);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ClassTaxonomy TaxonomyFromJson(const json& j) {
  try {
    std::vector<ClassEntry> entries;
    for (const json& c : j.at("classes")) {
      const std::string kind = c.at("kind").get<std::string>();
      if (kind != "stuff" && kind != "thing") {
        throw FormatError("class kind must be \"stuff\" or \"thing\", got \"" +
                          kind + "\"");
      }
      entries.push_back({c.at("id").get<ClassId>(),
                         c.value("name", std::string()),
                         kind == "thing" ? ClassKind::kThing
                                         : ClassKind::kStuff});
    }
    return ClassTaxonomy(std::move(entries), j.at("void_id").get<ClassId>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed taxonomy: ") + e.what());
  }
}

json TaxonomyToJson(const ClassTaxonomy& taxonomy) {
  json classes = json::array();
  for (const ClassEntry& e : taxonomy.entries()) {
    classes.push_back({{"id", e.id},
                       {"name", e.name},
                       {"kind", e.kind == ClassKind::kThing ? "thing" : "stuff"}});
  }
  return {{"void_id", taxonomy.void_id()}, {"classes", classes}};
}

ClassTaxonomy ReadTaxonomy(const fs::path& path) {
  try {
    return TaxonomyFromJson(ParseJsonFile(path));
  } catch (const InvalidInput& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void WriteTaxonomy(const ClassTaxonomy& taxonomy, const fs::path& path) {
  WriteText(path, TaxonomyToJson(taxonomy).dump(2) + "\n");
}

namespace {

const char* FormatName(FrameFormat f) {
  switch (f) {
    case FrameFormat::kCanonical:
      return "canonical";
    case FrameFormat::kIdmapPng:
      return "idmap_png";
    case FrameFormat::kPointLabels:
      return "point_labels";
  }
  return "canonical";
}

FrameSource ParseSource(const json& entry, FrameFormat format,
                        const fs::path& base) {
  FrameSource s;
  if (entry.is_string()) {
    s.file = base / entry.get<std::string>();
  } else {
    s.file = base / entry.at("image").get<std::string>();
    s.segments = base / entry.at("segments").get<std::string>();
  }
  if (format == FrameFormat::kIdmapPng && s.segments.empty()) {
    throw FormatError("id-map frames need {\"image\", \"segments\"} entries");
  }
  for (const fs::path& p : {s.file, s.segments}) {
    if (!p.empty() && !fs::exists(p)) {
      throw FormatError("manifest references missing file " + p.string());
    }
  }
  return s;
}

json SourceToJson(const FrameSource& s, const fs::path& base) {
  auto rel = [&](const fs::path& p) {
    return p.lexically_proximate(base).generic_string();
  };
  if (s.segments.empty()) return rel(s.file);
  return {{"image", rel(s.file)}, {"segments", rel(s.segments)}};
}

}  // namespace

SequenceManifest ReadManifest(const fs::path& path) {
  const json doc = ParseJsonFile(path);
  const fs::path base = path.parent_path();
  SequenceManifest m;
  try {
    m.dataset = doc.value("dataset", std::string());
    const std::string format = doc.value("format", std::string("canonical"));
    if (format == "canonical") {
      m.format = FrameFormat::kCanonical;
    } else if (format == "idmap_png") {
      m.format = FrameFormat::kIdmapPng;
    } else if (format == "point_labels") {
      m.format = FrameFormat::kPointLabels;
    } else {
      throw FormatError("unknown frame format \"" + format + "\"");
    }
    m.taxonomy = base / doc.at("taxonomy").get<std::string>();
    if (!fs::exists(m.taxonomy)) {
      throw FormatError("manifest references missing taxonomy " +
                        m.taxonomy.string());
    }
    if (doc.contains("label_map")) {
      for (const auto& [raw, mapped] : doc.at("label_map").items()) {
        m.label_map[static_cast<std::uint16_t>(std::stoul(raw))] =
            mapped.get<ClassId>();
      }
    }
    for (const json& e : doc.at("pred")) {
      m.pred.push_back(ParseSource(e, m.format, base));
    }
    for (const json& e : doc.at("gt")) {
      m.gt.push_back(ParseSource(e, m.format, base));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  if (m.pred.size() != m.gt.size()) {
    throw FormatError(path.string() + ": " + std::to_string(m.pred.size()) +
                      " predicted vs " + std::to_string(m.gt.size()) +
                      " groundtruth frames");
  }
  return m;
}

void WriteManifest(const SequenceManifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path();
  json pred = json::array();
  json gt = json::array();
  for (const FrameSource& s : manifest.pred) pred.push_back(SourceToJson(s, base));
  for (const FrameSource& s : manifest.gt) gt.push_back(SourceToJson(s, base));
  json doc = {{"dataset", manifest.dataset},
              {"format", FormatName(manifest.format)},
              {"taxonomy",
               manifest.taxonomy.lexically_proximate(base).generic_string()},
              {"pred", pred},
              {"gt", gt}};
  if (!manifest.label_map.empty()) {
    json lm = json::object();
    for (const auto& [raw, mapped] : manifest.label_map) {
      lm[std::to_string(raw)] = mapped;
    }
    doc["label_map"] = lm;
  }
  WriteText(path, doc.dump(2) + "\n");
}

FrameLabeling LoadFrame(const FrameSource& source,
                        const SequenceManifest& manifest,
                        const ClassTaxonomy& taxonomy, FrameIndex frame_index) {
  switch (manifest.format) {
    case FrameFormat::kCanonical: {
      FrameLabeling f = ReadCanonical(source.file, frame_index);
      const ValidationResult r = ValidateFrame(f, taxonomy);
      if (!r.ok()) throw FormatError(source.file.string() + ": " + r.summary());
      return f;
    }
    case FrameFormat::kIdmapPng:
      return ReadIdmapPng(source.file, source.segments, taxonomy, frame_index);
    case FrameFormat::kPointLabels:
      return ReadPointLabels(source.file, manifest.label_map, taxonomy,
                             frame_index);
  }
  throw FormatError("unknown frame format");
}

void WriteContainer(const fs::path& path, const TensorContainer& container) {
  const std::string header = container.header.dump();
  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  PutU32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + 4 * container.payload.size());
  for (float v : container.payload) PutF32(out, v);
  WriteBytes(path, out);
}

TensorContainer ReadContainer(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = ReadBytes(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < kContainerMagic.size() + 4 ||
      !std::equal(kContainerMagic.begin(), kContainerMagic.end(),
                  bytes.begin())) {
    throw FormatError(where + "not a tensor container");
  }
  const std::uint32_t header_len = GetU32(bytes, kContainerMagic.size());
  const std::size_t payload_at = kContainerMagic.size() + 4 + header_len;
  if (bytes.size() < payload_at) throw FormatError(where + "truncated header");
  if ((bytes.size() - payload_at) % 4 != 0) {
    throw FormatError(where + "payload is not a whole number of float32s");
  }
  TensorContainer c;
  try {
    c.header = json::parse(bytes.begin() + kContainerMagic.size() + 4,
                           bytes.begin() + static_cast<std::ptrdiff_t>(payload_at));
  } catch (const json::exception& e) {
    throw FormatError(where + "malformed header: " + e.what());
  }
  c.payload.resize((bytes.size() - payload_at) / 4);
  for (std::size_t i = 0; i < c.payload.size(); ++i) {
    c.payload[i] = GetF32(bytes, payload_at + 4 * i);
  }
  return c;
}

void WriteSemanticLogits(const fs::path& path, const SemanticLogits& logits,
                         FrameIndex frame_index) {
  if (!logits.shape.is_grid()) {
    throw InvalidInput("semantic logits must be laid out on a grid");
  }
  TensorContainer c;
  c.header = {{"kind", "semantic_logits"},
              {"frame_index", frame_index},
              {"width", logits.shape.width},
              {"height", logits.shape.height},
              {"channels", logits.channel_classes}};
  c.payload = logits.values;
  WriteContainer(path, c);
}

SemanticLogits ReadSemanticLogits(const fs::path& path,
                                  FrameIndex* frame_index) {
  TensorContainer c = ReadContainer(path);
  SemanticLogits logits;
  try {
    if (c.header.at("kind") != "semantic_logits") {
      throw FormatError(path.string() + ": not a semantic logits container");
    }
    logits.shape = FrameShape::Grid(c.header.at("width").get<std::uint32_t>(),
                                    c.header.at("height").get<std::uint32_t>());
    logits.channel_classes =
        c.header.at("channels").get<std::vector<ClassId>>();
    if (frame_index) *frame_index = c.header.value("frame_index", FrameIndex{0});
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  if (c.payload.size() !=
      logits.channel_classes.size() * logits.shape.element_count()) {
    throw FormatError(path.string() + ": payload size disagrees with header");
  }
  logits.values = std::move(c.payload);
  return logits;
}

void WriteCandidates(const fs::path& path,
                     std::span<const InstanceCandidate> candidates,
                     FrameIndex frame_index) {
  TensorContainer c;
  json list = json::array();
  for (const InstanceCandidate& cand : candidates) {
    if (cand.mask_logits.size() !=
        static_cast<std::size_t>(cand.patch_width) * cand.patch_height) {
      throw InvalidInput("candidate patch size disagrees with its dimensions");
    }
    list.push_back({{"class_id", cand.class_id},
                    {"score", cand.score},
                    {"box", {cand.box.x0, cand.box.y0, cand.box.x1, cand.box.y1}},
                    {"patch", {cand.patch_width, cand.patch_height}},
                    {"track_id", cand.track_id},
                    {"embedding_dim", cand.embedding.size()}});
    c.payload.insert(c.payload.end(), cand.mask_logits.begin(),
                     cand.mask_logits.end());
    c.payload.insert(c.payload.end(), cand.embedding.begin(),
                     cand.embedding.end());
  }
  c.header = {{"kind", "candidates"},
              {"frame_index", frame_index},
              {"candidates", list}};
  WriteContainer(path, c);
}

std::vector<InstanceCandidate> ReadCandidates(const fs::path& path,
                                              FrameIndex* frame_index) {
  TensorContainer c = ReadContainer(path);
  std::vector<InstanceCandidate> out;
  std::size_t at = 0;
  try {
    if (c.header.at("kind") != "candidates") {
      throw FormatError(path.string() + ": not a candidates container");
    }
    if (frame_index) *frame_index = c.header.value("frame_index", FrameIndex{0});
    for (const json& j : c.header.at("candidates")) {
      InstanceCandidate cand;
      cand.class_id = j.at("class_id").get<ClassId>();
      cand.score = j.at("score").get<double>();
      const auto box = j.at("box").get<std::vector<std::int32_t>>();
      if (box.size() != 4) throw FormatError(path.string() + ": box needs 4 values");
      cand.box = {box[0], box[1], box[2], box[3]};
      const auto patch = j.at("patch").get<std::vector<std::uint32_t>>();
      if (patch.size() != 2) throw FormatError(path.string() + ": patch needs 2 values");
      cand.patch_width = patch[0];
      cand.patch_height = patch[1];
      cand.track_id = j.value("track_id", kNoTrack);
      const auto dim = j.value("embedding_dim", std::size_t{0});
      const std::size_t patch_n =
          static_cast<std::size_t>(cand.patch_width) * cand.patch_height;
      if (at + patch_n + dim > c.payload.size()) {
        throw FormatError(path.string() + ": payload shorter than header");
      }
      cand.mask_logits.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(at),
                              c.payload.begin() + static_cast<std::ptrdiff_t>(at + patch_n));
      at += patch_n;
      cand.embedding.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(at),
                            c.payload.begin() + static_cast<std::ptrdiff_t>(at + dim));
      at += dim;
      out.push_back(std::move(cand));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  if (at != c.payload.size()) {
    throw FormatError(path.string() + ": payload longer than header");
  }
  return out;
}

std::string ReportToJson(const MetricReport& report) {
  std::string s = "{\n";
  s += "  \"frames\": " + std::to_string(report.frames) + ",\n";
  s += "  \"aggregate\": {\n";
  const std::pair<const char*, double> aggregate[] = {
      {"sPTQ", report.sptq},     {"PTQ", report.ptq},
      {"PQ", report.pq},         {"SQ", report.sq},
      {"RQ", report.rq},         {"sMOTSA", report.smotsa},
      {"MOTSA", report.motsa},   {"MOTSP", report.motsp}};
  for (std::size_t i = 0; i < std::size(aggregate); ++i) {
    s += std::string("    \"") + aggregate[i].first +
         "\": " + Fixed6(aggregate[i].second) +
         (i + 1 < std::size(aggregate) ? ",\n" : "\n");
  }
  s += "  },\n  \"per_class\": [";
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    const ClassMetrics& m = report.per_class[k];
    s += k == 0 ? "\n" : ",\n";
    s += "    {\n";
    s += "      \"class_id\": " + std::to_string(m.class_id) + ",\n";
    s += "      \"name\": " + json(m.name).dump() + ",\n";
    s += std::string("      \"kind\": \"") + (m.is_thing ? "thing" : "stuff") +
         "\",\n";
    s += "      \"sPTQ_c\": " + Fixed6(m.sptq) + ",\n";
    s += "      \"PTQ_c\": " + Fixed6(m.ptq) + ",\n";
    s += "      \"PQ_c\": " + Fixed6(m.pq) + ",\n";
    s += "      \"SQ_c\": " + Fixed6(m.sq) + ",\n";
    s += "      \"RQ_c\": " + Fixed6(m.rq) + ",\n";
    s += "      \"TP\": " + std::to_string(m.counts.tp) + ",\n";
    s += "      \"FP\": " + std::to_string(m.counts.fp) + ",\n";
    s += "      \"FN\": " + std::to_string(m.counts.fn) + ",\n";
    s += "      \"IDS\": " + std::to_string(m.counts.ids) + ",\n";
    s += "      \"IoU_sum\": " + Fixed6(m.counts.iou_sum) + ",\n";
    s += "      \"sIDS\": " + Fixed6(m.counts.sids_sum) + "\n";
    s += "    }";
  }
  s += report.per_class.empty() ? "]\n" : "\n  ]\n";
  s += "}\n";
  return s;
}

void WriteReport(const MetricReport& report, const fs::path& path) {
  WriteText(path, ReportToJson(report));
}

Rgb ElementColor(const Element& e, const ClassTaxonomy& taxonomy,
                 std::uint64_t palette_seed) {
  if (taxonomy.is_void(e.class_id) || !taxonomy.contains(e.class_id)) {
    return {0, 0, 0};
  }
  if (!taxonomy.is_thing(e.class_id)) {
    static constexpr Rgb kStuffPalette[] = {
        {128, 64, 128}, {244, 35, 232}, {70, 70, 70},    {102, 102, 156},
        {190, 153, 153}, {153, 153, 153}, {250, 170, 30}, {220, 220, 0},
        {107, 142, 35}, {152, 251, 152}, {70, 130, 180}, {81, 0, 81},
        {111, 74, 0},   {230, 150, 140}, {180, 165, 180}, {150, 100, 100}};
    return kStuffPalette[e.class_id % std::size(kStuffPalette)];
  }
  const std::uint64_t h = Mix(palette_seed ^ Mix(e.track_id));
  Rgb c{static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8),
        static_cast<std::uint8_t>(h >> 16)};
  if (c.r < 32 && c.g < 32 && c.b < 32) c.r |= 0x80;  // never void-black
  return c;
}

RgbImage RenderOverlay(const FrameLabeling& frame,
                       const ClassTaxonomy& taxonomy,
                       std::uint64_t palette_seed) {
  if (!frame.shape().is_grid()) {
    throw InvalidInput("point frames have no raster layout to render");
  }
  RgbImage img;
  img.width = frame.shape().width;
  img.height = frame.shape().height;
  img.rgb.resize(3 * frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const Rgb c = ElementColor(frame[i], taxonomy, palette_seed);
    img.rgb[3 * i] = c.r;
    img.rgb[3 * i + 1] = c.g;
    img.rgb[3 * i + 2] = c.b;
  }
  return img;
}

std::vector<std::uint8_t> EncodePpm(const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

void WritePpm(const RgbImage& image, const fs::path& path) {
  WriteBytes(path, EncodePpm(image));
}

}  // namespace mopt::io
