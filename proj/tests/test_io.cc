#include <fstream>

#include "doctest.h"
#include "mopt/io.h"
#include "mopt/synth.h"
#include "test_util.h"

using namespace mopt;
using mopt::testing::Grid;
using mopt::testing::StreetTaxonomy;
using mopt::testing::TempDir;
namespace fs = std::filesystem;

namespace {

void WriteString(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string ReadString(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("canonical frames") {
  SUBCASE("golden bytes") {
    const FrameLabeling f = Grid(1, 1, {{3, 0}});
    const std::vector<std::uint8_t> golden{0x4D, 0x4F, 0x50, 0x54, 0x01, 0x00, 0x00,
                                           0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00,
                                           0x00, 0x03, 0x00, 0x00, 0x00};
    CHECK(io::EncodeCanonical(f) == golden);
    CHECK(io::DecodeCanonical(golden) == f);
  }
  SUBCASE("round trips") {
    TempDir dir;
    SynthConfig c;
    c.frames = 3;
    const SynthSequence s = GenerateSequence(c);
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      const fs::path p = dir / ("f" + std::to_string(i) + ".mopt");
      io::WriteCanonical(s.gt[i], p);
      const FrameLabeling back = io::ReadCanonical(p, static_cast<FrameIndex>(i));
      CHECK(back == s.gt[i]);
      CHECK(io::EncodeCanonical(back) == io::ReadBytes(p));
    }
    const FrameLabeling points(FrameShape::Points(3), {{1, 0}, {9, 2}, {9, 65535}});
    CHECK(io::DecodeCanonical(io::EncodeCanonical(points)) == points);
  }
  SUBCASE("errors") {
    std::vector<std::uint8_t> bytes = io::EncodeCanonical(Grid(2, 1, {{1, 0}, {3, 1}}));
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
    CHECK_THROWS_WITH_AS(io::DecodeCanonical(truncated),
                         doctest::Contains("truncated"), io::FormatError);
    CHECK_THROWS_WITH_AS(io::DecodeCanonical(std::vector<std::uint8_t>(bytes.begin(),
                                                                      bytes.begin() + 6)),
                         doctest::Contains("truncated"), io::FormatError);
    std::vector<std::uint8_t> bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(io::DecodeCanonical(bad), doctest::Contains("magic"),
                         io::FormatError);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_WITH_AS(io::DecodeCanonical(bad), doctest::Contains("version"),
                         io::FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(io::DecodeCanonical(bad), io::FormatError);
    CHECK_THROWS_AS(io::EncodeCanonical(Grid(1, 1, {{3, 70000}})), InvalidInput);
    TempDir dir;
    CHECK_THROWS_AS(io::ReadCanonical(dir / "missing.mopt"), io::FormatError);
  }
}

TEST_CASE("point labels") {
  const std::vector<std::uint8_t> words{0x09, 0x00, 0x00, 0x00, 0x09, 0x00, 0x02, 0x00};
  const std::vector<Element> raw = io::DecodePointWords(words);
  REQUIRE(raw.size() == 2);
  CHECK(raw[0] == Element{9, 0});
  CHECK(raw[1] == Element{9, 2});

  CHECK_THROWS_AS(io::DecodePointWords(std::vector<std::uint8_t>(5, 0)), io::FormatError);
  const ClassTaxonomy tax = StreetTaxonomy();
  CHECK_THROWS_AS(io::DecodePointLabels({}, {}, tax), io::FormatError);

  const io::LabelMap map{{9, 3}, {40, 1}};
  const std::vector<std::uint8_t> tracked{0x09, 0x00, 0x01, 0x00, 0x09, 0x00, 0x02, 0x00};
  const FrameLabeling f = io::DecodePointLabels(tracked, map, tax, 4);
  CHECK(f.shape() == FrameShape::Points(2));
  CHECK(f.frame_index() == 4);
  CHECK(f[1] == Element{3, 2});

  // Stuff tracks are dropped, unmapped classes become void.
  const std::vector<std::uint8_t> mixed{40, 0, 7, 0, 77, 0, 0, 0};
  const FrameLabeling g = io::DecodePointLabels(mixed, map, tax);
  CHECK(g[0] == Element{1, 0});
  CHECK(g[1] == Element{0, 0});

  // Thing without a track fails validation.
  CHECK_THROWS_AS(io::DecodePointLabels(words, map, tax), io::FormatError);

  TempDir dir;
  io::WriteBytes(dir / "p.label", std::vector<std::uint8_t>{0x09, 0, 0x02, 0});
  CHECK(io::ReadPointLabels(dir / "p.label", map, tax)[0] == Element{3, 2});
}

TEST_CASE("id-map images") {
  TempDir dir;
  const ClassTaxonomy tax = StreetTaxonomy();
  SUBCASE("all black is uniform background") {
    io::IdmapImage img{3, 2, std::vector<std::uint32_t>(6, 0)};
    io::WriteIdmapPng(dir / "a.png", img);
    WriteString(dir / "a.json", R"({"segments_info": [{"id": 0, "category_id": 1}]})");
    const FrameLabeling f = io::ReadIdmapPng(dir / "a.png", dir / "a.json", tax, 2);
    CHECK(f == FrameLabeling::Filled(FrameShape::Grid(3, 2), {1, 0}, 2));
  }
  SUBCASE("rgb encodes ids") {
    CHECK(io::IdFromRgb(5, 1, 0) == 261);
    io::IdmapImage img{2, 1, {261, 70000}};
    io::WriteIdmapPng(dir / "b.png", img);
    const io::IdmapImage back = io::ReadIdmapImage(dir / "b.png");
    CHECK(back.ids == img.ids);
    WriteString(dir / "b.json",
                R"([{"id": 261, "category_id": 3, "instance_id": 12}])");
    const FrameLabeling f = io::ReadIdmapPng(dir / "b.png", dir / "b.json", tax);
    CHECK(f[0] == Element{3, 12});
    CHECK(f[1] == Element{0, 0});
  }
  SUBCASE("bad inputs") {
    WriteString(dir / "bad.json", "{not json");
    CHECK_THROWS_AS(io::ReadSegmentsJson(dir / "bad.json"), io::FormatError);
    WriteString(dir / "dup.json",
                R"([{"id": 1, "category_id": 1}, {"id": 1, "category_id": 2}])");
    CHECK_THROWS_AS(io::ReadSegmentsJson(dir / "dup.json"), io::FormatError);
    WriteString(dir / "fake.png", "not a png");
    CHECK_THROWS_AS(io::ReadIdmapImage(dir / "fake.png"), io::FormatError);
  }
}

TEST_CASE("taxonomy and manifest") {
  TempDir dir;
  const ClassTaxonomy tax = StreetTaxonomy();
  io::WriteTaxonomy(tax, dir / "taxonomy.json");
  const ClassTaxonomy back = io::ReadTaxonomy(dir / "taxonomy.json");
  CHECK(back.void_id() == 0);
  CHECK(back.thing_ids() == tax.thing_ids());
  CHECK(back.stuff_ids() == tax.stuff_ids());
  CHECK(back.entry(4).name == "person");

  CHECK_THROWS_AS(io::TaxonomyFromJson(nlohmann::json::parse(
                      R"({"void_id": 0, "classes": [{"id": 1, "name": "x", "kind": "blob"}]})")),
                  io::FormatError);

  io::WriteCanonical(Grid(1, 1, {{1, 0}}), dir / "p0.mopt");
  io::WriteCanonical(Grid(1, 1, {{1, 0}}), dir / "g0.mopt");
  io::SequenceManifest m;
  m.dataset = "toy";
  m.taxonomy = dir / "taxonomy.json";
  m.pred = {{dir / "p0.mopt", {}}};
  m.gt = {{dir / "g0.mopt", {}}};
  io::WriteManifest(m, dir / "manifest.json");
  const io::SequenceManifest r = io::ReadManifest(dir / "manifest.json");
  CHECK(r.dataset == "toy");
  CHECK(r.format == io::FrameFormat::kCanonical);
  REQUIRE(r.pred.size() == 1);
  CHECK(fs::equivalent(r.pred[0].file, dir / "p0.mopt"));
  CHECK(io::LoadFrame(r.gt[0], r, back, 0) == Grid(1, 1, {{1, 0}}));

  m.gt.push_back({dir / "g0.mopt", {}});
  io::WriteManifest(m, dir / "uneven.json");
  CHECK_THROWS_AS(io::ReadManifest(dir / "uneven.json"), io::FormatError);
  m.gt = {{dir / "nope.mopt", {}}};
  io::WriteManifest(m, dir / "missing.json");
  CHECK_THROWS_AS(io::ReadManifest(dir / "missing.json"), io::FormatError);

  io::WriteCanonical(Grid(1, 1, {{3, 0}}), dir / "invalid.mopt");
  const io::FrameSource invalid{dir / "invalid.mopt", {}};
  CHECK_THROWS_AS(io::LoadFrame(invalid, r, back, 0), io::FormatError);
}

TEST_CASE("tensor containers") {
  TempDir dir;
  SynthConfig c;
  c.frames = 2;
  c.embedding_noise = 0.05;
  const SynthSequence s = GenerateSequence(c);

  io::WriteSemanticLogits(dir / "l.mtc", s.semantic[1], 1);
  FrameIndex f = -1;
  const SemanticLogits l = io::ReadSemanticLogits(dir / "l.mtc", &f);
  CHECK(f == 1);
  CHECK(l.shape == s.semantic[1].shape);
  CHECK(l.channel_classes == s.semantic[1].channel_classes);
  CHECK(l.values == s.semantic[1].values);

  io::WriteCandidates(dir / "c.mtc", s.candidates[1], 1);
  CHECK(io::ReadCandidates(dir / "c.mtc") == s.candidates[1]);

  CHECK_THROWS_AS(io::ReadSemanticLogits(dir / "c.mtc"), io::FormatError);
  CHECK_THROWS_AS(io::ReadCandidates(dir / "l.mtc"), io::FormatError);

  std::vector<std::uint8_t> bytes = io::ReadBytes(dir / "c.mtc");
  bytes.resize(bytes.size() - 4);
  io::WriteBytes(dir / "short.mtc", bytes);
  CHECK_THROWS_AS(io::ReadCandidates(dir / "short.mtc"), io::FormatError);
  WriteString(dir / "junk.mtc", "MOPTJUNK");
  CHECK_THROWS_AS(io::ReadContainer(dir / "junk.mtc"), io::FormatError);
}

TEST_CASE("reports") {
  const ClassTaxonomy tax = StreetTaxonomy();
  SUBCASE("perfect sequence") {
    const std::vector<FrameLabeling> f{Grid(2, 1, {{1, 0}, {3, 1}})};
    const std::string j = io::ReportToJson(EvaluateSequence(f, f, tax));
    CHECK(j.find("\"sPTQ\": 1.000000") != std::string::npos);
    CHECK(j.find("\"sMOTSA\": 1.000000") != std::string::npos);
    CHECK(j.find("\"sky\"") == std::string::npos);
    CHECK(j.find("\"void\"") == std::string::npos);
    CHECK(nlohmann::json::parse(j)["per_class"].size() == 2);
  }
  SUBCASE("switch scenario") {
    SynthConfig c;
    c.objects = 1;
    const SynthSequence s = GenerateSequence(c);
    CorruptionSpec spec;
    spec.id_switches.push_back({5, 1, 9});
    const CorruptedSequence cs = ApplyCorruptions(s, spec);
    const MetricReport r = EvaluateSequence(cs.pred, s.gt, s.taxonomy);
    const std::string j = io::ReportToJson(r);
    CHECK(j.find("\"sPTQ_c\": 0.900000") != std::string::npos);
    CHECK(j.find("\"PTQ_c\": 0.900000") != std::string::npos);
    CHECK(j == io::ReportToJson(EvaluateSequence(cs.pred, s.gt, s.taxonomy)));

    TempDir dir;
    io::WriteReport(r, dir / "a.json");
    io::WriteReport(r, dir / "b.json");
    CHECK(ReadString(dir / "a.json") == ReadString(dir / "b.json"));
    CHECK(ReadString(dir / "a.json") == j);
  }
}

TEST_CASE("overlays") {
  const ClassTaxonomy tax = StreetTaxonomy();
  const FrameLabeling a = Grid(2, 1, {{1, 0}, {3, 7}});
  const FrameLabeling b = Grid(2, 1, {{3, 7}, {1, 0}}, 1);
  const io::RgbImage ia = io::RenderOverlay(a, tax, 5);
  const io::RgbImage ib = io::RenderOverlay(b, tax, 5);
  CHECK(std::equal(ia.rgb.begin() + 3, ia.rgb.end(), ib.rgb.begin()));
  CHECK(io::ElementColor({3, 7}, tax, 5) != io::ElementColor({3, 8}, tax, 5));
  CHECK(io::ElementColor({3, 7}, tax, 5) == io::ElementColor({4, 7}, tax, 5));
  CHECK(io::ElementColor({1, 0}, tax, 5) != io::ElementColor({2, 0}, tax, 5));

  const io::RgbImage v = io::RenderOverlay(Grid(1, 1, {{0, 0}}), tax, 5);
  CHECK(v.rgb == std::vector<std::uint8_t>{0, 0, 0});
  const std::vector<std::uint8_t> ppm = io::EncodePpm(v);
  CHECK(std::string(ppm.begin(), ppm.end() - 3) == "P6\n1 1\n255\n");

  CHECK_THROWS_AS(io::RenderOverlay(FrameLabeling(FrameShape::Points(1), {{1, 0}}), tax, 5),
                  InvalidInput);
}
