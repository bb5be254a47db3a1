#include "doctest.h"
#include "mopt/fusion.h"
#include "mopt/metrics.h"
#include "mopt/synth.h"

using namespace mopt;

namespace {

SynthConfig Single(std::int64_t frames) {
  SynthConfig c;
  c.frames = frames;
  c.objects = 1;
  c.width = 32;
  c.height = 24;
  return c;
}

void CheckLedger(const SynthSequence& seq, const CorruptedSequence& cs) {
  const SegmentStats stats = EvaluateSequenceStats(cs.pred, seq.gt, seq.taxonomy);
  CHECK(stats.classes.size() == cs.ledger.size());
  for (const auto& [c, expected] : cs.ledger) {
    CAPTURE(c);
    REQUIRE(stats.classes.count(c));
    const ClassStats& got = stats.classes.at(c);
    CHECK(got.tp == expected.tp);
    CHECK(got.fp == expected.fp);
    CHECK(got.fn == expected.fn);
    CHECK(got.ids == expected.ids);
    CHECK(got.gt_segments == expected.gt_segments);
    CHECK(got.iou_sum == doctest::Approx(expected.iou_sum).epsilon(1e-12));
    CHECK(got.sids_sum == doctest::Approx(expected.sids_sum).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("splitmix64 reference values") {
  // First outputs for seed 0 of the published generator.
  SplitMix64 rng(0);
  CHECK(rng.Next() == 0xE220A8397B1DCDAFull);
  CHECK(rng.Next() == 0x6E789E6AA1B965F4ull);
  CHECK(rng.Next() == 0x06C45D188009454Full);
  SplitMix64 u(42);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.Uniform01();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const std::int64_t k = u.UniformInt(-3, 3);
    CHECK(k >= -3);
    CHECK(k <= 3);
  }
}

TEST_CASE("generate sequence") {
  SUBCASE("no objects") {
    SynthConfig c = Single(3);
    c.objects = 0;
    const SynthSequence s = GenerateSequence(c);
    for (std::size_t f = 0; f < 3; ++f) {
      CHECK(s.gt[f] == FrameLabeling::Filled(FrameShape::Grid(32, 24), {1, 0},
                                             static_cast<FrameIndex>(f)));
      CHECK(s.candidates[f].empty());
    }
  }
  SUBCASE("static object") {
    SynthConfig c = Single(3);
    c.min_size = 4;
    c.max_size = 4;
    c.max_speed = 0;
    const SynthSequence s = GenerateSequence(c);
    const auto first = ExtractSegments(s.gt[0], s.taxonomy);
    for (std::size_t f = 0; f < 3; ++f) {
      auto segs = ExtractSegments(s.gt[f], s.taxonomy);
      for (Segment& seg : segs) seg.frame_index = 0;
      CHECK(segs == first);
      REQUIRE(s.candidates[f].size() == 1);
      CHECK(s.candidates[f][0].track_id == 1);
      CHECK(s.candidates[f][0].score == 1.0);
      CHECK(s.candidates[f][0].box.area() == 16);
    }
  }
  SUBCASE("same seed, same bits") {
    SynthConfig c = Single(6);
    c.objects = 3;
    c.embedding_noise = 0.1;
    const SynthSequence a = GenerateSequence(c);
    const SynthSequence b = GenerateSequence(c);
    CHECK(a.gt == b.gt);
    CHECK(a.candidates == b.candidates);
    for (std::size_t f = 0; f < a.semantic.size(); ++f) {
      CHECK(a.semantic[f].values == b.semantic[f].values);
    }
    c.seed = 2;
    CHECK_FALSE(GenerateSequence(c).gt == a.gt);
  }
  SUBCASE("frames are valid and logits are +-L") {
    SynthConfig c = Single(8);
    c.objects = 3;
    c.allow_overlap = true;
    const SynthSequence s = GenerateSequence(c);
    for (std::size_t f = 0; f < s.gt.size(); ++f) {
      CHECK(ValidateFrame(s.gt[f], s.taxonomy).ok());
      for (float v : s.semantic[f].values) CHECK(std::abs(v) == 10.0f);
      for (const Box& b : s.boxes[f]) {
        CHECK(b.x0 >= 0);
        CHECK(b.y0 >= 0);
        CHECK(b.x1 <= 32);
        CHECK(b.y1 <= 24);
      }
    }
  }
  SUBCASE("objects that cannot fit") {
    SynthConfig c = Single(2);
    c.objects = 5;
    c.height = 20;
    CHECK_THROWS_AS(GenerateSequence(c), InvalidInput);
    c = Single(0);
    CHECK_THROWS_AS(GenerateSequence(c), InvalidInput);
  }
}

TEST_CASE("ideal candidates fuse back into the groundtruth") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthConfig c;
    c.seed = seed;
    c.frames = 4;
    c.objects = 3;
    const SynthSequence s = GenerateSequence(c);
    for (std::size_t f = 0; f < s.gt.size(); ++f) {
      const FrameLabeling fused =
          FuseFrame(s.candidates[f], s.semantic[f], s.taxonomy, {0.5, 0},
                    static_cast<FrameIndex>(f));
      CHECK(fused == s.gt[f]);
    }
  }
}

TEST_CASE("corruption ledgers") {
  const SynthSequence single = GenerateSequence(Single(10));

  SUBCASE("empty spec is perfect") {
    const CorruptedSequence cs = ApplyCorruptions(single, {});
    CHECK(cs.pred == single.gt);
    CHECK(cs.ledger.at(2).tp == 10);
    CHECK(cs.ledger.at(1).tp == 10);
    CheckLedger(single, cs);
  }
  SUBCASE("one switch at frame 5") {
    CorruptionSpec spec;
    spec.id_switches.push_back({5, 1, 7});
    const CorruptedSequence cs = ApplyCorruptions(single, spec);
    CHECK(cs.ledger.at(2).ids == 1);
    CHECK(cs.ledger.at(2).sids_sum == 1.0);
    CheckLedger(single, cs);
    const ClassMetrics* m = EvaluateSequence(cs.pred, single.gt, single.taxonomy).find(2);
    CHECK(m->sptq == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m->ptq == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m->pq == 1.0);
  }
  SUBCASE("one dropout") {
    CorruptionSpec spec;
    spec.dropouts.push_back({3, 1});
    const CorruptedSequence cs = ApplyCorruptions(single, spec);
    CHECK(cs.ledger.at(2).tp == 9);
    CHECK(cs.ledger.at(2).fn == 1);
    CHECK(cs.ledger.at(2).iou_sum == 9.0);
    CheckLedger(single, cs);
  }
  SUBCASE("spurious segment") {
    const Box obj = single.boxes[2][0];
    const Box spot = obj.x0 >= 3 ? Box{0, 0, 2, 2} : Box{30, 22, 32, 24};
    CorruptionSpec spec;
    spec.spurious.push_back({2, 3, spot});
    const CorruptedSequence cs = ApplyCorruptions(single, spec);
    CHECK(cs.ledger.at(3).fp == 1);
    CheckLedger(single, cs);
  }
  SUBCASE("erosion") {
    CorruptionSpec spec;
    spec.erosions.push_back({1, 0.25});
    const CorruptedSequence cs = ApplyCorruptions(single, spec);
    const double h = static_cast<double>(single.boxes[0][0].height());
    const double kept = h - std::floor(0.25 * h);
    CHECK(cs.ledger.at(2).iou_sum == doctest::Approx(10.0 * kept / h));
    CheckLedger(single, cs);
  }
  SUBCASE("heavy erosion turns matches into FP and FN") {
    CorruptionSpec spec;
    spec.erosions.push_back({1, 0.75});
    const CorruptedSequence cs = ApplyCorruptions(single, spec);
    CHECK(cs.ledger.at(2).tp == 0);
    CheckLedger(single, cs);
  }
  SUBCASE("conflicts and bad references are rejected") {
    CorruptionSpec spec;
    spec.id_switches = {{2, 1, 5}, {2, 1, 6}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.id_switches = {{2, 1, 5}};
    spec.dropouts = {{2, 1}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.dropouts = {{10, 1}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.dropouts = {{0, 4}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.erosions = {{1, 1.0}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.spurious = {{0, 1, {0, 0, 1, 1}}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
    spec = {};
    spec.spurious = {{0, 2, single.boxes[0][0]}};
    CHECK_THROWS_AS(ApplyCorruptions(single, spec), InvalidInput);
  }
}

TEST_CASE("mixed corruptions on several objects") {
  SynthConfig c;
  c.frames = 12;
  c.objects = 3;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    c.seed = seed;
    const SynthSequence s = GenerateSequence(c);
    CorruptionSpec spec;
    spec.id_switches = {{3, 1, 10}, {7, 1, 11}, {5, 2, 12}};
    spec.dropouts = {{4, 3}, {6, 1}};
    spec.erosions = {{2, 0.3}};
    CheckLedger(s, ApplyCorruptions(s, spec));
  }
}
