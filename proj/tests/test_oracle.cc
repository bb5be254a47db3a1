#include "doctest.h"
#include "mopt/oracle.h"
#include "mopt/synth.h"
#include "test_util.h"

using namespace mopt;
using mopt::testing::Grid;
using mopt::testing::StreetTaxonomy;

TEST_CASE("naive overlap") {
  const FrameLabeling f = Grid(2, 2, {{1, 0}, {1, 0}, {3, 1}, {3, 2}});
  const OverlapTable t = oracle::NaiveOverlap(f, f, 0);
  CHECK(t.intersections.size() == 3);
  for (const auto& [pair, count] : t.intersections) {
    CHECK(pair.first == pair.second);
    CHECK(count == t.pred_area.at(pair.first));
  }
  const FrameLabeling g = Grid(2, 2, {{1, 0}, {1, 0}, {1, 0}, {1, 0}});
  CHECK(oracle::NaiveOverlap(f, g, 0).intersection({3, 1}, {3, 1}) == 0);
  CHECK_THROWS_AS(oracle::NaiveOverlap(f, Grid(1, 1, {{1, 0}}), 0), InvalidInput);
}

TEST_CASE("naive evaluate") {
  const ClassTaxonomy tax = StreetTaxonomy();
  SUBCASE("perfect single frame") {
    const std::vector<FrameLabeling> f{Grid(2, 1, {{1, 0}, {3, 1}})};
    const MetricReport r = oracle::NaiveEvaluate(f, f, tax);
    CHECK(r.sptq == 1.0);
    CHECK(r.ptq == 1.0);
    CHECK(r.pq == 1.0);
    CHECK(r.smotsa == 1.0);
    CHECK(r.motsp == 1.0);
  }
  SUBCASE("ledgered switch scenario") {
    SynthConfig c;
    c.objects = 1;
    c.width = 24;
    c.height = 16;
    const SynthSequence s = GenerateSequence(c);
    CorruptionSpec spec;
    spec.id_switches.push_back({5, 1, 4});
    const CorruptedSequence cs = ApplyCorruptions(s, spec);
    const MetricReport r = oracle::NaiveEvaluate(cs.pred, s.gt, s.taxonomy);
    CHECK(r.find(2)->sptq == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("size caps") {
    const std::vector<FrameLabeling> big{
        FrameLabeling::Filled(FrameShape::Grid(65, 65), {1, 0})};
    CHECK_THROWS_AS(oracle::NaiveEvaluate(big, big, tax), InvalidInput);
    const std::vector<FrameLabeling> many(65, Grid(1, 1, {{1, 0}}));
    CHECK_THROWS_AS(oracle::NaiveEvaluate(many, many, tax), InvalidInput);
  }
}

TEST_CASE("unique matching check") {
  SplitMix64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const oracle::RandomCase rc = oracle::MakeRandomCase(rng, 12, 2, 4);
    for (std::size_t f = 0; f < rc.gt.size(); ++f) {
      CHECK(oracle::CheckUniqueMatching(rc.pred[f], rc.gt[f], 0));
    }
  }
  SynthConfig c;
  c.objects = 3;
  const SynthSequence s = GenerateSequence(c);
  for (const FrameLabeling& f : s.gt) CHECK(oracle::CheckUniqueMatching(f, f, 0));
}

TEST_CASE("exhaustive assignment") {
  CostMatrix one(1, 1);
  one.at(0, 0) = 3.0;
  CHECK(oracle::ExhaustiveAssignment(one).total_cost == 3.0);

  CostMatrix diag(2, 2);
  diag.cost = {1.0, 2.0, 2.0, 1.0};
  CHECK(oracle::ExhaustiveAssignment(diag).total_cost == 2.0);
  CHECK(oracle::ExhaustiveAssignment(diag).assigned == 2);

  CostMatrix forbidden(2, 2);
  forbidden.cost = {0.0, 5.0, 5.0, 100.0};
  forbidden.forbid(1, 1);
  CHECK(oracle::ExhaustiveAssignment(forbidden).assigned == 2);
  CHECK(oracle::ExhaustiveAssignment(forbidden).total_cost == 10.0);

  CHECK_THROWS_AS(oracle::ExhaustiveAssignment(CostMatrix(7, 2)), InvalidInput);
}

TEST_CASE("naive triplet loss worked examples") {
  const std::vector<EmbeddingSample> same{{{0.0f}, 1, 1}, {{0.0f}, 1, 2}};
  CHECK(oracle::NaiveTripletLoss(same, 0.2) == doctest::Approx(0.2));
  const std::vector<EmbeddingSample> apart{{{0.0f}, 1, 1}, {{0.1f}, 1, 1}, {{1.0f}, 1, 2}};
  CHECK(oracle::NaiveTripletLoss(apart, 0.2) == 0.0);
  CHECK_THROWS_AS(oracle::NaiveTripletLoss({}, 0.2), InvalidInput);
}

TEST_CASE("random cases are valid and varied") {
  SplitMix64 rng(7);
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t ids = 0;
  for (int i = 0; i < 100; ++i) {
    const oracle::RandomCase rc = oracle::MakeRandomCase(rng, 32, 5, 4);
    CHECK(rc.taxonomy.supports_panoptic_tracking());
    CHECK(rc.gt.size() <= 5);
    for (std::size_t f = 0; f < rc.gt.size(); ++f) {
      CHECK(ValidateFrame(rc.gt[f], rc.taxonomy).ok());
      CHECK(ValidateFrame(rc.pred[f], rc.taxonomy).ok());
    }
    const MetricReport r = oracle::NaiveEvaluate(rc.pred, rc.gt, rc.taxonomy);
    for (const ClassMetrics& m : r.per_class) {
      tp += m.counts.tp;
      fp += m.counts.fp;
      ids += m.counts.ids;
    }
  }
  CHECK(tp > 0);
  CHECK(fp > 0);
  CHECK(ids > 0);
}

TEST_CASE("report comparison") {
  MetricReport a;
  a.per_class.push_back({});
  a.per_class[0].class_id = 3;
  a.per_class[0].pq = 0.5;
  MetricReport b = a;
  CHECK(oracle::CompareReports(a, b, 1e-12).empty());
  b.per_class[0].pq = 0.5 + 1e-9;
  CHECK_FALSE(oracle::CompareReports(a, b, 1e-12).empty());
  b = a;
  b.per_class[0].counts.fp = 1;
  CHECK_FALSE(oracle::CompareReports(a, b, 1e-12).empty());
}
