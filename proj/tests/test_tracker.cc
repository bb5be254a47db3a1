#include <random>
#include <set>

#include "doctest.h"
#include "mopt/oracle.h"
#include "mopt/tracker.h"

using namespace mopt;

namespace {

InstanceCandidate Cand(ClassId c, double score, std::vector<float> embedding) {
  InstanceCandidate k;
  k.class_id = c;
  k.score = score;
  k.box = {0, 0, 1, 1};
  k.embedding = std::move(embedding);
  return k;
}

}  // namespace

TEST_CASE("cost matrix") {
  TrackerState state;
  state.Record(1, {0, {0.0f, 0.0f}, 3});
  state.Record(2, {0, {1.0f, 1.0f}, 4});
  const std::vector<TrackId> tracks{1, 2};

  SUBCASE("distances and class gating") {
    const std::vector<InstanceCandidate> cands{Cand(3, 0.9, {0.0f, 0.0f}),
                                               Cand(3, 0.9, {3.0f, 4.0f})};
    const CostMatrix m = BuildCostMatrix(cands, tracks, state, {});
    CHECK(m.at(0, 0) == 0.0);
    CHECK(m.at(1, 0) == 5.0);
    CHECK(m.is_allowed(0, 0));
    CHECK_FALSE(m.is_allowed(0, 1));
    CHECK_FALSE(m.is_allowed(1, 1));
  }
  SUBCASE("distance gate") {
    TrackerConfig config;
    config.max_distance = 4.0;
    const std::vector<InstanceCandidate> cands{Cand(3, 0.9, {3.0f, 4.0f})};
    CHECK_FALSE(BuildCostMatrix(cands, tracks, state, config).is_allowed(0, 0));
  }
  SUBCASE("latest observation represents the track") {
    state.Record(1, {1, {3.0f, 4.0f}, 3});
    const std::vector<InstanceCandidate> cands{Cand(3, 0.9, {3.0f, 4.0f})};
    CHECK(BuildCostMatrix(cands, tracks, state, {}).at(0, 0) == 0.0);
  }
  SUBCASE("dimension mismatch") {
    const std::vector<InstanceCandidate> cands{Cand(3, 0.9, {1.0f})};
    CHECK_THROWS_AS(BuildCostMatrix(cands, tracks, state, {}), InvalidInput);
  }
}

TEST_CASE("hungarian assignment") {
  SUBCASE("single pairing") {
    CostMatrix m(1, 1);
    m.at(0, 0) = 4.0;
    const Assignment a = HungarianAssign(m);
    CHECK(a.assigned == 1);
    CHECK(a.row_to_col[0] == 0u);
    CHECK(a.total_cost == 4.0);
  }
  SUBCASE("diagonal") {
    CostMatrix m(2, 2);
    m.cost = {1.0, 2.0, 2.0, 1.0};
    const Assignment a = HungarianAssign(m);
    CHECK(a.total_cost == 2.0);
    CHECK(a.row_to_col[0] == 0u);
    CHECK(a.row_to_col[1] == 1u);
  }
  SUBCASE("forbidden entries stay unassigned") {
    CostMatrix m(2, 2);
    m.cost = {1.0, 1.0, 1.0, 1.0};
    m.forbid(1, 0);
    m.forbid(1, 1);
    const Assignment a = HungarianAssign(m);
    CHECK(a.assigned == 1);
    CHECK_FALSE(a.row_to_col[1].has_value());
  }
  SUBCASE("more pairs beat a cheaper partial assignment") {
    CostMatrix m(2, 2);
    m.cost = {0.0, 5.0, 5.0, 100.0};
    m.forbid(1, 1);
    const Assignment a = HungarianAssign(m);
    CHECK(a.assigned == 2);
    CHECK(a.total_cost == 10.0);
  }
  SUBCASE("rectangular and empty") {
    CostMatrix wide(1, 3);
    wide.cost = {3.0, 1.0, 2.0};
    CHECK(HungarianAssign(wide).row_to_col[0] == 1u);
    CostMatrix tall(3, 1);
    tall.cost = {3.0, 1.0, 2.0};
    const Assignment a = HungarianAssign(tall);
    CHECK(a.assigned == 1);
    CHECK(a.row_to_col[1] == 0u);
    CHECK(HungarianAssign(CostMatrix(0, 4)).assigned == 0);
    CHECK(HungarianAssign(CostMatrix(2, 0)).row_to_col.size() == 2);
  }
  SUBCASE("matches exhaustive search") {
    std::mt19937 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      CostMatrix m(1 + rng() % 6, 1 + rng() % 6);
      for (std::size_t k = 0; k < m.cost.size(); ++k) {
        m.cost[k] = (rng() % 1000) / 10.0;
        if (rng() % 3 == 0) m.allowed[k] = 0;
      }
      const Assignment a = HungarianAssign(m);
      const oracle::ExhaustiveResult e = oracle::ExhaustiveAssignment(m);
      CHECK(a.assigned == e.assigned);
      CHECK(a.total_cost == doctest::Approx(e.total_cost).epsilon(1e-12));
    }
  }
}

TEST_CASE("associate frame") {
  TrackerConfig config;

  SUBCASE("genesis") {
    TrackerState state;
    std::vector<InstanceCandidate> c{Cand(3, 0.9, {1.0f, 0.0f})};
    CHECK(AssociateFrame(state, c, 0, config) == 1);
    CHECK(c[0].track_id == 1);
  }
  SUBCASE("re-seen candidate keeps its track") {
    TrackerState state;
    std::vector<InstanceCandidate> a{Cand(3, 0.9, {1.0f, 0.0f}),
                                     Cand(3, 0.9, {0.0f, 1.0f})};
    AssociateFrame(state, a, 0, config);
    std::vector<InstanceCandidate> b{Cand(3, 0.9, {0.0f, 1.0f}),
                                     Cand(3, 0.9, {1.0f, 0.0f})};
    CHECK(AssociateFrame(state, b, 1, config) == 0);
    CHECK(b[0].track_id == a[1].track_id);
    CHECK(b[1].track_id == a[0].track_id);
  }
  SUBCASE("window boundary") {
    TrackerState state;
    std::vector<InstanceCandidate> first{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, first, 0, config);
    std::vector<InstanceCandidate> at_window{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, at_window, 3, config);
    CHECK(at_window[0].track_id == 1);

    TrackerState other;
    std::vector<InstanceCandidate> seen{Cand(3, 0.9, {1.0f})};
    AssociateFrame(other, seen, 0, config);
    std::vector<InstanceCandidate> late{Cand(3, 0.9, {1.0f})};
    CHECK(AssociateFrame(other, late, 4, config) == 1);
    CHECK(late[0].track_id == 2);
  }
  SUBCASE("low scores are not tracked") {
    TrackerState state;
    std::vector<InstanceCandidate> c{Cand(3, 0.5, {1.0f}), Cand(3, 0.2, {1.0f})};
    c[0].track_id = 9;
    CHECK(AssociateFrame(state, c, 0, config) == 0);
    CHECK(c[0].track_id == kNoTrack);
    CHECK(c[1].track_id == kNoTrack);
    CHECK(state.tracks().empty());
  }
  SUBCASE("classes never share a track") {
    TrackerState state;
    std::vector<InstanceCandidate> a{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, a, 0, config);
    std::vector<InstanceCandidate> b{Cand(4, 0.9, {1.0f})};
    AssociateFrame(state, b, 1, config);
    CHECK(b[0].track_id != a[0].track_id);
  }
  SUBCASE("ids are never reused") {
    TrackerState state;
    std::set<TrackId> issued;
    for (FrameIndex f = 0; f < 20; f += 5) {
      std::vector<InstanceCandidate> c{Cand(3, 0.9, {static_cast<float>(f)})};
      AssociateFrame(state, c, f, config);
      CHECK(issued.insert(c[0].track_id).second);
    }
  }
  SUBCASE("frames must increase") {
    TrackerState state;
    std::vector<InstanceCandidate> c{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, c, 2, config);
    CHECK_THROWS_AS(AssociateFrame(state, c, 2, config), InvalidInput);
  }
  SUBCASE("dimension changes are rejected") {
    TrackerState state;
    std::vector<InstanceCandidate> a{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, a, 0, config);
    std::vector<InstanceCandidate> b{Cand(3, 0.9, {1.0f, 2.0f})};
    CHECK_THROWS_AS(AssociateFrame(state, b, 1, config), InvalidInput);
  }
  SUBCASE("old observations are pruned") {
    TrackerState state;
    std::vector<InstanceCandidate> a{Cand(3, 0.9, {1.0f})};
    AssociateFrame(state, a, 0, config);
    std::vector<InstanceCandidate> b{Cand(3, 0.9, {5.0f})};
    AssociateFrame(state, b, 10, config);
    CHECK(state.tracks().count(1) == 0);
  }
}

TEST_CASE("batch-hard triplet loss") {
  SUBCASE("identical embeddings") {
    const std::vector<EmbeddingSample> s{{{0.5f, 0.5f}, 3, 1}, {{0.5f, 0.5f}, 3, 1},
                                         {{0.5f, 0.5f}, 3, 2}, {{0.5f, 0.5f}, 3, 2}};
    CHECK(BatchHardTripletLoss(s, 0.2) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("separated tracks") {
    const std::vector<EmbeddingSample> s{{{0.0f}, 3, 1}, {{0.0f}, 3, 1},
                                         {{1.0f}, 3, 2}, {{1.0f}, 3, 2}};
    CHECK(BatchHardTripletLoss(s, 0.2) == 0.0);
  }
  SUBCASE("one-dimensional worked case") {
    const std::vector<EmbeddingSample> s{{{0.0f}, 3, 1}, {{0.1f}, 3, 1}, {{1.0f}, 3, 2}};
    CHECK(BatchHardTripletLoss(s, 0.2) == 0.0);
  }
  SUBCASE("anchors without negatives contribute zero") {
    const std::vector<EmbeddingSample> s{{{0.0f}, 3, 1}, {{0.0f}, 4, 2}};
    CHECK(BatchHardTripletLoss(s, 0.2) == 0.0);
  }
  SUBCASE("empty input") {
    CHECK_THROWS_AS(BatchHardTripletLoss({}, 0.2), InvalidInput);
  }
  SUBCASE("matches the all-pairs oracle") {
    std::mt19937 rng(17);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<EmbeddingSample> s(1 + rng() % 15);
      for (EmbeddingSample& e : s) {
        e.class_id = static_cast<ClassId>(1 + rng() % 2);
        e.track_id = static_cast<TrackId>(1 + rng() % 4);
        e.embedding.resize(3);
        for (float& v : e.embedding) v = g(rng);
      }
      const double loss = BatchHardTripletLoss(s, 0.2);
      CHECK(loss >= 0.0);
      CHECK(loss == doctest::Approx(oracle::NaiveTripletLoss(s, 0.2)).epsilon(1e-12));
    }
  }
}
