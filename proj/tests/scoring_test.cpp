// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

namespace syncref {
namespace {

using namespace syncref::testing;

// Image 0 retrieves captions {0, 2} at K_r = 2; caption 1 has sentence
// similarity 0.8 to caption 0 and 0.5 to caption 2.
DatasetBundle retrieval_fixture() {
  const float s = std::sqrt(0.75f);
  return bundle({{1, 0}, {0, 1}, {0.9f, 0.43588989f}},
                {{1, 0}, {0, 1}, {0.6f, 0.8f}},
                {{0.8f, 0.6f, 0}, {1, 0, 0}, {0.5f, s, 0}});
}

DatasetBundle random_bundle(std::uint64_t seed, std::size_t n, std::size_t m,
                            std::uint32_t d = 8, std::uint32_t ds = 6) {
  std::mt19937_64 rng(seed);
  return make_bundle(corpus(n), random_matrix(rng, n, d, true, "cap_"),
                     random_matrix(rng, m, d, true, "img_"),
                     random_matrix(rng, n, ds, true, "cap_"));
}

double scalar_cos(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += double{a[k]} * b[k];
    na += double{a[k]} * a[k];
    nb += double{b[k]} * b[k];
  }
  return dot / std::sqrt(na * nb);
}

TEST(ScoreCos, Fixtures) {
  const auto b = bundle({{1, 0}, {0, 1}}, {{1, 0}, {1, 0}}, {{1}, {1}});
  EXPECT_DOUBLE_EQ(score_cos(b, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(score_cos(b, 1, 1), 0.0);

  const auto r = random_bundle(1, 30, 30);
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = 0; j < 30; j += 7) {
      const double s = score_cos(r, j, i);
      EXPECT_NEAR(s, scalar_cos(r.image_vlm.row(j), r.text_vlm.row(i)), 1e-6);
      EXPECT_LE(std::abs(s), 1.0);
    }
  }
  EXPECT_EQ(error_kind([&] { score_cos(b, 2, 0); }), ErrorKind::index_out_of_range);
  EXPECT_EQ(error_kind([&] { score_cos(b, 0, 2); }), ErrorKind::index_out_of_range);
}

TEST(ScoreRet, BestRetrievedSentenceSimilarity) {
  const auto b = retrieval_fixture();
  EXPECT_NEAR(score_ret(b, 0, 1, 2), 0.8, 1e-7);
  EXPECT_NEAR(score_ret(b, 0, 1, 1), 0.8, 1e-7);
}

TEST(ScoreRet, SelfHitIsExactlyOne) {
  const auto b = retrieval_fixture();
  EXPECT_EQ(score_ret(b, 0, 0, 1), 1.0);
  EXPECT_EQ(score_ret(b, 0, 1, 3), 1.0);
  const auto r = random_bundle(2, 25, 25);
  for (std::size_t img = 0; img < 25; ++img) {
    for (std::size_t cap = 0; cap < 25; ++cap) EXPECT_EQ(score_ret(r, img, cap, 25), 1.0);
  }
}

TEST(ScoreRet, NonDecreasingInRetrievalDepth) {
  const auto r = random_bundle(3, 60, 60);
  for (std::size_t img = 0; img < 60; img += 3) {
    for (std::size_t cap = 0; cap < 60; cap += 5) {
      double prev = -2.0;
      for (std::size_t k_r : {1, 2, 5, 10}) {
        const double s = score_ret(r, img, cap, k_r);
        EXPECT_GE(s, prev);
        EXPECT_LE(std::abs(s), 1.0);
        prev = s;
      }
    }
  }
}

TEST(ScoreRet, MatchesEnumerateAndMax) {
  const auto r = random_bundle(4, 50, 70);
  for (std::size_t img = 0; img < 70; img += 4) {
    std::vector<std::pair<double, RowIndex>> ranked;
    for (RowIndex j = 0; j < 50; ++j) {
      ranked.push_back({simkernel::dot(r.image_vlm.row(img), r.text_vlm.row(j)), j});
    }
    std::sort(ranked.begin(), ranked.end(), [](auto a, auto b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (std::size_t cap = 0; cap < 50; cap += 3) {
      double best = -1.0;
      for (std::size_t t = 0; t < 3; ++t) {
        const RowIndex hit = ranked[t].second;
        best = std::max(best, hit == cap ? 1.0
                                         : scalar_cos(r.text_sent.row(hit),
                                                      r.text_sent.row(cap)));
      }
      EXPECT_NEAR(score_ret(r, img, cap, 3), best, 1e-6);
    }
  }
}

TEST(RetrievalCache, AgreesWithOnDemandScoring) {
  const auto r = random_bundle(5, 40, 55);
  const std::vector<RowIndex> images{0, 3, 7, 54};
  const auto cache = RetrievalCache::build(r, images, 2, {});
  const AlignmentScorer cached(r, {ScorerKind::ret, 1.0, 2}, {}, &cache);
  const AlignmentScorer direct(r, {ScorerKind::ret, 1.0, 2});
  EXPECT_TRUE(cache.contains(7));
  EXPECT_FALSE(cache.contains(8));
  for (RowIndex img = 0; img < 55; ++img) {
    for (std::size_t cap = 0; cap < 40; cap += 9) {
      EXPECT_EQ(cached(img, cap), direct(img, cap));
    }
  }
}

TEST(ScoreCandidates, PicksTheMaximum) {
  const float s3 = std::sqrt(0.91f), s9 = std::sqrt(0.19f);
  const auto b = bundle({{1, 0}}, {{0.3f, s3}, {0.9f, s9}}, {{1}});
  const AlignmentScorer cos(b, {ScorerKind::cos, 1.0, 2});

  const auto single = score_candidates({0, {0}}, cos);
  EXPECT_EQ(single.image_index, 0u);
  EXPECT_NEAR(single.score, 0.3, 1e-7);

  const auto two = score_candidates({0, {0, 1}}, cos);
  EXPECT_EQ(two.image_index, 1u);
  EXPECT_NEAR(two.score, 0.9, 1e-7);

  EXPECT_EQ(error_kind([&] { score_candidates({0, {}}, cos); }), ErrorKind::invalid_config);
}

TEST(ScoreCandidates, TiesGoToTheEarlierRank) {
  const auto b = bundle({{1, 0}}, {{0.6f, 0.8f}, {0.6f, 0.8f}, {0.6f, -0.8f}}, {{1}});
  const AlignmentScorer cos(b, {ScorerKind::cos, 1.0, 2});
  EXPECT_EQ(score_candidates({0, {2, 1, 0}}, cos).image_index, 2u);
  EXPECT_EQ(score_candidates({0, {1, 0}}, cos).image_index, 1u);
}

TEST(ScoreCandidates, FifteenCandidatesMatchExhaustiveLoop) {
  const auto r = random_bundle(6, 30, 200);
  for (auto kind : {ScorerKind::cos, ScorerKind::ret}) {
    const ScorerConfig config{kind, 1.0, 2};
    const AlignmentScorer scorer(r, config);
    for (const auto& cand : select_all(r, {SelectionKind::t2i, 15})) {
      ASSERT_EQ(cand.image_indices.size(), 15u);
      RowIndex best_image = cand.image_indices[0];
      double best = scorer(best_image, cand.caption_index);
      for (RowIndex img : cand.image_indices) {
        const double s = scorer(img, cand.caption_index);
        if (s > best) best = s, best_image = img;
      }
      const auto got = score_candidates(r, cand, config);
      EXPECT_EQ(got.image_index, best_image);
      EXPECT_EQ(got.score, best);
    }
  }
}

TEST(ScoreCandidates, SupersetNeverScoresLower) {
  const auto r = random_bundle(7, 40, 120);
  for (auto kind : {ScorerKind::cos, ScorerKind::ret}) {
    const AlignmentScorer scorer(r, {kind, 1.0, 2});
    const auto big = select_all(r, {SelectionKind::t2i, 20});
    for (const auto& c : big) {
      CandidateSet prefix{c.caption_index, {c.image_indices.begin(), c.image_indices.begin() + 6}};
      EXPECT_GE(score_candidates(c, scorer).score, score_candidates(prefix, scorer).score);
    }
  }
}

TEST(ScorerConfig, Validation) {
  EXPECT_NO_THROW((ScorerConfig{ScorerKind::ret, 1.0, 1}.validate()));
  EXPECT_EQ(error_kind([] { ScorerConfig{ScorerKind::ret, 1.0, 0}.validate(); }),
            ErrorKind::invalid_config);
  EXPECT_EQ(error_kind([] { ScorerConfig{ScorerKind::cos, 2.0, 2}.validate(); }),
            ErrorKind::invalid_config);
  EXPECT_EQ(parse_scorer_kind("ret"), ScorerKind::ret);
  EXPECT_EQ(parse_scorer_kind("cos"), ScorerKind::cos);
  EXPECT_FALSE(parse_scorer_kind("clip").has_value());
}

}  // namespace
}  // namespace syncref
