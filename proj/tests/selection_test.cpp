// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

namespace syncref {
namespace {

using namespace syncref::testing;

constexpr SelectionKind kAllKinds[] = {SelectionKind::one, SelectionKind::t2i,
                                       SelectionKind::t2t, SelectionKind::i2t,
                                       SelectionKind::i2i};

DatasetBundle random_bundle(std::uint64_t seed, std::size_t n, std::size_t m,
                            std::uint32_t d = 8) {
  std::mt19937_64 rng(seed);
  return make_bundle(corpus(n), random_matrix(rng, n, d, true, "cap_"),
                     random_matrix(rng, m, d, true, "img_"),
                     random_matrix(rng, n, d, true, "cap_"));
}

TEST(Selection, KindNamesRoundTrip) {
  for (auto kind : kAllKinds) EXPECT_EQ(parse_selection_kind(to_string(kind)), kind);
  EXPECT_FALSE(parse_selection_kind("t2x").has_value());
}

TEST(Selection, OneSelectsThePairedImage) {
  const auto b = random_bundle(1, 8, 8);
  const auto c = select(b, {SelectionKind::one, 15}, 5);
  EXPECT_EQ(c.caption_index, 5u);
  EXPECT_EQ(c.image_indices, (std::vector<RowIndex>{5}));

  const auto b3 = random_bundle(2, 3, 3);
  const auto all = select_all(b3, {SelectionKind::one, 1});
  ASSERT_EQ(all.size(), 3u);
  for (RowIndex i = 0; i < 3; ++i) EXPECT_EQ(all[i], (CandidateSet{i, {i}}));
}

TEST(Selection, TextToTextRetrievesItsOwnPairFirst) {
  const auto b = random_bundle(3, 40, 40);
  for (std::size_t k : {1, 3, 10}) {
    for (std::size_t i = 0; i < b.captions(); ++i) {
      EXPECT_EQ(select(b, {SelectionKind::t2t, k}, i).image_indices.front(), i);
      EXPECT_EQ(select(b, {SelectionKind::i2i, k}, i).image_indices.front(), i);
    }
  }
}

TEST(Selection, ZeroNoiseTextToImageFindsLatentMatch) {
  synthbench::BenchSpec spec;
  spec.n = 200;
  spec.sigma_text = 0.0;
  spec.sigma_image = 0.0;
  spec.seed = 4;
  const auto p = synthbench::generate(spec);
  const auto cands = select_all(p.bundle, {SelectionKind::t2i, 5});
  for (std::size_t i = 0; i < p.bundle.captions(); ++i) {
    if (!p.corrupted[i]) EXPECT_EQ(p.truth[cands[i].image_indices.front()], i) << i;
  }
}

TEST(Selection, FullPoolGivesPermutation) {
  const auto b = random_bundle(5, 12, 30);
  for (const auto& c : select_all(b, {SelectionKind::t2i, 30})) {
    auto sorted = c.image_indices;
    std::sort(sorted.begin(), sorted.end());
    std::vector<RowIndex> expected(30);
    std::iota(expected.begin(), expected.end(), RowIndex{0});
    EXPECT_EQ(sorted, expected);
  }
}

TEST(Selection, BatchEqualsPerQuery) {
  const auto paired = random_bundle(6, 60, 60);
  const auto wide = random_bundle(7, 60, 90);
  for (auto kind : kAllKinds) {
    const auto& b = kind == SelectionKind::t2i ? wide : paired;
    const SelectionStrategy s{kind, 7};
    const auto all = select_all(b, s, {3, 16, simkernel::Accumulation::f32});
    ASSERT_EQ(all.size(), b.captions());
    for (std::size_t i = 0; i < b.captions(); ++i) {
      EXPECT_EQ(all[i], select(b, s, i)) << to_string(kind) << " caption " << i;
    }
  }
}

TEST(Selection, CandidateSetInvariants) {
  const auto b = random_bundle(8, 50, 50);
  for (auto kind : kAllKinds) {
    for (std::size_t k : {1, 4, 15, 80}) {
      const SelectionStrategy s{kind, k};
      for (const auto& c : select_all(b, s)) {
        ASSERT_FALSE(c.image_indices.empty());
        EXPECT_LE(c.image_indices.size(), s.effective_k(b.images()));
        if (kind == SelectionKind::one) EXPECT_EQ(c.image_indices.size(), 1u);
        auto sorted = c.image_indices;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
        for (RowIndex img : c.image_indices) EXPECT_LT(img, b.images());
      }
    }
  }
}

TEST(Selection, TextToImageSetsAreNestedInK) {
  const auto b = random_bundle(9, 80, 120);
  const auto big = select_all(b, {SelectionKind::t2i, 15});
  for (std::size_t k : {1, 5}) {
    const auto small = select_all(b, {SelectionKind::t2i, k});
    for (std::size_t i = 0; i < b.captions(); ++i) {
      EXPECT_TRUE(std::equal(small[i].image_indices.begin(), small[i].image_indices.end(),
                             big[i].image_indices.begin()));
    }
  }
}

TEST(Selection, PairedStrategiesContainTheOneCandidate) {
  const auto b = random_bundle(10, 40, 40);
  for (auto kind : {SelectionKind::t2t, SelectionKind::i2i}) {
    for (const auto& c : select_all(b, {kind, 3})) {
      EXPECT_NE(std::find(c.image_indices.begin(), c.image_indices.end(), c.caption_index),
                c.image_indices.end());
    }
  }
}

TEST(Selection, Errors) {
  const auto unpaired = random_bundle(11, 5, 9);
  for (auto kind : {SelectionKind::one, SelectionKind::t2t, SelectionKind::i2t,
                    SelectionKind::i2i}) {
    EXPECT_EQ(error_kind([&] { select(unpaired, {kind, 2}, 0); }),
              ErrorKind::incompatible_strategy);
    EXPECT_EQ(error_kind([&] { select_all(unpaired, {kind, 2}); }),
              ErrorKind::incompatible_strategy);
  }
  EXPECT_NO_THROW(select(unpaired, {SelectionKind::t2i, 2}, 0));
  EXPECT_EQ(error_kind([&] { select(unpaired, {SelectionKind::t2i, 0}, 0); }),
            ErrorKind::invalid_config);
  EXPECT_EQ(error_kind([&] { select(unpaired, {SelectionKind::t2i, 2}, 5); }),
            ErrorKind::index_out_of_range);
}

}  // namespace
}  // namespace syncref
