// SPDX-License-Identifier: Apache-2.0
#include <numeric>

#include "support.hpp"

namespace syncref {
namespace {

using namespace syncref::testing;
using simkernel::Accumulation;
using simkernel::KernelOptions;
using simkernel::TopKResult;

/// Reference ranking: every score computed by the scalar chain, full sort.
TopKResult full_sort(std::span<const float> q, const EmbeddingMatrix& pool, std::size_t k,
                     Accumulation acc = Accumulation::f32) {
  std::vector<double> s(pool.rows());
  for (std::size_t j = 0; j < pool.rows(); ++j) s[j] = simkernel::dot(q, pool.row(j), acc);
  std::vector<RowIndex> order(pool.rows());
  std::iota(order.begin(), order.end(), RowIndex{0});
  std::sort(order.begin(), order.end(), [&](RowIndex a, RowIndex b) {
    return s[a] > s[b] || (s[a] == s[b] && a < b);
  });
  TopKResult r;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    r.indices.push_back(order[i]);
    r.scores.push_back(s[order[i]]);
  }
  return r;
}

/// Pool with exact duplicate rows so that ties are guaranteed.
EmbeddingMatrix pool_with_ties(std::mt19937_64& rng, std::size_t n, std::uint32_t d) {
  const auto base = random_matrix(rng, std::max<std::size_t>(1, n / 4), d, true);
  std::vector<float> data;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = base.row(rng() % base.rows());
    data.insert(data.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(n, d, std::move(data), true, ids("p", n));
}

TEST(Cosine, Examples) {
  const std::vector<float> e0{1, 0}, e1{0, 1}, a{3, 4}, b{4, 3};
  EXPECT_DOUBLE_EQ(simkernel::cosine(e0, e0), 1.0);
  EXPECT_DOUBLE_EQ(simkernel::cosine(e0, e1), 0.0);
  EXPECT_NEAR(simkernel::cosine(a, b), 0.96, 1e-7);
  EXPECT_NEAR(simkernel::cosine(a, b, false, Accumulation::f64), 0.96, 1e-12);
}

TEST(Cosine, Errors) {
  const std::vector<float> a{1, 0}, b{1, 0, 0}, z{0, 0};
  EXPECT_EQ(error_kind([&] { simkernel::cosine(a, b); }), ErrorKind::dimension_mismatch);
  EXPECT_EQ(error_kind([&] { simkernel::cosine(a, z); }), ErrorKind::degenerate_input);
}

TEST(Cosine, StaysInUnitInterval) {
  std::mt19937_64 rng(3);
  const auto m = random_matrix(rng, 50, 17, true);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.rows(); ++j) {
      const double c = simkernel::cosine(m.row(i), m.row(j), true);
      EXPECT_LE(c, 1.0);
      EXPECT_GE(c, -1.0);
    }
  }
}

TEST(TopK, SmallExamples) {
  const auto pool = matrix({{1, 0}, {0, 1}, {0.6f, 0.8f}}, true);
  const auto q = matrix({{1, 0}}, true);
  const auto r = simkernel::topk(q, pool, 2).front();
  EXPECT_EQ(r.indices, (std::vector<RowIndex>{0, 2}));
  EXPECT_DOUBLE_EQ(r.scores[0], 1.0);
  EXPECT_NEAR(r.scores[1], 0.6, 1e-7);

  const auto twins = matrix({{1, 0}, {1, 0}}, true);
  EXPECT_EQ(simkernel::topk(q, twins, 1).front().indices, (std::vector<RowIndex>{0}));

  const auto all = simkernel::topk(q, pool, 5).front();
  EXPECT_EQ(all.indices, (std::vector<RowIndex>{0, 2, 1}));
}

TEST(TopK, RejectsBadInputs) {
  const auto pool = matrix({{1, 0}}, true);
  const auto q3 = matrix({{1, 0, 0}}, true);
  EXPECT_EQ(error_kind([&] { simkernel::topk(pool, pool, 0); }), ErrorKind::invalid_config);
  EXPECT_EQ(error_kind([&] { simkernel::topk(q3, pool, 1); }), ErrorKind::dimension_mismatch);
  const EmbeddingMatrix empty(0, 2, {}, true, {});
  EXPECT_EQ(error_kind([&] { simkernel::topk(pool, empty, 1); }), ErrorKind::empty_pool);
  EXPECT_TRUE(simkernel::topk(empty, pool, 1).empty());
}

TEST(TopK, MatchesFullSortIncludingTies) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 400;
    const auto d = static_cast<std::uint32_t>(1 + rng() % 64);
    const auto pool = trial % 3 == 0 ? pool_with_ties(rng, n, d) : random_matrix(rng, n, d, true);
    const auto queries = random_matrix(rng, 1 + rng() % 40, d, true);
    const std::size_t k = 1 + rng() % 20;
    const auto acc = trial % 4 == 1 ? Accumulation::f64 : Accumulation::f32;
    const auto got = simkernel::topk(queries, pool, k, {1, 128, acc});
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      ASSERT_EQ(got[q], full_sort(queries.row(q), pool, k, acc)) << "trial " << trial;
    }
  }
}

TEST(TopK, ScoresNonIncreasingAndIndicesDistinct) {
  std::mt19937_64 rng(8);
  const auto pool = pool_with_ties(rng, 300, 9);
  const auto queries = random_matrix(rng, 30, 9, true);
  for (const auto& r : simkernel::topk(queries, pool, 25)) {
    ASSERT_EQ(r.size(), 25u);
    for (std::size_t i = 1; i < r.size(); ++i) {
      EXPECT_TRUE(r.scores[i - 1] > r.scores[i] ||
                  (r.scores[i - 1] == r.scores[i] && r.indices[i - 1] < r.indices[i]));
    }
    auto sorted = r.indices;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  }
}

TEST(TopK, SmallerKIsPrefix) {
  std::mt19937_64 rng(9);
  const auto pool = pool_with_ties(rng, 500, 16);
  const auto queries = random_matrix(rng, 20, 16, true);
  const auto big = simkernel::topk(queries, pool, 40);
  for (std::size_t k : {1, 5, 15, 39}) {
    const auto small = simkernel::topk(queries, pool, k);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      EXPECT_TRUE(std::equal(small[q].indices.begin(), small[q].indices.end(),
                             big[q].indices.begin()));
    }
  }
}

TEST(TopK, PositiveRescalingKeepsRanking) {
  std::mt19937_64 rng(10);
  const auto pool = random_matrix(rng, 200, 12, true);
  const auto queries = random_matrix(rng, 10, 12, true);
  std::vector<float> scaled(pool.data().begin(), pool.data().end());
  std::uniform_real_distribution<float> factor(0.1f, 10.0f);
  for (std::size_t i = 0; i < pool.rows(); ++i) {
    const float f = factor(rng);
    for (std::size_t k = 0; k < 12; ++k) scaled[i * 12 + k] *= f;
  }
  const auto renorm = EmbeddingMatrix(200, 12, scaled, false, ids("r", 200)).normalized_copy();
  const auto a = simkernel::topk(queries, pool, 10, {1, 128, Accumulation::f64});
  const auto b = simkernel::topk(queries, renorm, 10, {1, 128, Accumulation::f64});
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    // Renormalizing perturbs scores by an ulp or two; compare index sets
    // for rows whose neighbours are separated by more than that.
    for (std::size_t i = 0; i < 10; ++i) {
      const bool separated =
          (i == 0 || a[q].scores[i - 1] - a[q].scores[i] > 1e-6) &&
          (i + 1 == 10 || a[q].scores[i] - a[q].scores[i + 1] > 1e-6);
      if (separated) EXPECT_EQ(a[q].indices[i], b[q].indices[i]);
    }
  }
}

TEST(TopK, IndependentOfWorkersAndBlockSize) {
  std::mt19937_64 rng(12);
  const auto pool = pool_with_ties(rng, 700, 24);
  const auto queries = random_matrix(rng, 300, 24, true);
  const auto ref = simkernel::topk(queries, pool, 15);
  for (std::size_t workers : {1, 2, 8}) {
    for (std::size_t block : {1, 8, 64, 1000}) {
      EXPECT_EQ(simkernel::topk(queries, pool, 15, {workers, block, Accumulation::f32}), ref)
          << workers << " workers, block " << block;
    }
  }
}

TEST(Bidirectional, ColumnsMatchTransposedRetrieval) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = static_cast<std::uint32_t>(1 + rng() % 40);
    const auto text = trial % 2 ? pool_with_ties(rng, 1 + rng() % 300, d)
                                : random_matrix(rng, 1 + rng() % 300, d, true);
    const auto images = random_matrix(rng, 1 + rng() % 300, d, true);
    const std::size_t k = 1 + rng() % 16, k_r = 1 + rng() % 4;
    const auto both = simkernel::topk_bidirectional(text.view(), images.view(), k, k_r,
                                                    {1 + rng() % 4, 16, Accumulation::f32});
    EXPECT_EQ(both.rows, simkernel::topk(text, images, k));
    EXPECT_EQ(both.cols, simkernel::topk(images, text, k_r)) << "trial " << trial;
  }
}

TEST(ScorePairs, Examples) {
  std::mt19937_64 rng(14);
  const auto a = random_matrix(rng, 20, 7, true);
  const std::vector<RowIndex> zero{0};
  EXPECT_NEAR(simkernel::score_pairs(zero, a, zero, a).front(), 1.0, 1e-6);
  EXPECT_TRUE(simkernel::score_pairs({}, a, {}, a).empty());

  const auto b = random_matrix(rng, 20, 7, true);
  std::vector<RowIndex> ra, rb;
  for (int i = 0; i < 10; ++i) {
    ra.push_back(static_cast<RowIndex>(rng() % 20));
    rb.push_back(static_cast<RowIndex>(rng() % 20));
  }
  const auto got = simkernel::score_pairs(ra, a, rb, b);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < 7; ++k) {
      const double x = a.row(ra[i])[k], y = b.row(rb[i])[k];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    EXPECT_NEAR(got[i], dot / std::sqrt(na * nb), 1e-6);
  }
  const std::vector<RowIndex> one{1}, bad{20};
  EXPECT_EQ(error_kind([&] { simkernel::score_pairs(ra, a, one, b); }),
            ErrorKind::length_mismatch);
  EXPECT_EQ(error_kind([&] { simkernel::score_pairs(bad, a, one, b); }),
            ErrorKind::index_out_of_range);
}

TEST(Microkernel, FloatFloorNeverExceedsInput) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    const float f = simkernel::detail::float_floor(x);
    EXPECT_LE(static_cast<double>(f), x);
    EXPECT_GT(static_cast<double>(std::nextafter(f, INFINITY)), x);
  }
}

}  // namespace
}  // namespace syncref
