#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "test_support.hpp"

namespace salted {
namespace {

SaltMapping modulo(std::uint32_t k, std::uint32_t s) { return {MappingId::Modulo, k, s}; }

// Cyclic shift by counting: start at y and step forward s times, wrapping.
std::size_t shift_by_counting(std::size_t k, std::size_t s, std::size_t y) {
  std::size_t pos = y;
  for (std::size_t i = 0; i < s; ++i) pos = pos + 1 == k ? 0 : pos + 1;
  return pos;
}

TEST(Mapping, DogMovesToFourthSlot) {
  // Classes {cat, dog, bird, ship}; dog is class 1.
  EXPECT_EQ(modulo(4, 4).map_label(2, 1), 3u);
}

TEST(Mapping, ZeroSaltIsIdentity) {
  for (std::uint32_t k : {2u, 5u, 17u}) {
    const auto m = modulo(k, k);
    for (std::size_t y = 0; y < k; ++y) {
      EXPECT_EQ(m.map_label(0, y), y);
      EXPECT_EQ(m.unmap_label(0, y), y);
    }
  }
}

TEST(Mapping, Wraparound) { EXPECT_EQ(modulo(10, 10).map_label(1, 9), 0u); }

TEST(Mapping, InverseOfDogExample) { EXPECT_EQ(modulo(4, 4).unmap_label(2, 3), 1u); }

TEST(Mapping, ExhaustiveTableForThirteen) {
  const auto m = modulo(13, 13);
  for (std::size_t s = 0; s < 13; ++s) {
    std::set<std::size_t> row;
    for (std::size_t y = 0; y < 13; ++y) {
      EXPECT_EQ(m.map_label(s, y), shift_by_counting(13, s, y)) << "s=" << s << " y=" << y;
      row.insert(m.map_label(s, y));
    }
    EXPECT_EQ(row.size(), 13u);
  }
}

TEST(Mapping, BijectiveForAllKUpToHundred) {
  for (std::uint32_t k = 2; k <= 100; ++k) {
    const auto m = modulo(k, k);
    for (std::size_t s = 0; s < k; ++s) {
      std::vector<bool> hit(k, false);
      for (std::size_t y = 0; y < k; ++y) {
        const std::size_t ys = m.map_label(s, y);
        ASSERT_LT(ys, k);
        ASSERT_FALSE(hit[ys]);
        hit[ys] = true;
        ASSERT_EQ(m.unmap_label(s, ys), y);
      }
    }
  }
}

TEST(Mapping, RoundTripListedSizes) {
  for (std::uint32_t k : {2u, 4u, 10u, 13u, 100u}) {
    const auto m = modulo(k, k);
    for (std::size_t s = 0; s < k; ++s)
      for (std::size_t y = 0; y < k; ++y) {
        ASSERT_EQ(m.unmap_label(s, m.map_label(s, y)), y);
        ASSERT_EQ(m.map_label(s, m.unmap_label(s, y)), y);
      }
  }
}

TEST(Mapping, MoreSaltsThanClassesStillBijective) {
  const auto m = modulo(3, 7);
  for (std::size_t s = 0; s < 7; ++s)
    for (std::size_t y = 0; y < 3; ++y) {
      EXPECT_EQ(m.map_label(s, y), shift_by_counting(3, s, y));
      EXPECT_EQ(m.unmap_label(s, m.map_label(s, y)), y);
    }
}

TEST(Mapping, RangeErrors) {
  const auto m = modulo(4, 3);
  try {
    m.map_label(3, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SaltOutOfRange);
  }
  try {
    m.unmap_label(0, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ClassOutOfRange);
  }
}

TEST(PermuteOutput, ZeroSaltUnchanged) {
  const Tensorf y = Tensorf::from({0.05f, 0.6f, 0.2f, 0.15f});
  EXPECT_TRUE(modulo(4, 4).permute_output(0, y).identical(y));
}

TEST(PermuteOutput, DogProbabilityLandsAtIndexThree) {
  const Tensorf y = Tensorf::from({0.05f, 0.6f, 0.2f, 0.15f});
  const Tensorf ys = modulo(4, 4).permute_output(2, y);
  EXPECT_EQ(ys[3], 0.6f);
  EXPECT_EQ(argmax<float>(ys.values()), 3u);
  EXPECT_TRUE(modulo(4, 4).unpermute_output(2, ys).identical(y));
}

TEST(PermuteOutput, ConservesValues) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = static_cast<std::uint32_t>(2 + rng.below(12));
    const auto m = modulo(k, k);
    Tensor<double> p({k});
    double total = 0;
    for (auto& v : p.storage()) total += (v = rng.uniform());
    for (auto& v : p.storage()) v /= total;
    const std::size_t s = rng.below(k);
    const Tensor<double> q = m.permute_output(s, p);
    for (std::size_t y = 0; y < k; ++y) EXPECT_EQ(q[m.map_label(s, y)], p[y]);
    std::vector<double> a(p.values().begin(), p.values().end()), b(q.values().begin(), q.values().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(PermuteOutput, LengthMismatch) {
  try {
    modulo(4, 4).permute_output(1, Tensorf::from({0.5f, 0.5f}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::LengthMismatch);
  }
}

}  // namespace
}  // namespace salted
