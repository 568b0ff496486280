#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "npsn/npsn.hpp"
#include "test_support.hpp"

using namespace npsn;
using net::NpsnConfig;
using net::NpsnModel;

namespace {

NpsnModel small_model(std::uint64_t seed, std::size_t samples = 4, std::size_t hidden = 6) {
  NpsnConfig c;
  c.samples = samples;
  c.hidden = hidden;
  return NpsnModel(c, seed);
}

// Random linear functional of the sample tensor: sum w_k s_k.
struct LinearProbe {
  std::vector<double> w;
  double operator()(const net::SampleTensor& s) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * s.values()[k];
    return acc;
  }
  net::SampleTensor grad(const net::SampleTensor& like) const {
    net::SampleTensor g(like.pedestrians(), like.dim(), like.samples());
    std::size_t k = 0;
    for (std::size_t l = 0; l < like.pedestrians(); ++l)
      for (std::size_t d = 0; d < like.dim(); ++d)
        for (std::size_t n = 0; n < like.samples(); ++n) g(l, d, n) = w[k++];
    return g;
  }
};

}  // namespace

TEST(NpsnModel, ParameterCountNearPublishedSize) {
  NpsnModel m(NpsnConfig{}, 0);
  EXPECT_EQ(m.parameter_count(), 5036u);
}

TEST(NpsnModel, OutputsStrictlyInsideUnitCube) {
  const auto m = small_model(1, 20, 16);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = m.forward(npsn::testing::random_scene(1 + seed % 5, seed));
    for (double v : s.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(NpsnModel, ZeroOutputLayerGivesHalf) {
  auto m = small_model(2);
  m.params().out_w.setZero();
  m.params().out_b.setZero();
  const auto out = m.forward(npsn::testing::random_scene(3, 4));
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
}

TEST(NpsnModel, ForwardIsDeterministic) {
  const auto m = small_model(3);
  const auto sc = npsn::testing::random_scene(4, 5);
  EXPECT_EQ(m.forward(sc), m.forward(sc));
  EXPECT_EQ(small_model(3).forward(sc), m.forward(sc));
  EXPECT_NE(small_model(4).forward(sc), m.forward(sc));
}

TEST(NpsnModel, TranslationInvariant) {
  const auto m = small_model(5);
  auto sc = npsn::testing::random_scene(3, 6);
  const auto before = m.forward(sc);
  for (auto& t : sc.trajectories)
    for (auto& p : t) p = p + Vec2{13.0, -7.5};
  const auto after = m.forward(sc);
  for (std::size_t k = 0; k < before.values().size(); ++k) EXPECT_NEAR(before.values()[k], after.values()[k], 1e-12);
}

TEST(NpsnModel, PermutationEquivariant) {
  const auto m = small_model(6);
  const auto sc = npsn::testing::random_scene(4, 7);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  scene::Scene permuted;
  for (auto i : perm) permuted.trajectories.push_back(sc.trajectories[i]);
  const auto a = m.forward(sc), b = m.forward(permuted);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(b(l, d, n), a(perm[l], d, n), 1e-12);
}

TEST(NpsnModel, StationaryPedestrianEmbedsZeroHistory) {
  const auto m = small_model(7);
  scene::Scene sc;
  scene::Trajectory still;
  still.fill({3, 3});
  sc.trajectories.push_back(still);
  net::ForwardRecord r;
  m.forward(sc, r);
  EXPECT_TRUE(r.input.isZero());
  const auto& p = m.params();
  for (Eigen::Index i = 0; i < r.embed.rows(); ++i) {
    const double b = p.embed_b(i, 0);
    EXPECT_EQ(r.embed(i, 0), b > 0 ? b : p.embed_act(0, 0) * b);
  }
}

TEST(GraphAttention, SingleNodeIsSelfLoop) {
  auto m = small_model(8);
  m.params().gat_b.setRandom();
  net::ForwardRecord r;
  m.forward(npsn::testing::random_scene(1, 9), r);
  EXPECT_DOUBLE_EQ(r.attention(0, 0), 1.0);
  const net::Matrix expected = m.params().gat_w * r.embed + m.params().gat_b;
  for (Eigen::Index i = 0; i < expected.rows(); ++i) {
    const double v = expected(i, 0);
    EXPECT_NEAR(r.aggregated(i, 0), v > 0 ? v : m.params().gat_act(0, 0) * v, 1e-14);
  }
}

TEST(GraphAttention, RowsSumToOne) {
  const auto m = small_model(9, 4, 8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    net::ForwardRecord r;
    m.forward(npsn::testing::random_scene(2 + seed % 6, seed), r);
    for (Eigen::Index i = 0; i < r.attention.rows(); ++i) EXPECT_NEAR(r.attention.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(NpsnBackward, ZeroUpstreamGivesZeroGradient) {
  const auto m = small_model(10);
  net::ForwardRecord r;
  const auto s = m.forward(npsn::testing::random_scene(3, 11), r);
  const auto g = m.backward(r, net::SampleTensor(s.pedestrians(), s.dim(), s.samples()));
  g.for_each([](const char* name, const net::Matrix& t) { EXPECT_TRUE(t.isZero()) << name; });
}

TEST(NpsnBackward, RefusesMissingForward) {
  const auto m = small_model(10);
  EXPECT_THROW(m.backward(net::ForwardRecord{}, net::SampleTensor(1, 2, 4)), Error);
}

TEST(NpsnBackward, MatchesFiniteDifferencesOnLinearProbe) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = small_model(20 + seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    m.params().for_each([&](const char*, net::Matrix& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.05 * n01(rng);
    });
    const auto sc = npsn::testing::random_scene(3, 100 + seed);
    net::ForwardRecord rec;
    const auto base = m.forward(sc, rec);
    LinearProbe probe{std::vector<double>(base.values().size())};
    for (auto& w : probe.w) w = n01(rng);
    const auto grad = m.backward(rec, probe.grad(base));
    const auto check = npsn::testing::check_gradient(m, grad, [&](const NpsnModel& mm) {
      net::ForwardRecord r;
      npsn::testing::Probe p{probe(mm.forward(sc, r)), {}};
      npsn::testing::append_activation_signs(r, p.pattern);
      return p;
    });
    EXPECT_LT(check.max_rel_err, 1e-4) << "seed " << seed;
    EXPECT_EQ(check.unresolved, 0u);
  }
}

TEST(NpsnBackward, FullChainMatchesFiniteDifferences) {
  const auto hyper = npsn::testing::test_hyper();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto check = npsn::testing::check_model_gradient(small_model(40 + seed, 5, 6), hyper,
                                                     npsn::testing::random_scene(3, 200 + seed), 1e-2);
    EXPECT_LT(check.max_rel_err, 1e-4) << "seed " << seed;
    EXPECT_EQ(check.unresolved, 0u);
    EXPECT_GT(check.checked, 100u);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto m = small_model(50, 7, 5);
  std::stringstream ss;
  m.save(ss);
  const auto back = NpsnModel::load(ss);
  EXPECT_EQ(back.config().samples, 7u);
  EXPECT_EQ(back.config().hidden, 5u);
  const auto sc = npsn::testing::random_scene(3, 1);
  EXPECT_EQ(back.forward(sc), m.forward(sc));
}

TEST(Checkpoint, RejectsCorruption) {
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(NpsnModel::load(junk), ParseError);
  const auto m = small_model(51);
  std::stringstream ss;
  m.save(ss);
  const std::string full = ss.str();
  std::stringstream truncated(full.substr(0, full.size() - 16));
  EXPECT_THROW(NpsnModel::load(truncated), ParseError);
  EXPECT_THROW(NpsnModel::load("/nonexistent/model.ckpt"), Error);
}
