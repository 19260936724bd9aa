// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "evtrack/backbone.hpp"
#include "evtrack/dps.hpp"
#include "evtrack/error.hpp"
#include "evtrack/nn/ops.hpp"
#include "evtrack/nn/rng.hpp"
#include "evtrack/sa_moe.hpp"
#include "evtrack/token_layout.hpp"
#include "evtrack/weights.hpp"

namespace evtrack {
namespace {

using frames::Density;
using nn::Tensor;

Tensor random_tensor(nn::Rng& rng, nn::Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 24;
  c.heads = 3;
  c.head_channels = 8;
  return c;
}

constexpr std::array<Density, 3> kOrder{Density::dense, Density::medium, Density::sparse};

// ---- token layout -----------------------------------------------------------

TEST(TokenLayout, AppendsBlocksInOrder) {
  TokenLayout l(64, 256, 8);
  EXPECT_EQ(l.total(), 64u);
  EXPECT_EQ(l.inject(Density::dense), (TokenRange{64, 320}));
  EXPECT_EQ(l.inject(Density::medium), (TokenRange{320, 576}));
  EXPECT_EQ(l.inject(Density::sparse), (TokenRange{576, 832}));
  EXPECT_EQ(l.total(), 832u);
  EXPECT_EQ(l.template_range(), (TokenRange{0, 64}));
  EXPECT_EQ(l.range(Density::medium)->begin, 320u);
  EXPECT_THROW(l.inject(Density::dense), StateError);
}

// ---- config and weights -----------------------------------------------------

TEST(ModelConfig, DefaultsAndStages) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.num_layers(), 12u);
  EXPECT_EQ(c.template_tokens(), 64u);
  EXPECT_EQ(c.search_tokens(), 256u);
  EXPECT_EQ(c.stage_of(6), 1u);
  EXPECT_EQ(c.stage_of(7), 2u);
  EXPECT_EQ(c.stage_of(11), 3u);
  for (std::size_t l = 1; l <= 12; ++l) EXPECT_EQ(c.is_moe_layer(l), l == 1 || l == 7 || l == 11) << l;
}

TEST(ModelConfig, RejectsInconsistentValues) {
  ModelConfig c;
  c.layers_per_stage = {6, 4, 3};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ModelConfig{};
  c.heads = 5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ModelConfig{};
  c.patch = 24;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ModelConfig{};
  c.injection_order = {Density::dense, Density::dense, Density::sparse};
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Weights, SelftestWeightsPassAudit) {
  const auto c = small_config();
  const auto w = make_selftest_weights(c, {1, 0.0f});
  EXPECT_NO_THROW(w.audit(c));
  EXPECT_EQ(w.size(), expected_shapes(c).size());
  EXPECT_TRUE(w.contains("blocks.0.moe.expert2.fc2.bias"));
  EXPECT_TRUE(w.contains("blocks.10.moe.router.fc2.weight"));
  EXPECT_FALSE(w.contains("blocks.1.moe.router.fc2.weight"));
  EXPECT_TRUE(w.contains(names::halting(7, "weight")));
  EXPECT_FALSE(w.contains(names::halting(6, "weight")));
  EXPECT_EQ(make_selftest_weights(c, {1, 0.0f}), w);
  EXPECT_NE(make_selftest_weights(c, {2, 0.0f}), w);
}

TEST(Weights, SelftestExpertsSplitTheFfn) {
  const auto c = small_config();
  const auto w = make_selftest_weights(c, {3, 0.0f});
  const moe::Ffn ffn{w.get(names::block(7, "mlp.fc1.weight")), w.get(names::block(7, "mlp.fc1.bias")),
                     w.get(names::block(7, "mlp.fc2.weight")), w.get(names::block(7, "mlp.fc2.bias"))};
  const auto split = moe::split_ffn(ffn);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(w.get(names::expert(7, e, "fc1.weight")), split.experts[e].fc1_weight);
    EXPECT_EQ(w.get(names::expert(7, e, "fc2.bias")), split.experts[e].fc2_bias);
  }
}

TEST(Weights, SaveLoadRoundTripIsByteIdentical) {
  const auto c = small_config();
  const auto w = make_selftest_weights(c, {4, 1.5f});
  std::ostringstream a;
  w.save(a);
  std::istringstream in(a.str());
  const auto back = ModelWeights::load(in);
  EXPECT_EQ(back, w);
  std::ostringstream b;
  back.save(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Weights, LoadRejectsCorruption) {
  const auto c = small_config();
  std::ostringstream os;
  make_selftest_weights(c, {5, 0.0f}).save(os);
  const std::string clean = os.str();
  auto load = [](const std::string& bytes) {
    std::istringstream in(bytes);
    return ModelWeights::load(in);
  };
  std::string magic = clean;
  magic[0] = 'X';
  EXPECT_THROW(load(magic), FormatError);
  std::string version = clean;
  version[4] = 2;
  EXPECT_THROW(load(version), VersionError);
  EXPECT_THROW(load(clean.substr(0, clean.size() - 1)), FormatError);
  EXPECT_THROW(load(clean.substr(0, 10)), FormatError);
  EXPECT_THROW(load(clean + "x"), FormatError);
  for (std::size_t pos : {std::size_t{20}, clean.size() / 3, clean.size() - 9}) {
    std::string flipped = clean;
    flipped[pos] = static_cast<char>(flipped[pos] ^ 0x10);
    EXPECT_THROW(load(flipped), FormatError) << pos;
  }
}

TEST(Weights, AuditNamesTheProblem) {
  const auto c = small_config();
  auto w = make_selftest_weights(c, {6, 0.0f});
  auto missing = w;
  {
    ModelWeights fewer;
    for (const auto& [name, t] : w.tensors()) {
      if (name != "norm.bias") fewer.set(name, t);
    }
    EXPECT_THROW(fewer.audit(c), FormatError);
  }
  auto bad_shape = w;
  bad_shape.set("norm.bias", Tensor({5}));
  EXPECT_THROW(bad_shape.audit(c), FormatError);
  auto extra = w;
  extra.set("unused.weight", Tensor({1}));
  EXPECT_THROW(extra.audit(c), FormatError);
  auto nonfinite = w;
  nonfinite.mutable_tensor("norm.bias")[0] = std::nanf("");
  EXPECT_THROW(nonfinite.audit(c), FormatError);
  EXPECT_THROW(w.audit(ModelConfig{}), FormatError);
}

// ---- sa_moe -----------------------------------------------------------------

moe::Ffn random_ffn(nn::Rng& rng, std::size_t h, std::size_t d) {
  return {random_tensor(rng, {h, d}), random_tensor(rng, {h}), random_tensor(rng, {d, h}), random_tensor(rng, {d})};
}

TEST(SplitFfn, SlicesContiguousThirds) {
  nn::Rng rng(1);
  const auto ffn = random_ffn(rng, 6, 2);
  const auto set = moe::split_ffn(ffn);
  const auto& e0 = set.experts[0];
  EXPECT_EQ(e0.fc1_weight.dims(), (nn::Shape{2, 2}));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(e0.fc1_weight(r, c), ffn.fc1_weight(r, c));
      EXPECT_EQ(e0.fc2_weight(r, c), ffn.fc2_weight(r, c));
      EXPECT_EQ(set.experts[2].fc1_weight(r, c), ffn.fc1_weight(4 + r, c));
      EXPECT_EQ(set.experts[2].fc2_weight(r, c), ffn.fc2_weight(r, 4 + c));
    }
    EXPECT_EQ(e0.fc2_bias[r], ffn.fc2_bias[r] / 3.0f);
  }
}

TEST(SplitFfn, ZeroBiasStaysZero) {
  nn::Rng rng(2);
  auto ffn = random_ffn(rng, 12, 4);
  ffn.fc2_bias = Tensor({4});
  for (const auto& e : moe::split_ffn(ffn).experts) {
    for (float v : e.fc2_bias.data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(SplitFfn, RequiresHiddenDivisibleByThree) {
  nn::Rng rng(3);
  EXPECT_THROW(moe::split_ffn(random_ffn(rng, 8, 4)), InvalidArgument);
}

TEST(SplitFfn, ExpertsSumToFfnOnFloatPath) {
  nn::Rng rng(4);
  for (std::size_t h : {6u, 12u, 48u}) {
    for (std::size_t d : {4u, 16u}) {
      const auto ffn = random_ffn(rng, h, d);
      const auto set = moe::split_ffn(ffn);
      const Tensor x = random_tensor(rng, {100, d}, -2, 2);
      const Tensor ref = ffn.forward(x);
      Tensor sum = set.experts[0].forward(x);
      nn::add_inplace(sum, set.experts[1].forward(x));
      nn::add_inplace(sum, set.experts[2].forward(x));
      for (std::size_t r = 0; r < 100; ++r) {
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          num += std::pow(sum(r, c) - ref(r, c), 2);
          den += std::pow(ref(r, c), 2);
        }
        EXPECT_LT(std::sqrt(num) / (std::sqrt(den) + 1e-12), 1e-5);
      }
    }
  }
}

moe::RouterParams logit_router(std::size_t d, std::array<float, 3> logits) {
  moe::RouterParams r{Tensor({d, 2 * d}), Tensor({d}), Tensor({3, d}), Tensor({3})};
  for (std::size_t i = 0; i < 3; ++i) r.fc2_bias[i] = logits[i];
  return r;
}

TEST(Route, SingleCandidateSelectsDense) {
  nn::Rng rng(5);
  const auto router = logit_router(4, {-3.0f, 5.0f, 9.0f});
  const auto rec = moe::route_pooled(random_tensor(rng, {4}), random_tensor(rng, {4}), 1, kOrder, router,
                                     moe::RoutingMode::hard, nullptr);
  EXPECT_EQ(rec.mask, std::vector<float>{1.0f});
  EXPECT_EQ(rec.selected, Density::dense);
}

TEST(Route, ArgmaxPicksInjectionOrderIndex) {
  nn::Rng rng(6);
  const auto router = logit_router(4, {0.5f, 2.0f, -1.0f});
  const auto rec = moe::route_pooled(random_tensor(rng, {4}), random_tensor(rng, {4}), 3, kOrder, router,
                                     moe::RoutingMode::hard, nullptr);
  EXPECT_EQ(rec.selected, Density::medium);
  EXPECT_EQ(rec.mask, (std::vector<float>{0, 1, 0}));
  EXPECT_EQ(rec.logits, (std::array<float, 3>{0.5f, 2.0f, -1.0f}));
  const std::array<Density, 3> other{Density::sparse, Density::dense, Density::medium};
  EXPECT_EQ(moe::route_pooled(random_tensor(rng, {4}), random_tensor(rng, {4}), 3, other, router,
                              moe::RoutingMode::hard, nullptr)
                .selected,
            Density::dense);
}

TEST(Route, PoolsTemplateAndSearchJointly) {
  nn::Rng rng(7);
  const std::size_t d = 6;
  const moe::RouterParams router{random_tensor(rng, {d, 2 * d}), random_tensor(rng, {d}),
                                 random_tensor(rng, {3, d}), random_tensor(rng, {3})};
  const Tensor z = random_tensor(rng, {4, d});
  const std::vector<Tensor> blocks{random_tensor(rng, {5, d}), random_tensor(rng, {5, d})};
  const auto rec = moe::route(z, blocks, 2, kOrder, router, moe::RoutingMode::soft, nullptr);
  const auto ref = moe::route_pooled(nn::global_avg_pool(z), nn::global_avg_pool(nn::concat_rows(blocks[0], blocks[1])),
                                     2, kOrder, router, moe::RoutingMode::soft, nullptr);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(rec.mask[i], ref.mask[i], 1e-6);
  EXPECT_EQ(rec.selected, ref.selected);
  EXPECT_THROW(moe::route(z, std::vector<Tensor>{blocks[0]}, 2, kOrder, router, moe::RoutingMode::soft, nullptr),
               InvalidArgument);
  EXPECT_THROW(moe::route(z, std::vector<Tensor>{Tensor()}, 1, kOrder, router, moe::RoutingMode::soft, nullptr),
               Error);
}

TEST(Route, InactiveLogitsNeverChangeDecision) {
  nn::Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 5, k = 1 + rng.uniform_int(2);
    moe::RouterParams r{random_tensor(rng, {d, 2 * d}), random_tensor(rng, {d}), random_tensor(rng, {3, d}),
                        random_tensor(rng, {3})};
    const Tensor a = random_tensor(rng, {d}), b = random_tensor(rng, {d});
    nn::Rng n1(trial), n2(trial);
    const auto base = moe::route_pooled(a, b, k, kOrder, r, moe::RoutingMode::hard, &n1);
    for (std::size_t row = k; row < 3; ++row) r.fc2_bias[row] += 100.0f;
    const auto moved = moe::route_pooled(a, b, k, kOrder, r, moe::RoutingMode::hard, &n2);
    ASSERT_EQ(base.mask, moved.mask);
    ASSERT_EQ(base.selected, moved.selected);
  }
}

struct MoeFixture {
  nn::Rng rng{9};
  std::size_t d = 8;
  TokenLayout layout{3, 4, 8};
  moe::ExpertSet set;
  Tensor tokens;

  MoeFixture() {
    set = moe::split_ffn(random_ffn(rng, 12, d));
    layout.inject(Density::dense);
    layout.inject(Density::medium);
    tokens = random_tensor(rng, {layout.total(), d});
  }
  moe::RoutingRecord record(Density sel) const {
    moe::RoutingRecord r;
    r.active = 2;
    r.mask = {0, 1};
    r.selected = sel;
    return r;
  }
};

TEST(MoeForward, ZeroExpertGivesSharedOutput) {
  MoeFixture f;
  auto& e = f.set.experts[static_cast<std::size_t>(Density::medium)];
  for (Tensor* t : {&e.fc1_weight, &e.fc1_bias, &e.fc2_weight, &e.fc2_bias}) *t = Tensor(t->dims());
  EXPECT_EQ(moe::moe_forward(f.layout, f.tokens, f.set, f.record(Density::medium)), f.set.shared.forward(f.tokens));
}

TEST(MoeForward, LocalToSelectedBlock) {
  MoeFixture f;
  const Tensor out = moe::moe_forward(f.layout, f.tokens, f.set, f.record(Density::medium));
  const Tensor shared = f.set.shared.forward(f.tokens);
  const TokenRange blk = *f.layout.range(Density::medium);
  Tensor expected = shared;
  const Tensor specific = f.set.experts[1].forward(f.tokens.slice_rows(blk.begin, blk.end));
  for (std::size_t r = 0; r < blk.size(); ++r) {
    for (std::size_t c = 0; c < f.d; ++c) expected(blk.begin + r, c) += specific(r, c);
  }
  EXPECT_EQ(out, expected);
  for (std::size_t r = 0; r < f.layout.total(); ++r) {
    if (r >= blk.begin && r < blk.end) continue;
    for (std::size_t c = 0; c < f.d; ++c) ASSERT_EQ(out(r, c), shared(r, c));
  }
}

TEST(MoeForward, RejectsMismatchedRecord) {
  MoeFixture f;
  EXPECT_THROW(moe::moe_forward(f.layout, f.tokens, f.set, f.record(Density::sparse)), InvalidArgument);
  auto r = f.record(Density::dense);
  r.active = 3;
  EXPECT_THROW(moe::moe_forward(f.layout, f.tokens, f.set, r), InvalidArgument);
  EXPECT_THROW(moe::moe_forward(f.layout, f.tokens.slice_rows(0, 5), f.set, f.record(Density::dense)), ShapeError);
}

// ---- dps --------------------------------------------------------------------

TEST(HaltingProb, KnownValues) {
  nn::Rng rng(10);
  const Tensor f = random_tensor(rng, {20, 6});
  const Tensor w({1, 6}), b({1});
  EXPECT_EQ(dps::halting_prob(f, {w, b}), 0.5);
  const Tensor big({1}, std::vector<float>{20.0f});
  EXPECT_GE(dps::halting_prob(f, {w, big}), 0.999);
  const Tensor rw = random_tensor(rng, {1, 6}), rb = random_tensor(rng, {1});
  double z = rb[0];
  for (std::size_t c = 0; c < 6; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 20; ++r) mean += f(r, c);
    z += rw[c] * mean / 20.0;
  }
  EXPECT_NEAR(dps::halting_prob(f, {rw, rb}), 1.0 / (1.0 + std::exp(-z)), 1e-6);
  Tensor bad = f;
  bad[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(dps::halting_prob(bad, {rw, rb}), NonFiniteError);
}

dps::HaltingRecord run_controller(std::initializer_list<double> probs) {
  dps::HaltingController c(7, 12);
  for (double p : probs) {
    if (c.step(p) == dps::Decision::halt) break;
  }
  return c.record();
}

TEST(HaltingController, Examples) {
  const auto a = run_controller({0.3, 0.3, 0.5});
  EXPECT_EQ(a.halting_layer, 9u);
  EXPECT_EQ(a.cumulative, (std::vector<double>{0.3, 0.3 + 0.3, 0.3 + 0.3 + 0.5}));
  EXPECT_EQ(run_controller({0.01, 0.01, 0.01, 0.01, 0.01, 0.01}).halting_layer, 12u);
  EXPECT_EQ(run_controller({1.0}).halting_layer, 7u);
}

TEST(HaltingController, StepAfterHaltThrows) {
  dps::HaltingController c(7, 12);
  EXPECT_EQ(c.step(1.0), dps::Decision::halt);
  EXPECT_THROW(c.step(0.1), StateError);
  dps::HaltingController d(7, 12);
  EXPECT_THROW(d.record(), StateError);
  EXPECT_THROW(d.step(1.5), InvalidArgument);
}

TEST(Aggregation, Weights) {
  const std::vector<double> p{0.3, 0.3, 0.5};
  const auto w = dps::aggregation_weights(p, 7, 9);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(w[0], 0.3);
  EXPECT_DOUBLE_EQ(w[1], 0.3);
  EXPECT_NEAR(w[2], 0.4, 1e-15);
  const std::vector<double> q(6, 0.1);
  EXPECT_NEAR(dps::aggregation_weights(q, 7, 12).back(), 0.5, 1e-15);
}

TEST(Aggregation, IdenticalFeaturesAreAFixedPoint) {
  nn::Rng rng(11);
  const Tensor f = random_tensor(rng, {7, 5});
  const std::vector<Tensor> feats(4, f);
  const std::vector<double> w{0.2, 0.1, 0.3, 0.4};
  const Tensor out = dps::aggregate(feats, w);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(out[i], f[i], 1e-6);
}

TEST(Aggregation, WeightsNonNegativeAndNormalized) {
  nn::Rng rng(12);
  for (int t = 0; t < 10000; ++t) {
    dps::HaltingController c(7, 12);
    while (c.step(rng.uniform_open() * rng.uniform()) == dps::Decision::proceed) {
    }
    const auto rec = c.record();
    double s = 0.0;
    for (double w : rec.weights) {
      ASSERT_GE(w, 0.0);
      s += w;
    }
    ASSERT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(HaltingController, MonotoneInProbabilities) {
  nn::Rng rng(13);
  for (int t = 0; t < 2000; ++t) {
    std::array<double, 6> p{}, q{};
    for (std::size_t i = 0; i < 6; ++i) {
      p[i] = rng.uniform_open() * 0.4;
      q[i] = std::min(1.0, p[i] + rng.uniform() * 0.2);
    }
    auto layer = [](const std::array<double, 6>& v) {
      dps::HaltingController c(7, 12);
      for (double x : v) {
        if (c.step(x) == dps::Decision::halt) break;
      }
      return c.record().halting_layer;
    };
    ASSERT_LE(layer(q), layer(p));
  }
}

TEST(PonderLoss, Values) {
  EXPECT_EQ(dps::ponder_loss(9), 3.0);
  EXPECT_EQ(dps::ponder_loss(7), 1.0);
  EXPECT_EQ(dps::ponder_loss(12), 6.0);
  EXPECT_THROW(dps::ponder_loss(6), InvalidArgument);
  EXPECT_THROW(dps::ponder_loss(13), InvalidArgument);
}

// ---- backbone ---------------------------------------------------------------

struct Net {
  ModelConfig config = small_config();
  ModelWeights weights;
  std::unique_ptr<backbone::Backbone> net;
  Tensor z;
  std::array<Tensor, 3> x;

  explicit Net(float halting_bias = 0.0f, std::uint64_t seed = 1) {
    weights = make_selftest_weights(config, {seed, halting_bias});
    net = std::make_unique<backbone::Backbone>(config, weights);
    nn::Rng rng(seed + 100);
    z = random_tensor(rng, {config.template_tokens(), config.embed_dim});
    for (auto& t : x) t = random_tensor(rng, {config.search_tokens(), config.embed_dim});
  }
};

TEST(PatchEmbed, TokenCounts) {
  const Net n;
  frames::Crop t{Tensor({3, 128, 128})}, s{Tensor({3, 256, 256})};
  EXPECT_EQ(backbone::patch_embed(t, n.weights, n.config, backbone::CropKind::template_crop).dims(),
            (nn::Shape{64, 24}));
  EXPECT_EQ(backbone::patch_embed(s, n.weights, n.config, backbone::CropKind::search).dims(), (nn::Shape{256, 24}));
  EXPECT_THROW(backbone::patch_embed(t, n.weights, n.config, backbone::CropKind::search), ShapeError);
}

TEST(PatchEmbed, ZeroCropGivesPositionalEmbedding) {
  Net n;
  auto& bias = n.weights.mutable_tensor("patch_embed.bias");
  bias = Tensor(bias.dims());
  frames::Crop s{Tensor({3, 256, 256})};
  EXPECT_EQ(backbone::patch_embed(s, n.weights, n.config, backbone::CropKind::search),
            n.weights.get("pos_embed.search"));
}

TEST(PatchEmbed, PatchVectorLayout) {
  const Net n;
  nn::Rng rng(14);
  frames::Crop c{random_tensor(rng, {3, 128, 128})};
  const Tensor tokens = backbone::patch_embed(c, n.weights, n.config, backbone::CropKind::template_crop);
  // Token (gy=2, gx=5): vector index ch*P*P + py*P + px.
  const std::size_t p = 16, gy = 2, gx = 5;
  const Tensor& w = n.weights.get("patch_embed.weight");
  for (std::size_t o = 0; o < 24; ++o) {
    double s = n.weights.get("patch_embed.bias")[o] + n.weights.get("pos_embed.template")(gy * 8 + gx, o);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t py = 0; py < p; ++py) {
        for (std::size_t px = 0; px < p; ++px) {
          s += static_cast<double>(w(o, (ch * p + py) * p + px)) *
               c.pixels[(ch * 128 + gy * p + py) * 128 + gx * p + px];
        }
      }
    }
    EXPECT_NEAR(tokens(gy * 8 + gx, o), s, 1e-4);
  }
}

TEST(PatchEmbed, SearchTableSharedAcrossDensities) {
  const Net n;
  nn::Rng rng(15);
  frames::Crop c{random_tensor(rng, {3, 256, 256})};
  const Tensor a = backbone::patch_embed(c, n.weights, n.config, backbone::CropKind::search);
  const Tensor b = backbone::patch_embed(c, n.weights, n.config, backbone::CropKind::search);
  EXPECT_EQ(a, b);
}

TEST(FeatureTransform, ZeroAdapterIsIdentity) {
  Net n;
  for (const char* leaf : {"linear.weight", "linear.bias"}) {
    auto& t = n.weights.mutable_tensor(names::transform(2, leaf));
    t = Tensor(t.dims());
  }
  EXPECT_EQ(backbone::feature_transform(n.x[0], 2, n.weights, n.config), n.x[0]);
  EXPECT_THROW(backbone::feature_transform(n.x[0], 1, n.weights, n.config), InvalidArgument);
}

TEST(FeatureTransform, MatchesIndependentComposition) {
  const Net n;
  const Tensor out = backbone::feature_transform(n.x[1], 3, n.weights, n.config);
  const Tensor& g = n.weights.get(names::transform(3, "norm.weight"));
  const Tensor& b = n.weights.get(names::transform(3, "norm.bias"));
  const Tensor& w = n.weights.get(names::transform(3, "linear.weight"));
  const Tensor& lb = n.weights.get(names::transform(3, "linear.bias"));
  const std::size_t d = 24;
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < d; ++c) mean += n.x[1](r, c);
    mean /= d;
    for (std::size_t c = 0; c < d; ++c) var += std::pow(n.x[1](r, c) - mean, 2);
    var /= d;
    std::vector<double> ln(d);
    for (std::size_t c = 0; c < d; ++c) ln[c] = (n.x[1](r, c) - mean) / std::sqrt(var + 1e-6) * g[c] + b[c];
    for (std::size_t o = 0; o < d; ++o) {
      double s = lb[o];
      for (std::size_t c = 0; c < d; ++c) s += w(o, c) * ln[c];
      EXPECT_NEAR(out(r, o), n.x[1](r, o) + s, 1e-5);
    }
  }
}

TEST(Backbone, TokenAccountingPerLayer) {
  const Net n;
  backbone::ForwardOptions o;
  o.dps_enabled = false;
  const auto r = n.net->forward(n.z, n.x, o);
  std::vector<std::size_t> expected(6, 320);
  expected.insert(expected.end(), 4, 576);
  expected.insert(expected.end(), 2, 832);
  EXPECT_EQ(r.sequence_lengths, expected);
  for (const auto& t : r.template_ranges) EXPECT_EQ(t, (TokenRange{0, 64}));
  EXPECT_EQ(r.halting.halting_layer, 12u);
  EXPECT_EQ(r.fused.dims(), (nn::Shape{256, 24}));
  ASSERT_EQ(r.routing.size(), 3u);
  EXPECT_EQ(r.routing[0].layer, 1u);
  EXPECT_EQ(r.routing[0].active, 1u);
  EXPECT_EQ(r.routing[0].selected, Density::dense);
  EXPECT_EQ(r.routing[1].active, 2u);
  EXPECT_EQ(r.routing[2].layer, 11u);
  EXPECT_EQ(r.routing[2].active, 3u);
}

TEST(Backbone, DisabledDpsEqualsLastLayerAggregate) {
  const Net n;
  backbone::ForwardOptions o;
  o.dps_enabled = false;
  o.keep_layer_features = true;
  const auto r = n.net->forward(n.z, n.x, o);
  ASSERT_EQ(r.layer_features.size(), 6u);
  std::vector<Tensor> feats;
  for (std::size_t l = 7; l <= 12; ++l) feats.push_back(r.layer_features.at(l));
  const std::vector<double> w{0, 0, 0, 0, 0, 1};
  EXPECT_EQ(dps::aggregate(feats, w), r.aggregated);
  EXPECT_EQ(r.aggregated, r.layer_features.at(12));
}

TEST(Backbone, EarlyHaltSkipsLaterLayers) {
  const Net n(40.0f);
  backbone::ForwardOptions o;
  o.keep_layer_features = true;
  const auto r = n.net->forward(n.z, n.x, o);
  EXPECT_EQ(r.halting.halting_layer, 7u);
  EXPECT_EQ(r.sequence_lengths.size(), 7u);
  EXPECT_EQ(r.routing.size(), 2u);
  EXPECT_EQ(r.halting.weights, std::vector<double>{1.0});
  EXPECT_EQ(r.aggregated, r.layer_features.at(7));
  // Dense and medium blocks only.
  EXPECT_EQ(r.sequence_lengths.back(), 576u);
}

TEST(Backbone, AggregatesWithHaltingWeights) {
  const Net n(0.0f, 3);
  backbone::ForwardOptions o;
  o.keep_layer_features = true;
  const auto r = n.net->forward(n.z, n.x, o);
  const auto& h = r.halting;
  ASSERT_EQ(h.weights.size(), h.halting_layer - 6);
  std::vector<Tensor> feats;
  for (std::size_t l = 7; l <= h.halting_layer; ++l) feats.push_back(r.layer_features.at(l));
  EXPECT_EQ(dps::aggregate(feats, h.weights), r.aggregated);
  const Tensor normed = nn::layer_norm(r.aggregated, n.weights.get("norm.weight"), n.weights.get("norm.bias"),
                                       n.config.ln_eps);
  EXPECT_EQ(normed, r.fused);
}

TEST(Backbone, Deterministic) {
  const Net n;
  backbone::ForwardOptions o;
  const auto a = n.net->forward(n.z, n.x, o);
  const auto b = n.net->forward(n.z, n.x, o);
  EXPECT_EQ(a.fused, b.fused);
  EXPECT_EQ(a.halting, b.halting);
  EXPECT_EQ(a.routing, b.routing);
}

TEST(Backbone, ZeroWeightsRunFinite) {
  Net n;
  for (const auto& [name, t] : n.weights.tensors()) {
    if (name.starts_with("pos_embed")) continue;
    auto& m = n.weights.mutable_tensor(name);
    const bool gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                      name.ends_with("norm.weight");
    std::fill(m.data().begin(), m.data().end(), gain ? 1.0f : 0.0f);
  }
  const backbone::Backbone net(n.config, n.weights);
  const auto a = net.forward(n.z, n.x, {});
  EXPECT_TRUE(a.fused.all_finite());
  EXPECT_EQ(a.fused, net.forward(n.z, n.x, {}).fused);
}

TEST(Backbone, MoeDisabledMatchesZeroedExperts) {
  Net n;
  backbone::ForwardOptions off;
  off.moe_enabled = false;
  const auto plain = n.net->forward(n.z, n.x, off);
  EXPECT_TRUE(plain.routing.empty());
  ModelWeights zeroed = n.weights;
  for (std::size_t l : {1u, 7u, 11u}) {
    for (std::size_t e = 0; e < 3; ++e) {
      for (const char* leaf : {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"}) {
        auto& t = zeroed.mutable_tensor(names::expert(l, e, leaf));
        t = Tensor(t.dims());
      }
    }
  }
  const backbone::Backbone net(n.config, zeroed);
  const auto routed = net.forward(n.z, n.x, {});
  EXPECT_EQ(routed.routing.size() > 0, true);
  EXPECT_EQ(routed.fused, plain.fused);
  EXPECT_EQ(routed.halting, plain.halting);
}

TEST(Backbone, RejectsWrongTokenShapes) {
  const Net n;
  std::array<Tensor, 3> bad = n.x;
  bad[1] = Tensor({10, 24});
  EXPECT_THROW(n.net->forward(n.z, bad, {}), ShapeError);
  EXPECT_THROW(n.net->forward(Tensor({64, 23}), n.x, {}), ShapeError);
}

}  // namespace
}  // namespace evtrack
