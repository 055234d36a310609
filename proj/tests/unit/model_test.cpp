#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "copy_task.hpp"
#include "dense_transformer.hpp"
#include "oracles.hpp"
#include "scorers.hpp"
#include "semtx/error.hpp"
#include "semtx/model.hpp"

using namespace semtx;
using namespace semtx::testing;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int rows, int cols, bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::from(rows, cols, std::move(v), requires_grad);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.src_vocab = 9;
  cfg.trg_vocab = 7;
  cfg.max_len = 16;
  return cfg;
}

// SASA on encoder layer 2 head 1, SACrA on decoder layer 1 head 2.
std::vector<HeadSpec> tiny_specs() {
  return {HeadSpec{Site::EncoderSelf, {2}, {1}, MaskSpec::scaled(0.3)},
          HeadSpec{Site::Cross, {1}, {2}, MaskSpec::binary()}};
}

std::vector<Mask> tiny_masks(int n) {
  std::vector<Scene> scenes{Scene{0, {0, 1, 2}, RelationKind::Process, {1}, {}}};
  if (n > 3) {
    std::vector<int> rest;
    for (int i = 2; i < n - 1; ++i) rest.push_back(i);
    scenes.push_back(Scene{0, rest, RelationKind::State, {rest.back()}, {}});
  }
  const auto cover = make_cover(n, scenes);
  return {scaled_scene_mask(cover, 0.3), binary_scene_mask(cover)};
}

}  // namespace

TEST(Schedule, ReferenceValues) {
  TrainConfig cfg;
  cfg.warmup = 4000;
  EXPECT_NEAR(lr_schedule(4000, cfg, 256), 9.8821e-4, 1e-8);
  EXPECT_NEAR(lr_schedule(1, cfg, 256), 2.4705e-7, 1e-11);
  // Peak at the end of warmup.
  EXPECT_LT(lr_schedule(3999, cfg, 256), lr_schedule(4000, cfg, 256));
  EXPECT_LT(lr_schedule(4001, cfg, 256), lr_schedule(4000, cfg, 256));
  EXPECT_THROW(lr_schedule(0, cfg, 256), ContractError);
}

TEST(Sasa, AllOnesMaskIsVanillaBitwise) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 16), dk = 1 + static_cast<int>(rng() % 32);
    auto q = random_tensor(rng, n, dk), k = random_tensor(rng, n, dk), v = random_tensor(rng, n, dk);
    auto a = sasa_attention(q, k, v, Mask::ones(n));
    auto b = attention(q, k, v);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.values()[i], b.values()[i]);
  }
}

TEST(Sasa, SingleTokenReturnsValue) {
  std::mt19937_64 rng(22);
  auto q = random_tensor(rng, 1, 4), k = random_tensor(rng, 1, 4), v = random_tensor(rng, 1, 4);
  auto out = sasa_attention(q, k, v, Mask::ones(1));
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(out.at(0, j), v.at(0, j));
}

TEST(Sasa, MatchesDenseComputationAndIgnoresMaskedValues) {
  std::mt19937_64 rng(23);
  const int n = 6, dk = 5;
  const auto cover = make_cover(n, {Scene{0, {0, 1, 2}, RelationKind::Process, {0}, {}},
                                    Scene{0, {3, 4, 5}, RelationKind::Process, {4}, {}}});
  const auto mask = binary_scene_mask(cover);
  auto q = random_tensor(rng, n, dk), k = random_tensor(rng, n, dk), v = random_tensor(rng, n, dk);
  auto out = sasa_attention(q, k, v, mask);
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300, total = 0;
    for (int j = 0; j < n; ++j) {
      for (int c = 0; c < dk; ++c) s[j] += q.at(i, c) * k.at(j, c);
      s[j] /= std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, s[j]);
    }
    for (int j = 0; j < n; ++j) total += std::exp(s[j] - mx);
    double row_mass = 0;
    for (int c = 0; c < dk; ++c) {
      double expected = 0;
      for (int j = 0; j < n; ++j) expected += std::exp(s[j] - mx) / total * mask.at(i, j) * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), expected, 1e-12);
    }
    for (int j = 0; j < n; ++j) row_mass += std::exp(s[j] - mx) / total * mask.at(i, j);
    EXPECT_LE(row_mass, 1.0 + 1e-12);
  }
  // Changing V outside a query's scene leaves that query's output alone.
  auto v2 = Tensor::from(n, dk, std::vector<double>(v.values().begin(), v.values().end()));
  for (int c = 0; c < dk; ++c) v2.mutable_values()[5 * dk + c] += 100.0;
  auto out2 = sasa_attention(q, k, v2, mask);
  for (int c = 0; c < dk; ++c) EXPECT_EQ(out2.at(0, c), out.at(0, c));
}

TEST(Sacra, AllOnesMaskAveragesValues) {
  std::mt19937_64 rng(24);
  const int n = 5, d = 6, m = 3;
  auto x = random_tensor(rng, n, d), q = random_tensor(rng, m, d), v = random_tensor(rng, n, 4);
  auto out = sacra_attention(q, x, v, Mask::ones(n));
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < 4; ++c) {
      double mean = 0;
      for (int j = 0; j < n; ++j) mean += v.at(j, c) / n;
      EXPECT_NEAR(out.at(i, c), mean, 1e-12);
    }
}

TEST(Sacra, KeysAreMaskWeightedMeans) {
  auto x = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6});
  Mask mask(3, 3, 0.0);
  mask.at(0, 0) = mask.at(0, 1) = 1.0;
  mask.at(1, 1) = 1.0;
  mask.at(2, 0) = mask.at(2, 2) = 1.0;
  auto keys = sacra_keys(x, mask_tensor(mask));
  EXPECT_DOUBLE_EQ(keys.at(0, 0), 4.0 / 3);
  EXPECT_DOUBLE_EQ(keys.at(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(keys.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(keys.at(2, 1), 8.0 / 3);
}

TEST(Sacra, IdenticalMaskRowsGetIdenticalWeights) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 10), d = 2 + static_cast<int>(rng() % 8);
    const auto cover = random_cover(rng, n, 3);
    const auto mask = binary_scene_mask(cover);
    auto x = random_tensor(rng, n, d), q = random_tensor(rng, 4, d);
    auto w = sacra_weights(q, x, 1 + static_cast<int>(rng() % d), mask_tensor(mask));
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        bool same = true;
        for (int j = 0; j < n; ++j) same = same && mask.at(a, j) == mask.at(b, j);
        if (!same) continue;
        for (int i = 0; i < 4; ++i) EXPECT_LT(std::abs(w.at(i, a) - w.at(i, b)), 1e-12);
      }
  }
}

TEST(Sacra, QueriesMustBeModelWidth) {
  auto x = Tensor::zeros(3, 4), q = Tensor::zeros(2, 2), v = Tensor::zeros(3, 2);
  EXPECT_THROW(sacra_attention(q, x, v, Mask::ones(3)), DimensionError);
}

TEST(HeadSpecs, DefaultPlacements) {
  EXPECT_EQ(HeadSpec::sasa().layers, std::vector<int>{4});
  EXPECT_EQ(HeadSpec::sasa().heads, std::vector<int>{1});
  EXPECT_EQ(HeadSpec::sacra().site, Site::Cross);
  EXPECT_EQ(HeadSpec::sacra().layers, (std::vector<int>{2, 3}));
  EXPECT_EQ(HeadSpec::pascal().heads, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(HeadSpec::pascal().layers, std::vector<int>{1});
  EXPECT_EQ(HeadSpec::udiscal().mask.family, MaskFamily::Udiscal);
  ModelConfig cfg;
  cfg.src_vocab = cfg.trg_vocab = 10;
  const std::vector<HeadSpec> all{HeadSpec::sasa(), HeadSpec::sacra(), HeadSpec::pascal()};
  EXPECT_NO_THROW(validate_head_specs(all, cfg));
}

TEST(HeadSpecs, Rejections) {
  ModelConfig cfg;
  cfg.src_vocab = cfg.trg_vocab = 10;
  auto check = [&](std::vector<HeadSpec> specs) { validate_head_specs(specs, cfg); };
  EXPECT_THROW(check({HeadSpec{Site::EncoderSelf, {5}, {1}, MaskSpec::binary()}}), ConfigError);
  EXPECT_THROW(check({HeadSpec{Site::EncoderSelf, {1}, {9}, MaskSpec::binary()}}), ConfigError);
  EXPECT_THROW(check({HeadSpec{Site::Cross, {1}, {1}, MaskSpec::pascal()}}), ConfigError);
  EXPECT_THROW(check({HeadSpec::udiscal(), HeadSpec::pascal()}), ConfigError);
  EXPECT_THROW(check({HeadSpec{Site::EncoderSelf, {}, {1}, MaskSpec::binary()}}), ConfigError);
  EXPECT_THROW(check({HeadSpec::sasa(MaskSpec::scaled(1.5))}), ConfigError);
}

TEST(Transformer, MatchesDenseReference) {
  Transformer model(tiny_config(), tiny_specs(), 5);
  const std::vector<int> src{4, 5, 6, 7, 8}, trg{1, 3, 4, 5};
  const auto masks = tiny_masks(5);
  const auto logits = model.forward(src, trg, masks);
  const auto dense = DenseTransformer(model).forward(src, trg, masks);
  ASSERT_EQ(logits.rows(), 4);
  ASSERT_EQ(logits.cols(), 7);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_NEAR(logits.at(i, j), dense[i][j], 1e-10);
}

TEST(Transformer, AllOnesSasaMaskLeavesLogitsUnchanged) {
  auto cfg = tiny_config();
  Transformer vanilla(cfg, {}, 9);
  Transformer masked(cfg, {HeadSpec{Site::EncoderSelf, {1, 2}, {1, 2}, MaskSpec::binary()}}, 9);
  const std::vector<int> src{4, 5, 6}, trg{1, 2};
  const std::vector<Mask> ones{Mask::ones(3)};
  const auto a = vanilla.forward(src, trg, {});
  const auto b = masked.forward(src, trg, ones);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
}

TEST(Transformer, GoldenLogits) {
  Transformer model(tiny_config(), tiny_specs(), 5);
  const std::vector<int> src{4, 5, 6, 7, 8}, trg{1, 3, 4, 5};
  const auto logits = model.forward(src, trg, tiny_masks(5));
  // Frozen from the dense reference; guards initialisation and op order.
  const double expected[] = {0.042657341547928412, 0.055339104249957236, -0.038040748512158676, 0.081516513384569722,
                             0.037298346805484529, 0.036664779425112801, 0.025260283035611786};
  for (int j = 0; j < 7; ++j) EXPECT_NEAR(logits.at(3, j), expected[j], 1e-9) << "column " << j;
}

TEST(Transformer, MaskShapeErrors) {
  Transformer model(tiny_config(), tiny_specs(), 5);
  const std::vector<int> src{4, 5, 6, 7, 8}, trg{1};
  EXPECT_THROW(model.forward(src, trg, tiny_masks(4)), DimensionError);
  const std::vector<Mask> one{Mask::ones(5)};
  EXPECT_THROW(model.forward(src, trg, one), ConfigError);
}

TEST(Transformer, SceneCrossHeadsHaveNoKeyProjection) {
  Transformer model(tiny_config(), tiny_specs(), 5);
  bool has_wq = false;
  for (const auto& p : model.parameters()) {
    EXPECT_NE(p.name, "dec.0.cross.h1.wk");
    if (p.name == "dec.0.cross.h1.wq") {
      has_wq = true;
      EXPECT_EQ(p.tensor.cols(), 8);
    }
  }
  EXPECT_TRUE(has_wq);
}

TEST(Transformer, EndToEndGradientCheck) {
  Transformer model(tiny_config(), tiny_specs(), 13);
  const std::vector<int> src{4, 5, 6, 7, 8}, trg_in{1, 3, 4, 5}, target{3, 4, 5, 2};
  const auto masks = tiny_masks(5);
  std::vector<Tensor> leaves;
  for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
  const double err = grad_check([&] { return cross_entropy(model.forward(src, trg_in, masks), target, 0.1); },
                                leaves, 1e-5);
  EXPECT_LE(err, 1e-4);
}

TEST(Transformer, CheckpointReloadReproducesLogits) {
  Transformer a(tiny_config(), tiny_specs(), 5), b(tiny_config(), tiny_specs(), 6);
  std::stringstream buf;
  write_checkpoint(buf, a.parameters());
  b.load(read_checkpoint(buf));
  const std::vector<int> src{4, 5, 6, 7}, trg{1, 2};
  const auto masks = tiny_masks(4);
  const auto la = a.forward(src, trg, masks), lb = b.forward(src, trg, masks);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la.values()[i], lb.values()[i]);
  Transformer other(tiny_config(), {}, 5);
  std::stringstream buf2;
  write_checkpoint(buf2, a.parameters());
  EXPECT_THROW(other.load(read_checkpoint(buf2)), ConfigError);
}

TEST(Train, MissingMaskFailsBeforeTheFirstStep) {
  Transformer model(tiny_config(), tiny_specs(), 5);
  std::vector<TrainingExample> data{{{4, 5, 6}, {4, 5}, tiny_masks(3)}, {{4, 5, 6}, {4}, {}}};
  TrainConfig cfg;
  cfg.steps = 5;
  int steps_run = 0;
  EXPECT_THROW(train(model, data, cfg, 1, 2, [&](int, double) { ++steps_run; }), ConfigError);
  EXPECT_EQ(steps_run, 0);
}

TEST(Train, DeterministicAndStartsNearUniform) {
  auto run = [] {
    Transformer model(tiny_config(), tiny_specs(), 5);
    std::vector<TrainingExample> data;
    std::mt19937_64 rng(8);
    for (int i = 0; i < 12; ++i) {
      const int n = 3 + static_cast<int>(rng() % 4);
      std::vector<int> ids;
      for (int k = 0; k < n; ++k) ids.push_back(3 + static_cast<int>(rng() % 4));
      data.push_back({ids, ids, tiny_masks(n)});
    }
    TrainConfig cfg;
    cfg.steps = 15;
    cfg.batch_size = 4;
    cfg.warmup = 10;
    return std::pair{train(model, data, cfg, 1, 2).losses, model.parameters()[0].tensor.at(0, 0)};
  };
  const auto [l1, p1] = run();
  const auto [l2, p2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(p1, p2);
  EXPECT_NEAR(l1.front(), std::log(7.0), 0.1 * std::log(7.0));
  EXPECT_LT(l1.back(), l1.front());
}

TEST(Train, DivergenceIsReportedWithItsStep) {
  Transformer model(tiny_config(), {}, 5);
  std::vector<TrainingExample> data{{{4, 5, 6}, {4, 5}, {}}};
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.lr_scale = 1e300;
  cfg.warmup = 1;
  try {
    train(model, data, cfg, 1, 2);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(Beam, ThreeStepFixtureFindsExhaustiveOptimum) {
  ThreeStepScorer scorer;
  DecodeConfig cfg;
  cfg.beam = 2;
  cfg.max_len = 4;
  const auto beam = beam_search(scorer, cfg);
  const auto best = exhaustive_search(scorer, cfg);
  EXPECT_EQ(beam.tokens, (std::vector<int>{2, 1, 0}));
  EXPECT_EQ(beam.tokens, best.tokens);
  EXPECT_NEAR(beam.score, best.score, 1e-12);
  EXPECT_TRUE(beam.finished);
  const auto greedy = greedy_search(scorer, 4);
  EXPECT_EQ(greedy.tokens.front(), 1);
}

TEST(Beam, AlphaZeroRanksByLogProb) {
  ThreeStepScorer scorer;
  DecodeConfig cfg;
  cfg.beam = 3;
  cfg.alpha = 0.0;
  cfg.max_len = 4;
  const auto r = beam_search(scorer, cfg);
  EXPECT_EQ(r.score, r.log_prob);
  EXPECT_EQ(r.tokens, exhaustive_search(scorer, cfg).tokens);
}

TEST(Beam, ReportsUnfinishedHypothesis) {
  ThreeStepScorer scorer;
  DecodeConfig cfg;
  cfg.beam = 2;
  cfg.max_len = 2;
  const auto r = beam_search(scorer, cfg);
  EXPECT_FALSE(r.finished);
  EXPECT_EQ(r.tokens, (std::vector<int>{2, 1}));
}

TEST(Beam, BeamOneEqualsGreedyOnRandomModels) {
  auto cfg = tiny_config();
  for (int seed = 0; seed < 50; ++seed) {
    Transformer model(cfg, {}, 1000 + seed);
    const std::vector<int> src{4, 5, 6, 7};
    TransformerScorer s1(model, src, {}, 1, 2), s2(model, src, {}, 1, 2);
    DecodeConfig dc;
    dc.beam = 1;
    dc.max_len = 8;
    const auto beam = beam_search(s1, dc);
    const auto greedy = greedy_search(s2, 8);
    ASSERT_EQ(beam.tokens, greedy.tokens) << "seed " << seed;
    EXPECT_EQ(beam.finished, greedy.finished);
  }
}

TEST(Beam, LengthPenalty) {
  EXPECT_DOUBLE_EQ(length_penalty(1, 0.6), 1.0);
  EXPECT_DOUBLE_EQ(length_penalty(7, 0.0), 1.0);
  EXPECT_NEAR(length_penalty(7, 0.6), std::pow(2.0, 0.6), 1e-15);
}

TEST(CopyTask, CorpusShape) {
  const auto corpus = copy_corpus();
  ASSERT_EQ(corpus.size(), 200u);
  for (const auto& p : corpus) {
    EXPECT_GE(p.ids.size(), 3u);
    EXPECT_LE(p.ids.size(), 8u);
    EXPECT_EQ(p.cover.scenes.size(), 2u);
    EXPECT_TRUE(p.cover.unassigned.empty());
    for (int id : p.ids) EXPECT_TRUE(id >= 4 && id < kCopyVocab);
  }
}
