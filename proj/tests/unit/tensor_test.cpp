#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "semtx/checkpoint.hpp"
#include "semtx/error.hpp"
#include "semtx/tensor.hpp"

using namespace semtx;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int rows, int cols, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::from(rows, cols, std::move(v), requires_grad);
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

TEST(Matmul, HandExample) {
  auto a = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from(3, 2, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{58, 64, 139, 154}));
  auto nt = matmul_nt(a, transpose(b));
  EXPECT_EQ(std::vector<double>(nt.values().begin(), nt.values().end()), (std::vector<double>{58, 64, 139, 154}));
}

TEST(Matmul, IdentityAndAssociativity) {
  std::mt19937_64 rng(1);
  auto a = random_tensor(rng, 8, 8, false), b = random_tensor(rng, 8, 8, false), c = random_tensor(rng, 8, 8, false);
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  auto i8 = Tensor::from(8, 8, eye);
  auto ai = matmul(a, i8);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(ai.values()[k], a.values()[k]);
  auto left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(left.values()[k], right.values()[k], 1e-10);
}

TEST(Matmul, ShapeErrors) {
  EXPECT_THROW(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), DimensionError);
  EXPECT_THROW(add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), DimensionError);
  EXPECT_THROW(Tensor::from(2, 2, {1, 2, 3}), DimensionError);
}

TEST(Softmax, Values) {
  auto s = softmax_rows(Tensor::from(1, 4, {2, 2, 2, 2}));
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto t = softmax_rows(Tensor::from(1, 2, {0, std::log(3.0)}));
  EXPECT_NEAR(t.at(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(t.at(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 6), n = 1 + static_cast<int>(rng() % 9);
    auto x = scale(random_tensor(rng, m, n, false), 20.0);
    auto s = softmax_rows(x);
    for (int i = 0; i < m; ++i) {
      double total = 0;
      for (int j = 0; j < n; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        total += s.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, CausalZeroesTheFuture) {
  std::mt19937_64 rng(3);
  auto s = softmax_rows_causal(random_tensor(rng, 4, 4, false));
  for (int i = 0; i < 4; ++i) {
    double total = 0;
    for (int j = 0; j < 4; ++j) {
      if (j > i) EXPECT_EQ(s.at(i, j), 0.0);
      total += s.at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GradCheck, SumHasUnitGradient) {
  auto x = Tensor::from(2, 2, {1, -2, 3, 0.5}, true);
  EXPECT_LE(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-5), 1e-9);
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1, 1}));
}

TEST(GradCheck, QuadraticForm) {
  std::mt19937_64 rng(4);
  auto x = random_tensor(rng, 5, 1);
  EXPECT_LE(grad_check([](const Tensor& t) { return matmul(transpose(t), t); }, x, 1e-4), 1e-7);
  const auto g = x.grad();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(g[i], 2.0 * x.at(i, 0), 1e-12);
}

TEST(GradCheck, MatmulBothOperands) {
  std::mt19937_64 rng(5);
  auto a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2), w = random_tensor(rng, 3, 2, false);
  EXPECT_LE(grad_check([&] { return probe(matmul(a, b), w); }, {a, b}, 1e-5), 1e-5);
  auto c = random_tensor(rng, 2, 4), w2 = random_tensor(rng, 3, 2, false);
  EXPECT_LE(grad_check([&] { return probe(matmul_nt(a, c), w2); }, {a, c}, 1e-5), 1e-5);
}

TEST(GradCheck, EveryOp) {
  std::mt19937_64 rng(6);
  const double h = 1e-5, tol = 1e-6;
  auto x = random_tensor(rng, 3, 5), y = random_tensor(rng, 3, 5), row = random_tensor(rng, 1, 5);
  auto w = random_tensor(rng, 3, 5, false), wt = random_tensor(rng, 5, 3, false);
  auto gain = random_tensor(rng, 1, 5), bias = random_tensor(rng, 1, 5);
  EXPECT_LE(grad_check([&] { return probe(add(x, y), w); }, {x, y}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(sub(x, y), w); }, {x, y}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(mul(x, y), w); }, {x, y}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(scale(x, -1.7), w); }, {x}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(add_row(x, row), w); }, {x, row}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(transpose(x), wt); }, {x}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(softmax_rows(x), w); }, {x}, h), tol);
  EXPECT_LE(grad_check([&] { return probe(layer_norm(x, gain, bias), w); }, {x, gain, bias}, h), tol);
  auto sq = random_tensor(rng, 4, 4), wsq = random_tensor(rng, 4, 4, false);
  EXPECT_LE(grad_check([&] { return probe(softmax_rows_causal(sq), wsq); }, {sq}, h), tol);
  // Keep relu inputs away from the kink.
  auto r = Tensor::from(1, 4, {-1.0, 0.5, 2.0, -0.3}, true);
  auto wr = Tensor::from(1, 4, {1.0, 2.0, 3.0, 4.0});
  EXPECT_LE(grad_check([&] { return probe(relu(r), wr); }, {r}, h), tol);
  auto table = random_tensor(rng, 6, 3);
  const std::vector<int> ids{4, 1, 4, 0};
  auto we = random_tensor(rng, 4, 3, false);
  EXPECT_LE(grad_check([&] { return probe(embedding(table, ids), we); }, {table}, h), tol);
  const std::vector<int> targets{0, 4, 2};
  EXPECT_LE(grad_check([&] { return cross_entropy(x, targets, 0.1); }, {x}, h), tol);
  EXPECT_LE(grad_check([&] { return cross_entropy(x, targets, 0.0); }, {x}, h), tol);
}

TEST(GradCheck, RejectsNonScalarOutput) {
  auto x = Tensor::zeros(2, 2, true);
  EXPECT_THROW(grad_check([](const Tensor& t) { return t; }, x, 1e-5), ContractError);
}

TEST(CrossEntropy, SmoothedTargetValue) {
  // Uniform logits: loss is ln V regardless of smoothing.
  auto logits = Tensor::zeros(2, 12);
  const std::vector<int> targets{3, 7};
  EXPECT_NEAR(cross_entropy(logits, targets, 0.1).item(), std::log(12.0), 1e-12);
  // One-hot-ish logits with smoothing 0 equal -log softmax at the gold id.
  auto l = Tensor::from(1, 3, {1.0, 2.0, 3.0});
  const std::vector<int> gold{2};
  const double expected = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(cross_entropy(l, gold, 0.0).item(), expected, 1e-12);
}

TEST(Tape, VisitsSharedNodesOnce) {
  auto x = Tensor::from(1, 3, {1.0, -2.0, 0.5}, true);
  auto y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  Tape tape(y);
  std::set<TensorNode*> unique(tape.order().begin(), tape.order().end());
  EXPECT_EQ(unique.size(), tape.order().size());
  EXPECT_EQ(tape.order().front(), &y.node());
  y.backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{3.0, -3.0, 2.0}));
}

TEST(NoGrad, SuppressesHistory) {
  auto x = Tensor::from(1, 2, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node().parents.empty());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Numeric, NonFiniteResultsThrow) {
  auto x = Tensor::from(1, 2, {1e300, 1.0});
  EXPECT_THROW(scale(x, 1e300), NumericError);
  EXPECT_THROW(sum(Tensor::from(1, 1, {std::nan("")})), NumericError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(7);
  std::vector<NamedTensor> tensors{{"a", random_tensor(rng, 3, 4, false)},
                                   {"layer.0.bias", Tensor::from(1, 2, {-0.0, 1e-310})}};
  std::stringstream buf;
  write_checkpoint(buf, tensors);
  const auto back = read_checkpoint(buf);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].name, tensors[k].name);
    EXPECT_EQ(back[k].tensor.shape(), tensors[k].tensor.shape());
    for (std::size_t i = 0; i < back[k].tensor.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[k].tensor.values()[i]),
                std::bit_cast<std::uint64_t>(tensors[k].tensor.values()[i]));
  }
}

TEST(Checkpoint, LittleEndianLayout) {
  std::stringstream buf;
  write_checkpoint(buf, {{"w", Tensor::from(1, 1, {1.0})}});
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 8u + 8 + 4 + 1 + 4 + 16 + 8);
  EXPECT_EQ(bytes.substr(0, 8), "SMTXCKPT");
  EXPECT_EQ(bytes[8], 1);  // tensor count, low byte first
  EXPECT_EQ(bytes[20], 'w');
  // 1.0 = 0x3FF0000000000000, so the last two bytes are F0 3F.
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x3F);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), ParseError);
  std::stringstream buf;
  write_checkpoint(buf, {{"w", Tensor::from(1, 2, {1.0, 2.0})}});
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_checkpoint(cut), ParseError);
}
