#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "doctest.h"
#include "fv/error.hpp"
#include "fv/ops.hpp"
#include "fv/rng.hpp"
#include "fv/tensor.hpp"
#include "testutil.hpp"

using fv::Graph;
using fv::GraphT;
using fv::Shape;
using fv::Tensor;
using fv::TensorT;
using testutil::check_gradients;
using testutil::fill_away_from_zero;
using testutil::fill_uniform;

namespace {
bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}
}  // namespace

static_assert(std::is_same_v<fv::Tensor, fv::TensorT<float>>,
              "production scalar type is float");

TEST_CASE("tensor: construction and storage semantics") {
  Tensor t(Shape{2, 3}, 1.5f);
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5f);

  // Handles share storage; clone() deep-copies.
  Tensor alias = t;
  alias.at(0, 0) = 9.f;
  CHECK(t.at(0, 0) == 9.f);
  Tensor deep = t.clone();
  deep.at(0, 0) = -1.f;
  CHECK(t.at(0, 0) == 9.f);
  CHECK(t.id() == alias.id());
  CHECK(t.id() != deep.id());

  CHECK_THROWS_AS(Tensor::from(Shape{2, 2}, {1.f, 2.f, 3.f}),
                  fv::DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, -1}), fv::DimensionError);
  CHECK_THROWS_AS(t.grad(), fv::StateError);  // no gradient buffer allocated
  t.set_requires_grad(true);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("tensor: shape_str formats dims") {
  CHECK(fv::shape_str(Shape{4, 3, 8, 8}) == "[4x3x8x8]");
  CHECK(fv::shape_str(Shape{7}) == "[7]");
}

TEST_CASE("graph: backward demands a scalar and tolerates constants") {
  Graph g;
  auto x = Tensor::from(Shape{2}, {1.f, 2.f}, true);
  auto y = fv::relu(g, x);
  CHECK_THROWS_AS(g.backward(y), fv::ContractError);

  // A loss with no gradient path is a no-op, not an error.
  Graph g2;
  auto c = Tensor::from(Shape{1}, {3.f});
  g2.backward(c);

  // With recording disabled no nodes are taped.
  Graph quiet(false);
  auto z = fv::relu(quiet, x);
  CHECK(quiet.node_count() == 0);
  CHECK(z[0] == 1.f);
}

TEST_CASE("ops: add / mul / scale values and mismatch errors") {
  Graph g;
  auto a = Tensor::from(Shape{2}, {1.f, -2.f});
  auto b = Tensor::from(Shape{2}, {10.f, 0.5f});
  auto s = fv::add(g, a, b);
  CHECK(s[0] == 11.f);
  CHECK(s[1] == -1.5f);
  auto m = fv::mul(g, a, b);
  CHECK(m[0] == 10.f);
  CHECK(m[1] == -1.f);
  auto sc = fv::scale(g, a, 3.f);
  CHECK(sc[1] == -6.f);
  auto c = Tensor(Shape{3});
  CHECK_THROWS_AS(fv::add(g, a, c), fv::DimensionError);
  CHECK_THROWS_AS(fv::mul(g, a, c), fv::DimensionError);
}

TEST_CASE("ops: matmul known product and shape errors name both operands") {
  Graph g;
  auto a = Tensor::from(Shape{2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto b = Tensor::from(Shape{2, 1}, {5.f, 6.f});
  auto c = fv::matmul(g, a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 17.f);  // 1*5 + 2*6
  CHECK(c[1] == 39.f);  // 3*5 + 4*6

  auto bad = Tensor(Shape{4, 5});
  try {
    fv::matmul(g, Tensor(Shape{2, 3}), bad);
    FAIL("expected DimensionError");
  } catch (const fv::DimensionError& e) {
    CHECK(contains(e.what(), "[2x3]"));
    CHECK(contains(e.what(), "[4x5]"));
  }
}

TEST_CASE("ops: matmul_nt equals matmul against a materialized transpose") {
  fv::Rng rng(11);
  Graph g;
  auto a = Tensor(Shape{3, 4});
  auto b = Tensor(Shape{5, 4});
  fill_uniform(a, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  auto bt = Tensor(Shape{4, 5});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) bt.at(j, i) = b.at(i, j);
  auto c1 = fv::matmul_nt(g, a, b);
  auto c2 = fv::matmul(g, a, bt);
  for (std::int64_t i = 0; i < c1.numel(); ++i)
    CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-6));
}

TEST_CASE("autodiff: gradient of sum of squares") {
  Graph g;
  auto x = Tensor::from(Shape{2}, {1.f, -2.f}, true);
  auto loss = fv::sum_squares(g, x);
  CHECK(loss[0] == 5.f);
  g.backward(loss);
  CHECK(x.grad()[0] == 2.f);   // d(x^2)/dx = 2x
  CHECK(x.grad()[1] == -4.f);
}

TEST_CASE("autodiff: reused tensors accumulate gradient contributions") {
  Graph g;
  auto x = Tensor::from(Shape{1}, {3.f}, true);
  auto z = fv::add(g, fv::mul(g, x, x), x);  // x^2 + x
  auto loss = fv::sum_all(g, z);
  g.backward(loss);
  CHECK(x.grad()[0] == 7.f);  // 2x + 1 at x=3
}

TEST_CASE("conv2d: unit kernel over constant plane") {
  Graph g;
  auto img = Tensor::full(Shape{1, 5, 5}, 5.f);
  auto ker = Tensor::full(Shape{1, 1, 3, 3}, 1.f);
  auto out = fv::conv2d(g, img, ker, /*stride=*/1, /*dilation=*/1,
                        /*padding=*/0);
  CHECK(out.shape() == Shape{1, 3, 3});
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 45.f);
}

TEST_CASE("conv2d: output extent follows the dilated-kernel formula") {
  // effective kernel k_eff = k + (k-1)(d-1); H' = (H + 2p - k_eff)/s + 1
  CHECK(fv::conv_out_extent(15, 3, 1, 7, 0) == 1);   // k_eff = 15
  CHECK(fv::conv_out_extent(32, 3, 1, 1, 1) == 32);  // same-padding
  CHECK(fv::conv_out_extent(32, 3, 2, 1, 1) == 16);
  // padding == dilation keeps 3x3 kernels size-preserving at every branch
  // rate used by the spatial pyramid.
  for (int d : {2, 3, 5, 7}) CHECK(fv::conv_out_extent(8, 3, 1, d, d) == 8);

  Graph g;
  auto img = Tensor::full(Shape{1, 15, 15}, 1.f);
  auto ker = Tensor::full(Shape{1, 1, 3, 3}, 1.f);
  auto out = fv::conv2d(g, img, ker, 1, 7, 0);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out[0] == 9.f);
}

TEST_CASE("conv2d: dilation equals zero-inflated dense kernel, bitwise") {
  fv::Rng rng(23);
  auto img = Tensor(Shape{2, 9, 9});
  auto ker = Tensor(Shape{3, 2, 3, 3});
  fill_uniform(img, rng, -2, 2);
  fill_uniform(ker, rng, -1, 1);
  const int d = 3;
  const int keff = 3 + 2 * (d - 1);  // 7
  auto inflated = Tensor(Shape{3, 2, keff, keff});
  for (int co = 0; co < 3; ++co)
    for (int ci = 0; ci < 2; ++ci)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw)
          inflated[((static_cast<std::int64_t>(co) * 2 + ci) * keff + kh * d) *
                       keff +
                   kw * d] =
              ker[((static_cast<std::int64_t>(co) * 2 + ci) * 3 + kh) * 3 + kw];
  Graph g;
  auto out_dilated = fv::conv2d(g, img, ker, 1, d, 0);
  auto out_dense = fv::conv2d(g, img, inflated, 1, 1, 0);
  REQUIRE(out_dilated.shape() == out_dense.shape());
  for (std::int64_t i = 0; i < out_dilated.numel(); ++i)
    CHECK(out_dilated[i] == out_dense[i]);  // bitwise: same summation order
}

TEST_CASE("conv2d: precondition violations raise dimension errors") {
  Graph g;
  auto img = Tensor(Shape{1, 3, 3});
  CHECK_THROWS_AS(fv::conv2d(g, img, Tensor(Shape{1, 1, 5, 5}), 1, 1, 0),
                  fv::DimensionError);  // kernel larger than padded input
  CHECK_THROWS_AS(fv::conv2d(g, img, Tensor(Shape{1, 2, 3, 3}), 1, 1, 1),
                  fv::DimensionError);  // channel mismatch
  CHECK_THROWS_AS(fv::conv2d(g, img, Tensor(Shape{1, 1, 2, 3}), 1, 1, 1),
                  fv::DimensionError);  // non-square kernel
  CHECK_THROWS_AS(fv::conv2d(g, img, Tensor(Shape{1, 1, 3, 3}), 0, 1, 1),
                  fv::ContractError);  // stride < 1
  // dilation large enough that the effective kernel no longer fits
  CHECK_THROWS_AS(fv::conv2d(g, img, Tensor(Shape{1, 1, 3, 3}), 1, 2, 0),
                  fv::DimensionError);
}

TEST_CASE("conv2d_depthwise: per-channel window sums") {
  Graph g;
  auto img = Tensor::from(Shape{1, 3, 3},
                          {1.f, 2.f, 3.f, 4.f, 5.f, 6.f, 7.f, 8.f, 9.f});
  auto ker = Tensor::full(Shape{1, 2, 2}, 1.f);
  auto out = fv::conv2d_depthwise(g, img, ker, 1, 0);
  CHECK(out.shape() == Shape{1, 2, 2});
  CHECK(out[0] == 12.f);  // 1+2+4+5
  CHECK(out[1] == 16.f);
  CHECK(out[2] == 24.f);
  CHECK(out[3] == 28.f);
  CHECK_THROWS_AS(fv::conv2d_depthwise(g, img, Tensor(Shape{2, 2, 2}), 1, 0),
                  fv::DimensionError);
}

TEST_CASE("softmax: known ratios, shift stability, and finiteness contract") {
  Graph g;
  const float ln2 = std::log(2.f);
  auto x = Tensor::from(Shape{1, 2}, {0.f, ln2});
  auto p = fv::softmax(g, x);
  CHECK(p[0] == doctest::Approx(1.f / 3.f));
  CHECK(p[1] == doctest::Approx(2.f / 3.f));

  // Max subtraction keeps huge logits finite and preserves ratios.
  auto big = Tensor::from(Shape{1, 2}, {1000.f, 1000.f + ln2});
  auto pb = fv::softmax(g, big);
  CHECK(pb[0] == doctest::Approx(1.f / 3.f));
  CHECK(pb[1] == doctest::Approx(2.f / 3.f));

  auto nan = Tensor::from(Shape{1, 2},
                          {std::numeric_limits<float>::quiet_NaN(), 0.f});
  CHECK_THROWS_AS(fv::softmax(g, nan), fv::NumericError);
  auto inf = Tensor::from(Shape{1, 2},
                          {std::numeric_limits<float>::infinity(), 0.f});
  CHECK_THROWS_AS(fv::softmax(g, inf), fv::NumericError);
}

TEST_CASE("activations: sigmoid fixed point and relu gate") {
  Graph g;
  auto x = Tensor::from(Shape{1}, {std::log(3.f)});
  CHECK(fv::sigmoid(g, x)[0] == doctest::Approx(0.75f));

  auto r = Tensor::from(Shape{3}, {-1.f, 0.f, 2.f}, true);
  auto y = fv::relu(g, r);
  CHECK(y[0] == 0.f);
  CHECK(y[1] == 0.f);
  CHECK(y[2] == 2.f);
  auto loss = fv::sum_all(g, y);
  g.backward(loss);
  CHECK(r.grad()[0] == 0.f);
  CHECK(r.grad()[1] == 0.f);  // gate closed at exactly zero
  CHECK(r.grad()[2] == 1.f);

  CHECK(fv::parse_activation("relu") == fv::Activation::relu);
  CHECK_THROWS_AS(fv::parse_activation("tanh"), fv::ConfigError);
}

TEST_CASE("cross entropy: uniform-probability loss is log K") {
  Graph g;
  auto p = Tensor::full(Shape{1, 4}, 0.25f);
  auto t = Tensor::from(Shape{1, 4}, {1.f, 0.f, 0.f, 0.f});
  auto loss = fv::cross_entropy_from_probs(g, p, t);
  CHECK(loss[0] == doctest::Approx(std::log(4.f)));
}

TEST_CASE("cross entropy: softmax chain gradient is p minus target") {
  Graph g;
  const int K = 4;
  auto logits = Tensor(Shape{1, K}, 0.f, true);
  auto probs = fv::softmax(g, logits);
  auto t = Tensor::from(Shape{1, K}, {0.f, 1.f, 0.f, 0.f});
  auto loss = fv::cross_entropy_from_probs(g, probs, t);
  g.backward(loss);
  for (int k = 0; k < K; ++k) {
    const float expected = 1.f / K - (k == 1 ? 1.f : 0.f);
    CHECK(logits.grad()[static_cast<std::size_t>(k)] ==
          doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("cross entropy: clamp bounds the loss and zeroes the gradient") {
  Graph g;
  auto p = Tensor::from(Shape{1, 2}, {0.f, 1.f}, true);
  auto t = Tensor::from(Shape{1, 2}, {1.f, 0.f});
  auto loss = fv::cross_entropy_from_probs(g, p, t);
  CHECK(loss[0] == doctest::Approx(-std::log(1e-12f)));
  g.backward(loss);
  CHECK(p.grad()[0] == 0.f);  // clamped region has zero slope
  CHECK(std::isfinite(loss[0]));
}

TEST_CASE("cross entropy: contract violations") {
  Graph g;
  auto t_bad = Tensor::from(Shape{1, 2}, {0.5f, 0.5f});
  auto p = Tensor::from(Shape{1, 2}, {0.5f, 0.5f});
  CHECK_THROWS_AS(fv::cross_entropy_from_probs(g, p, t_bad),
                  fv::ContractError);
  auto t_two = Tensor::from(Shape{1, 2}, {1.f, 1.f});
  CHECK_THROWS_AS(fv::cross_entropy_from_probs(g, p, t_two),
                  fv::ContractError);
  auto p_bad = Tensor::from(Shape{1, 2}, {0.6f, 0.6f});  // sums to 1.2
  auto t_ok = Tensor::from(Shape{1, 2}, {1.f, 0.f});
  CHECK_THROWS_AS(fv::cross_entropy_from_probs(g, p_bad, t_ok),
                  fv::ContractError);
}

TEST_CASE("batchnorm_train: hand-computed normalization and B>=2 contract") {
  Graph g;
  auto x = Tensor::from(Shape{2, 1}, {1.f, 3.f});
  auto gamma = Tensor::full(Shape{1}, 1.f);
  auto beta = Tensor::full(Shape{1}, 0.f);
  auto y = fv::batchnorm_train(g, x, gamma, beta, 0.001f);
  // mean 2, biased variance 1: xhat = +-1/sqrt(1.001)
  const float e = 1.f / std::sqrt(1.001f);
  CHECK(y[0] == doctest::Approx(-e));
  CHECK(y[1] == doctest::Approx(+e));

  auto x1 = Tensor(Shape{1, 1});
  CHECK_THROWS_AS(fv::batchnorm_train(g, x1, gamma, beta, 0.001f),
                  fv::ContractError);
}

TEST_CASE("batchnorm_infer: affine map from running statistics") {
  Graph g;
  auto x = Tensor::from(Shape{1, 2}, {3.f, -1.f});
  auto gamma = Tensor::from(Shape{2}, {2.f, 1.f});
  auto beta = Tensor::from(Shape{2}, {0.5f, 0.f});
  auto rm = Tensor::from(Shape{2}, {1.f, -1.f});
  auto rv = Tensor::from(Shape{2}, {4.f, 1.f});
  auto y = fv::batchnorm_infer(g, x, gamma, beta, rm, rv, 0.f);
  CHECK(y[0] == doctest::Approx(2.f * (3.f - 1.f) / 2.f + 0.5f));  // 2.5
  CHECK(y[1] == doctest::Approx(0.f));
}

TEST_CASE("layernorm: centers and scales over the last dimension") {
  Graph g;
  auto x = Tensor::from(Shape{1, 3}, {1.f, 2.f, 3.f});
  auto gamma = Tensor::full(Shape{3}, 1.f);
  auto beta = Tensor::full(Shape{3}, 0.f);
  auto y = fv::layernorm(g, x, gamma, beta, 1e-5f);
  const float denom = std::sqrt(2.f / 3.f + 1e-5f);  // biased variance
  CHECK(y[0] == doctest::Approx(-1.f / denom));
  CHECK(y[1] == doctest::Approx(0.f));
  CHECK(y[2] == doctest::Approx(1.f / denom));
}

TEST_CASE("pooling: global average and token mean") {
  Graph g;
  auto x = Tensor::from(Shape{2, 1, 2}, {1.f, 3.f, 10.f, 30.f}, true);
  auto p = fv::global_average_pool(g, x);
  CHECK(p.shape() == Shape{2});
  CHECK(p[0] == 2.f);
  CHECK(p[1] == 20.f);
  auto loss = fv::sum_all(g, p);
  g.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.5f);

  Graph g2;
  auto m = Tensor::from(Shape{2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto mr = fv::mean_rows(g2, m);
  CHECK(mr[0] == 2.f);
  CHECK(mr[1] == 3.f);
}

TEST_CASE("patches: row-major token order and (c,i,j) feature layout") {
  Graph g;
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(i);
  auto img = Tensor::from(Shape{1, 4, 4}, v);
  auto tok = fv::extract_patches(g, img, 2);
  CHECK(tok.shape() == Shape{4, 4});
  CHECK(tok.at(0, 0) == 0.f);
  CHECK(tok.at(0, 1) == 1.f);
  CHECK(tok.at(0, 2) == 4.f);
  CHECK(tok.at(0, 3) == 5.f);
  CHECK(tok.at(1, 0) == 2.f);   // second patch of the top row
  CHECK(tok.at(2, 0) == 8.f);   // first patch of the bottom row
  CHECK(tok.at(3, 3) == 15.f);

  auto odd = Tensor(Shape{1, 5, 5});
  try {
    fv::extract_patches(g, odd, 2);
    FAIL("expected DimensionError");
  } catch (const fv::DimensionError& e) {
    CHECK(contains(e.what(), "not divisible"));
    CHECK(contains(e.what(), "6"));  // suggests the next working size
  }
}

TEST_CASE("reshaping and concatenation round-trips") {
  Graph g;
  auto x = Tensor::from(Shape{2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
  auto left = fv::slice_cols(g, x, 0, 2);
  auto right = fv::slice_cols(g, x, 2, 1);
  CHECK(left.shape() == Shape{2, 2});
  CHECK(right.at(1, 0) == 6.f);
  auto back = fv::concat_cols(g, {left, right});
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
  CHECK_THROWS_AS(fv::slice_cols(g, x, 2, 2), fv::DimensionError);

  auto r = fv::reshape(g, x, Shape{3, 2});
  CHECK(r.at(2, 1) == 6.f);
  CHECK_THROWS_AS(fv::reshape(g, x, Shape{4, 2}), fv::DimensionError);

  auto a = Tensor::full(Shape{1, 2, 2}, 1.f);
  auto b = Tensor::full(Shape{2, 2, 2}, 2.f);
  auto cc = fv::concat_channels(g, {a, b});
  CHECK(cc.shape() == Shape{3, 2, 2});
  CHECK(cc[0] == 1.f);
  CHECK(cc[11] == 2.f);
  CHECK_THROWS_AS(fv::concat_channels(g, {a, Tensor(Shape{1, 3, 2})}),
                  fv::DimensionError);

  auto rows = std::vector<Tensor>{Tensor::from(Shape{2}, {1.f, 2.f}),
                                  Tensor::from(Shape{2}, {3.f, 4.f})};
  auto st = fv::stack_rows(g, rows);
  CHECK(st.shape() == Shape{2, 2});
  CHECK(st.at(1, 0) == 3.f);
}

TEST_CASE("scale_channels: per-channel gate") {
  Graph g;
  auto f = Tensor::from(Shape{2, 1, 2}, {1.f, 2.f, 3.f, 4.f});
  auto e = Tensor::from(Shape{2}, {10.f, 0.5f});
  auto out = fv::scale_channels(g, f, e);
  CHECK(out[0] == 10.f);
  CHECK(out[1] == 20.f);
  CHECK(out[2] == 1.5f);
  CHECK(out[3] == 2.f);
  // The gate may arrive as a [1 x C] row vector.
  auto e_row = fv::reshape(g, e, Shape{1, 2});
  auto out2 = fv::scale_channels(g, f, e_row);
  CHECK(out2[3] == 2.f);
}

TEST_CASE("reductions: sum_abs subgradient and select_scalar bounds") {
  Graph g;
  auto x = Tensor::from(Shape{3}, {-2.f, 0.f, 5.f}, true);
  auto loss = fv::sum_abs(g, x);
  CHECK(loss[0] == 7.f);
  g.backward(loss);
  CHECK(x.grad()[0] == -1.f);
  CHECK(x.grad()[1] == 0.f);  // subgradient choice at the kink
  CHECK(x.grad()[2] == 1.f);

  CHECK_THROWS_AS(fv::select_scalar(g, x, 3), fv::DimensionError);
  CHECK(fv::select_scalar(g, x, 2)[0] == 5.f);
}

// ---------------------------------------------------------------------------
// Finite-difference verification, run in double precision.

using DTensor = TensorT<double>;
using DGraph = GraphT<double>;

TEST_CASE("fd: dense-style affine chain") {
  fv::Rng rng(101);
  auto x = DTensor(Shape{3, 4}, 0, true);
  auto w = DTensor(Shape{4, 5}, 0, true);
  auto b = DTensor(Shape{5}, 0, true);
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  check_gradients(
      "affine",
      [&](DGraph& g) {
        auto y = fv::sigmoid(g, fv::add_rowvec(g, fv::matmul(g, x, w), b));
        return fv::sum_squares(g, y);
      },
      {x, w, b});
}

TEST_CASE("fd: matmul_nt") {
  fv::Rng rng(102);
  auto a = DTensor(Shape{3, 4}, 0, true);
  auto b = DTensor(Shape{2, 4}, 0, true);
  fill_uniform(a, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  check_gradients(
      "matmul_nt",
      [&](DGraph& g) { return fv::sum_squares(g, fv::matmul_nt(g, a, b)); },
      {a, b});
}

TEST_CASE("fd: conv2d with stride, dilation, and padding") {
  fv::Rng rng(103);
  auto img = DTensor(Shape{2, 7, 7}, 0, true);
  auto ker = DTensor(Shape{3, 2, 3, 3}, 0, true);
  fill_uniform(img, rng, -1, 1);
  fill_uniform(ker, rng, -1, 1);
  check_gradients(
      "conv2d",
      [&](DGraph& g) {
        return fv::sum_squares(g, fv::conv2d(g, img, ker, 2, 2, 1));
      },
      {img, ker}, 7, 6);
}

TEST_CASE("fd: conv2d_depthwise") {
  fv::Rng rng(104);
  auto img = DTensor(Shape{3, 6, 6}, 0, true);
  auto ker = DTensor(Shape{3, 3, 3}, 0, true);
  fill_uniform(img, rng, -1, 1);
  fill_uniform(ker, rng, -1, 1);
  check_gradients(
      "conv2d_depthwise",
      [&](DGraph& g) {
        return fv::sum_squares(g, fv::conv2d_depthwise(g, img, ker, 1, 1));
      },
      {img, ker});
}

TEST_CASE("fd: relu away from the kink") {
  fv::Rng rng(105);
  auto x = DTensor(Shape{4, 4}, 0, true);
  fill_away_from_zero(x, rng, 0.2, 1.0);
  check_gradients(
      "relu",
      [&](DGraph& g) { return fv::sum_squares(g, fv::relu(g, x)); }, {x});
}

TEST_CASE("fd: softmax and cross entropy through the softmax chain") {
  fv::Rng rng(106);
  auto logits = DTensor(Shape{3, 5}, 0, true);
  fill_uniform(logits, rng, -2, 2);
  auto targets = DTensor(Shape{3, 5});
  targets.at(0, 2) = 1;
  targets.at(1, 0) = 1;
  targets.at(2, 4) = 1;
  check_gradients(
      "softmax+ce",
      [&](DGraph& g) {
        return fv::cross_entropy_from_probs(g, fv::softmax(g, logits),
                                            targets);
      },
      {logits}, 7, 8);
}

TEST_CASE("fd: layernorm") {
  fv::Rng rng(107);
  auto x = DTensor(Shape{3, 6}, 0, true);
  auto gamma = DTensor(Shape{6}, 0, true);
  auto beta = DTensor(Shape{6}, 0, true);
  fill_uniform(x, rng, -1, 1);
  fill_uniform(gamma, rng, 0.5, 1.5);
  fill_uniform(beta, rng, -0.5, 0.5);
  check_gradients(
      "layernorm",
      [&](DGraph& g) {
        return fv::sum_squares(g,
                               fv::layernorm(g, x, gamma, beta, 1e-3));
      },
      {x, gamma, beta});
}

TEST_CASE("fd: batchnorm train and infer modes") {
  fv::Rng rng(108);
  auto x = DTensor(Shape{5, 4}, 0, true);
  auto gamma = DTensor(Shape{4}, 0, true);
  auto beta = DTensor(Shape{4}, 0, true);
  auto rm = DTensor(Shape{4});
  auto rv = DTensor(Shape{4});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(gamma, rng, 0.5, 1.5);
  fill_uniform(beta, rng, -0.5, 0.5);
  fill_uniform(rm, rng, -0.2, 0.2);
  fill_uniform(rv, rng, 0.5, 1.5);
  check_gradients(
      "batchnorm_train",
      [&](DGraph& g) {
        return fv::sum_squares(
            g, fv::batchnorm_train(g, x, gamma, beta, 1e-3));
      },
      {x, gamma, beta});
  check_gradients(
      "batchnorm_infer",
      [&](DGraph& g) {
        return fv::sum_squares(
            g, fv::batchnorm_infer(g, x, gamma, beta, rm, rv, 1e-3));
      },
      {x, gamma, beta});
}

TEST_CASE("fd: pooling, patches, gating, and concatenation") {
  fv::Rng rng(109);
  auto img = DTensor(Shape{2, 4, 4}, 0, true);
  auto gate = DTensor(Shape{2}, 0, true);
  fill_uniform(img, rng, -1, 1);
  fill_uniform(gate, rng, 0.2, 1.0);
  check_gradients(
      "gap",
      [&](DGraph& g) {
        return fv::sum_squares(g, fv::global_average_pool(g, img));
      },
      {img});
  check_gradients(
      "extract_patches",
      [&](DGraph& g) {
        return fv::sum_squares(g, fv::extract_patches(g, img, 2));
      },
      {img});
  check_gradients(
      "scale_channels",
      [&](DGraph& g) {
        return fv::sum_squares(g, fv::scale_channels(g, img, gate));
      },
      {img, gate});
  check_gradients(
      "channel bias + concat + slice",
      [&](DGraph& g) {
        auto biased = fv::add_channel_bias(g, img, gate);
        auto both = fv::concat_channels(g, {img, biased});
        auto pooled = fv::global_average_pool(g, both);
        auto row = fv::reshape(g, pooled, Shape{1, 4});
        return fv::sum_squares(g, fv::slice_cols(g, row, 1, 3));
      },
      {img, gate});
}

TEST_CASE("fd: attention-style composite") {
  fv::Rng rng(110);
  auto q = DTensor(Shape{4, 3}, 0, true);
  auto k = DTensor(Shape{4, 3}, 0, true);
  auto v = DTensor(Shape{4, 3}, 0, true);
  fill_uniform(q, rng, -1, 1);
  fill_uniform(k, rng, -1, 1);
  fill_uniform(v, rng, -1, 1);
  check_gradients(
      "attention",
      [&](DGraph& g) {
        auto scores = fv::scale(g, fv::matmul_nt(g, q, k),
                                1.0 / std::sqrt(3.0));
        auto attn = fv::matmul(g, fv::softmax(g, scores), v);
        auto pooled = fv::mean_rows(g, attn);
        auto row = fv::reshape(g, pooled, Shape{1, 3});
        return fv::sum_squares(g, row);
      },
      {q, k, v}, 7, 6);
}

TEST_CASE("fd: stacking rows and abs regularizer") {
  fv::Rng rng(111);
  auto r0 = DTensor(Shape{3}, 0, true);
  auto r1 = DTensor(Shape{3}, 0, true);
  fill_away_from_zero(r0, rng, 0.3, 1.0);
  fill_away_from_zero(r1, rng, 0.3, 1.0);
  check_gradients(
      "stack+abs",
      [&](DGraph& g) {
        auto m = fv::stack_rows(g, {r0, r1});
        auto sq = fv::sum_squares(g, m);
        auto ab = fv::sum_abs(g, m);
        return fv::add(g, sq, ab);
      },
      {r0, r1});
}
