#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "spdconv/ops.hpp"

using namespace spdconv;

TEST_CASE("tensor shape and storage invariants") {
  Tensor<float> t(TensorShape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK_THROWS_AS(Tensor<float>(TensorShape{0, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(
      Tensor<float>::from_values(TensorShape{1, 1, 2, 2}, {1.f, 2.f}),
      std::invalid_argument);

  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.numel());
  Tensor<float> alias = t;  // shallow copy shares storage
  alias.at(0, 0, 0, 0) = 7.f;
  CHECK(t.at(0, 0, 0, 0) == 7.f);
  Tensor<float> deep = t.clone();
  deep.at(0, 0, 0, 0) = 9.f;
  CHECK(t.at(0, 0, 0, 0) == 7.f);
}

TEST_CASE("conv2d all-ones 3x3 gives the window sum") {
  auto x = Tensor<double>::ones(TensorShape{1, 1, 3, 3});
  ConvParams<double> p{Tensor<double>::ones(TensorShape{1, 1, 3, 3}), {}, 1, 0};
  auto y = conv2d(x, p);
  CHECK(y.shape() == TensorShape{1, 1, 1, 1});
  CHECK(y.values()[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d shape formula, stride 2 pad 1") {
  Pcg32 rng(7);
  Tensor<double> x(TensorShape{1, 1, 4, 4});
  oracle::fill_random(x, rng);
  ConvParams<double> p{Tensor<double>::ones(TensorShape{1, 1, 3, 3}), {}, 2, 1};
  auto y = conv2d(x, p);
  CHECK(y.shape() == TensorShape{1, 1, 2, 2});
}

TEST_CASE("conv2d matches the naive six-loop oracle") {
  Pcg32 rng(42);
  Tensor<double> x(TensorShape{2, 3, 8, 8});
  Tensor<double> w(TensorShape{4, 3, 3, 3});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  std::vector<double> bias = {0.1, -0.2, 0.3, 0.05};
  Tensor<double> bias_t =
      Tensor<double>::from_values(TensorShape{1, 4, 1, 1}, bias);

  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      ConvParams<double> p{w, bias_t, stride, pad};
      auto got = conv2d(x, p);
      auto want = oracle::naive_conv2d(x, w, &bias, stride, pad);
      CHECK(oracle::max_rel_diff(got, want) < 1e-6);
    }
  }
}

TEST_CASE("conv2d rejects bad geometry with the offending dimension named") {
  Tensor<double> x(TensorShape{1, 2, 4, 4});
  ConvParams<double> p{Tensor<double>::ones(TensorShape{1, 3, 3, 3}), {}, 1, 0};
  CHECK_THROWS_WITH_AS(conv2d(x, p),
                       doctest::Contains("2 channels but weight expects 3"),
                       std::invalid_argument);
  ConvParams<double> big{Tensor<double>::ones(TensorShape{1, 2, 5, 5}), {}, 1, 0};
  CHECK_THROWS_AS(conv2d(x, big), std::invalid_argument);
}

TEST_CASE("strided conv equals stride-1 conv subsampled") {
  // the skipping identity: stride s keeps every s-th spatial position
  Pcg32 rng(3);
  Tensor<double> x(TensorShape{1, 2, 10, 10});
  Tensor<double> w(TensorShape{3, 2, 3, 3});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  for (int s : {2, 3}) {
    ConvParams<double> dense{w, {}, 1, 1};
    ConvParams<double> strided{w, {}, s, 1};
    auto full = conv2d(x, dense);
    auto sub = conv2d(x, strided);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < sub.shape().h; ++i)
        for (int j = 0; j < sub.shape().w; ++j)
          CHECK(sub.at(0, c, i, j) ==
                doctest::Approx(full.at(0, c, i * s, j * s)).epsilon(1e-12));
  }
}

TEST_CASE("asymmetric sampling: stride-2 window coverage differs by row parity") {
  auto cover = oracle::window_coverage(12, 12, 3, 2, 0);
  // interior rows only, away from the border
  CHECK(cover[4][5] != cover[5][5]);
  CHECK(cover[4][5] == 2);
  CHECK(cover[5][5] == 1);
  auto dense = oracle::window_coverage(12, 12, 3, 1, 0);
  for (int r = 2; r < 9; ++r) CHECK(dense[r][5] == dense[r + 1][5]);
}

TEST_CASE("max_pool2d basics") {
  auto x = Tensor<double>::from_values(TensorShape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = max_pool2d(x, 2, 2);
  CHECK(y.shape() == TensorShape{1, 1, 1, 1});
  CHECK(y.values()[0] == 4.0);

  auto c = Tensor<double>(TensorShape{1, 2, 4, 4}, 3.5);
  auto yc = max_pool2d(c, 2, 2);
  for (auto v : yc.values()) CHECK(v == 3.5);

  CHECK_THROWS_AS(max_pool2d(x, 3, 1), std::invalid_argument);
}

TEST_CASE("max_pool2d matches brute-force window max") {
  Pcg32 rng(11);
  Tensor<double> x(TensorShape{1, 2, 6, 6});
  oracle::fill_random(x, rng);
  auto got = max_pool2d(x, 2, 2);
  auto want = oracle::naive_max_pool2d(x, 2, 2);
  CHECK(oracle::max_rel_diff(got, want) == 0.0);
}

TEST_CASE("batch_norm training normalizes to zero mean unit variance") {
  Pcg32 rng(5);
  Tensor<double> x(TensorShape{4, 3, 5, 5});
  oracle::fill_random(x, rng, -2.0, 3.0);
  auto st = BatchNormState<double>::make(3);
  auto y = batch_norm(x, st, true);
  const double m = 4.0 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) mu += y.at(n, c, i, j);
    mu /= m;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          double d = y.at(n, c, i, j) - mu;
          var += d * d;
        }
    var /= m;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("batch_norm eval with zero variance is guarded by epsilon") {
  Tensor<double> x(TensorShape{2, 1, 2, 2}, 1.0);
  auto st = BatchNormState<double>::make(1);
  st.gamma.values()[0] = 2.0;
  st.beta.values()[0] = 3.0;
  st.running_mean.values()[0] = 1.0;
  st.running_var.values()[0] = 0.0;
  auto y = batch_norm(x, st, false);
  for (auto v : y.values()) CHECK(v == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("batch_norm matches the direct formula oracle") {
  Pcg32 rng(9);
  Tensor<double> x(TensorShape{3, 4, 6, 6});
  oracle::fill_random(x, rng, -1.0, 4.0);
  auto st = BatchNormState<double>::make(4);
  std::vector<double> gamma = {1.0, 0.5, 2.0, -1.0};
  std::vector<double> beta = {0.0, 1.0, -0.5, 0.25};
  for (int c = 0; c < 4; ++c) {
    st.gamma.values()[c] = gamma[c];
    st.beta.values()[c] = beta[c];
  }
  auto got = batch_norm(x, st, true);
  auto want = oracle::naive_batch_norm_train(x, gamma, beta, 1e-5);
  CHECK(oracle::max_rel_diff(got, want) < 1e-9);
}

TEST_CASE("batch_norm channel mismatch errors") {
  Tensor<double> x(TensorShape{1, 3, 2, 2});
  auto st = BatchNormState<double>::make(4);
  CHECK_THROWS_AS(batch_norm(x, st, true), std::invalid_argument);
}

TEST_CASE("activations") {
  auto x = Tensor<double>::from_values(TensorShape{1, 1, 1, 4},
                                       {-1.0, 2.0, 0.0, 1.0});
  auto r = activation(x, Activation::relu);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);
  auto s = activation(x, Activation::silu);
  CHECK(s.values()[2] == 0.0);
  CHECK(s.values()[3] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("linear identity, broadcast bias, and naive matmul oracle") {
  // identity weight, zero bias -> output = input
  Tensor<double> x(TensorShape{2, 4, 1, 1});
  Pcg32 rng(13);
  oracle::fill_random(x, rng);
  Tensor<double> eye(TensorShape{4, 4, 1, 1});
  for (int i = 0; i < 4; ++i) eye.values()[i * 4 + i] = 1.0;
  auto y = linear<double>(x, eye, nullptr);
  CHECK(oracle::max_rel_diff(y, x) == 0.0);

  // zero weight, bias b -> every row equals b
  Tensor<double> zero_w(TensorShape{3, 4, 1, 1});
  auto b = Tensor<double>::from_values(TensorShape{1, 3, 1, 1}, {1.0, -2.0, 0.5});
  auto yb = linear(x, zero_w, &b);
  for (int n = 0; n < 2; ++n) {
    CHECK(yb.at(n, 0, 0, 0) == 1.0);
    CHECK(yb.at(n, 1, 0, 0) == -2.0);
    CHECK(yb.at(n, 2, 0, 0) == 0.5);
  }

  // random case against the naive oracle
  Tensor<double> x8(TensorShape{4, 8, 1, 1});
  Tensor<double> w(TensorShape{10, 8, 1, 1});
  oracle::fill_random(x8, rng);
  oracle::fill_random(w, rng);
  std::vector<double> bias(10);
  for (auto& v : bias) v = rng.uniform(-1, 1);
  auto bt = Tensor<double>::from_values(TensorShape{1, 10, 1, 1}, bias);
  auto got = linear(x8, w, &bt);
  auto want = oracle::naive_linear(x8, w, &bias);
  CHECK(oracle::max_rel_diff(got, want) < 1e-12);

  Tensor<double> wrong(TensorShape{10, 9, 1, 1});
  CHECK_THROWS_AS(linear<double>(x8, wrong, nullptr), std::invalid_argument);
}

TEST_CASE("global_avg_pool") {
  Tensor<double> c(TensorShape{2, 3, 4, 4}, 5.0);
  auto y = global_avg_pool(c);
  CHECK(y.shape() == TensorShape{2, 3, 1, 1});
  for (auto v : y.values()) CHECK(v == 5.0);

  auto q = Tensor<double>::from_values(TensorShape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(q).values()[0] == doctest::Approx(2.5));

  Pcg32 rng(17);
  Tensor<double> x(TensorShape{2, 5, 7, 3});
  oracle::fill_random(x, rng);
  CHECK(oracle::max_rel_diff(global_avg_pool(x),
                             oracle::naive_global_avg_pool(x)) < 1e-6);
}

TEST_CASE("forward ops are deterministic") {
  Pcg32 rng(23);
  Tensor<float> x(TensorShape{2, 3, 8, 8});
  Tensor<float> w(TensorShape{4, 3, 3, 3});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  ConvParams<float> p{w, {}, 2, 1};
  auto a = conv2d(x, p);
  auto b = conv2d(x, p);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(a.values()[i] == b.values()[i]);  // bit-identical
}
