#include <doctest.h>

#include <cmath>

#include "segrobust/error.hpp"
#include "segrobust/tensor.hpp"
#include "support/oracles.hpp"

using namespace segrobust;

namespace {

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("delta kernel scales the single voxel") {
  Tensor x = Tensor::from_data({1, 1, 1, 1}, {2.0});
  Tensor k = Tensor::zeros({1, 1, 3, 3, 3});
  k.mutable_data()[13] = 3.0;  // center tap (1,1,1)
  Tensor y = conv3d(x, k, Tensor(), 1, Padding::Same);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == 6.0);
}

TEST_CASE("all-ones box kernel counts covered voxels") {
  Tensor x = Tensor::full({1, 4, 4, 4}, 1.0);
  Tensor k = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor y = conv3d(x, k, Tensor(), 1, Padding::Same);
  auto at = [&](int64_t z, int64_t yy, int64_t xx) {
    return y.data()[static_cast<size_t>((z * 4 + yy) * 4 + xx)];
  };
  CHECK(at(1, 1, 1) == 27.0);  // interior: full window
  CHECK(at(0, 0, 0) == 8.0);   // corner: 2x2x2 inside
  CHECK(at(0, 1, 1) == 18.0);  // face
}

TEST_CASE("zero input gives zero output for any kernel") {
  Rng rng(40);
  Tensor k = oracle::random_tensor({2, 3, 3, 3, 3}, rng, -1, 1);
  Tensor y = conv3d(Tensor::zeros({3, 4, 4, 4}), k, Tensor(), 1, Padding::Same);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv3d matches the seven-loop reference on 50 random cases") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const int variant = trial % 3;
    const int64_t cin = 1 + static_cast<int64_t>(rng.uniform_int(3));
    const int64_t cout = 1 + static_cast<int64_t>(rng.uniform_int(3));
    int64_t d, h, w, k, stride;
    Padding pad;
    if (variant == 0) {  // 3^3 stride 1 Same
      k = 3, stride = 1, pad = Padding::Same;
      d = 1 + static_cast<int64_t>(rng.uniform_int(6));
      h = 1 + static_cast<int64_t>(rng.uniform_int(6));
      w = 1 + static_cast<int64_t>(rng.uniform_int(6));
    } else if (variant == 1) {  // 3^3 stride 2 halving (even extents)
      k = 3, stride = 2, pad = Padding::HalveAsymmetric;
      d = 2 * (1 + static_cast<int64_t>(rng.uniform_int(3)));
      h = 2 * (1 + static_cast<int64_t>(rng.uniform_int(3)));
      w = 2 * (1 + static_cast<int64_t>(rng.uniform_int(3)));
    } else {  // 1^3 channel mixing
      k = 1, stride = 1, pad = Padding::None;
      d = 1 + static_cast<int64_t>(rng.uniform_int(6));
      h = 1 + static_cast<int64_t>(rng.uniform_int(6));
      w = 1 + static_cast<int64_t>(rng.uniform_int(6));
    }
    Tensor x = oracle::random_tensor({cin, d, h, w}, rng, -2, 2);
    Tensor kern = oracle::random_tensor({cout, cin, k, k, k}, rng, -1, 1);
    Tensor bias = oracle::random_tensor({cout}, rng, -0.5, 0.5);
    Tensor y = conv3d(x, kern, bias, static_cast<int>(stride), pad);
    const std::vector<double> ref = oracle::conv3d_reference(
        x.data(), cin, d, h, w, kern.data(), cout, k, stride, bias.data());
    CHECK(max_abs_diff(y.data(), ref) < 1e-12);
  }
}

TEST_CASE("stride-2 halving shapes and coordinates") {
  // Input coordinate is 2o + t - 1 per axis, so the center tap (t=1) of
  // output o reads input 2o: even coordinates only.
  Tensor k = Tensor::zeros({1, 1, 3, 3, 3});
  k.mutable_data()[13] = 1.0;  // center tap only

  Tensor x = Tensor::zeros({1, 4, 4, 4});
  x.mutable_data()[static_cast<size_t>((2 * 4 + 2) * 4 + 2)] = 1.0;
  Tensor y = conv3d(x, k, Tensor(), 2, Padding::HalveAsymmetric);
  REQUIRE(y.shape() == Shape{1, 2, 2, 2});
  CHECK(y.data()[7] == 1.0);  // output (1,1,1) reads input (2,2,2)
  double total = 0;
  for (double v : y.data()) total += v;
  CHECK(total == 1.0);

  // Odd-coordinate mass is invisible to the center tap.
  Tensor x2 = Tensor::zeros({1, 4, 4, 4});
  x2.mutable_data()[static_cast<size_t>((1 * 4 + 1) * 4 + 1)] = 1.0;
  Tensor y2 = conv3d(x2, k, Tensor(), 2, Padding::HalveAsymmetric);
  for (double v : y2.data()) CHECK(v == 0.0);
}

TEST_CASE("conv3d rejects invalid configurations") {
  Tensor x = Tensor::zeros({2, 4, 4, 4});
  Tensor k3 = Tensor::zeros({1, 2, 3, 3, 3});
  Tensor k1 = Tensor::zeros({1, 2, 1, 1, 1});
  CHECK_THROWS_AS(conv3d(x, k3, Tensor(), 2, Padding::Same), ConfigError);
  CHECK_THROWS_AS(conv3d(x, k1, Tensor(), 1, Padding::Same), ConfigError);
  CHECK_THROWS_AS(conv3d(x, k3, Tensor(), 3, Padding::Same), ConfigError);
  // stride 2 needs even extents
  Tensor odd = Tensor::zeros({2, 3, 4, 4});
  CHECK_THROWS_AS(conv3d(odd, k3, Tensor(), 2, Padding::HalveAsymmetric),
                  ShapeError);
  // channel mismatch
  Tensor kbad = Tensor::zeros({1, 3, 3, 3, 3});
  CHECK_THROWS_AS(conv3d(x, kbad, Tensor(), 1, Padding::Same), ShapeError);
  // bias shape
  Tensor bbad = Tensor::zeros({2});
  CHECK_THROWS_AS(conv3d(x, k3, bbad, 1, Padding::Same), ShapeError);
}

TEST_CASE("conv gradients match finite differences for all variants") {
  Rng rng(42);
  struct Case {
    int64_t k, stride;
    Padding pad;
    Shape in;
  };
  const Case cases[] = {
      {3, 1, Padding::Same, {2, 3, 3, 3}},
      {3, 2, Padding::HalveAsymmetric, {2, 4, 4, 4}},
      {1, 1, Padding::None, {3, 2, 2, 2}},
  };
  for (const Case& c : cases) {
    CAPTURE(c.k);
    CAPTURE(c.stride);
    Tensor kern =
        oracle::random_tensor({2, c.in[0], c.k, c.k, c.k}, rng, -1, 1);
    Tensor bias = oracle::random_tensor({2}, rng, -0.5, 0.5);
    Tensor x = oracle::random_tensor(c.in, rng, -1, 1);

    auto loss_of = [&](const Tensor& input, const Tensor& kk,
                       const Tensor& bb) {
      Tensor y = conv3d(input, kk, bb, static_cast<int>(c.stride), c.pad);
      return sum(mul(y, y));
    };
    CHECK(oracle::max_relative_grad_error(x.clone_detached(), [&](const Tensor& t) {
            return loss_of(t, kern, bias);
          }) < 1e-4);
    CHECK(oracle::max_relative_grad_error(kern.clone_detached(),
                                          [&](const Tensor& t) {
                                            return loss_of(x, t, bias);
                                          }) < 1e-4);
    CHECK(oracle::max_relative_grad_error(bias.clone_detached(),
                                          [&](const Tensor& t) {
                                            return loss_of(x, kern, t);
                                          }) < 1e-4);
  }
}
