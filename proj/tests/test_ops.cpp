#include <cmath>

#include "doctest.h"
#include "follipipe/grad_check.hpp"
#include "follipipe/ops.hpp"
#include "support.hpp"

using namespace follipipe;
using testing::dot;
using testing::random_tensor;

namespace {

// Six nested loops, zero padding, explicit dilation.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oh = (h + 2 * s.padding - s.dilation * (s.kernel_h - 1) - 1) / s.stride + 1;
  const std::size_t ow = (wd + 2 * s.padding - s.dilation * (s.kernel_w - 1) - 1) / s.stride + 1;
  Tensor out({n, s.out_channels, oh, ow});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const long iy = static_cast<long>(y * s.stride + ky * s.dilation) - static_cast<long>(s.padding);
                const long ix = static_cast<long>(xo * s.stride + kx * s.dilation) - static_cast<long>(s.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at(i, ci, iy, ix) * w.at(o, ci, ky, kx);
              }
          out.at(i, o, y, xo) = acc;
        }
  return out;
}

Tensor naive_maxpool(const Tensor& x, std::size_t k, std::size_t s) {
  const std::size_t oh = (x.dim(2) - k) / s + 1, ow = (x.dim(3) - k) / s + 1;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double m = -INFINITY;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) m = std::max(m, x.at(n, c, y * s + dy, xo * s + dx));
          out.at(n, c, y, xo) = m;
        }
  return out;
}

double max_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  return max_abs_diff(a, b);
}

}  // namespace

TEST_CASE("conv2d identity kernel returns the input") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({1, 1, 3, 3}, rng);
  const ConvSpec s = ConvSpec::square(1, 1, 1);
  CHECK(conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), s) == x);
}

TEST_CASE("conv2d dilation 2 over all-ones 5x5 gives 9") {
  const ConvSpec s = ConvSpec::square(1, 1, 3, 1, 0, 2);
  const Tensor out = conv2d(Tensor({1, 1, 5, 5}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), s);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == 9.0);
}

TEST_CASE("conv2d matches the direct-loop oracle") {
  std::mt19937_64 rng(7);
  for (std::size_t dilation : {1, 2})
    for (std::size_t pad : {0, 1})
      for (std::size_t stride : {1, 2}) {
        const ConvSpec s = ConvSpec::square(3, 4, 3, stride, pad, dilation);
        const Tensor x = random_tensor({2, 3, 8, 8}, rng);
        const Tensor w = random_tensor(s.weight_shape(), rng);
        const Tensor b = random_tensor({4}, rng);
        CHECK(max_diff(conv2d(x, w, b, s), naive_conv(x, w, b, s)) < 1e-12);
      }
  SUBCASE("pointwise and rectangular kernels") {
    ConvSpec s{3, 2, 1, 1};
    const Tensor x = random_tensor({2, 3, 5, 4}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    const Tensor b = random_tensor({2}, rng);
    CHECK(max_diff(conv2d(x, w, b, s), naive_conv(x, w, b, s)) < 1e-12);
    s = ConvSpec{3, 2, 1, 3, 1, 1, 1};
    w = random_tensor(s.weight_shape(), rng);
    CHECK(max_diff(conv2d(x, w, b, s), naive_conv(x, w, b, s)) < 1e-12);
  }
}

TEST_CASE("dilated conv equals undilated conv with a zero-inflated kernel") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 2 + trial % 2;
    const ConvSpec dilated = ConvSpec::square(2, 3, 3, 1, d, d);
    const std::size_t k = d * 2 + 1;
    const ConvSpec plain = ConvSpec::square(2, 3, k, 1, d, 1);
    const Tensor x = random_tensor({1, 2, 7, 7}, rng);
    const Tensor w = random_tensor(dilated.weight_shape(), rng);
    const Tensor b = random_tensor({3}, rng);
    Tensor inflated(plain.weight_shape());
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) inflated.at(o, c, i * d, j * d) = w.at(o, c, i, j);
    CHECK(max_diff(conv2d(x, w, b, dilated), conv2d(x, inflated, b, plain)) < 1e-12);
  }
}

TEST_CASE("conv2d rejects inconsistent shapes with a named dimension") {
  const ConvSpec s = ConvSpec::square(3, 4, 3);
  CHECK_THROWS_WITH_AS(conv2d(Tensor({1, 2, 5, 5}), Tensor(s.weight_shape()), Tensor({4}), s),
                       doctest::Contains("channel"), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 2, 2}), Tensor(s.weight_shape()), Tensor({4}), s), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 5, 5}), Tensor(s.weight_shape()), Tensor({3}), s), std::invalid_argument);
}

TEST_CASE("conv2d_backward basics") {
  std::mt19937_64 rng(3);
  const ConvSpec s = ConvSpec::square(3, 2, 3, 1, 1);
  const Tensor x = random_tensor({2, 3, 5, 5}, rng);
  const Tensor w = random_tensor(s.weight_shape(), rng);
  const ConvGrads zero = conv2d_backward(Tensor({2, 2, 5, 5}), x, w, s);
  CHECK(zero.input == Tensor(x.shape()));
  CHECK(zero.weights == Tensor(w.shape()));
  CHECK(zero.bias == Tensor({2}));

  const Tensor g = random_tensor({1, 1, 3, 3}, rng);
  const ConvGrads id = conv2d_backward(g, Tensor({1, 1, 3, 3}), Tensor({1, 1, 1, 1}, 1.0), ConvSpec::square(1, 1, 1));
  CHECK(id.input == g);
}

TEST_CASE("conv2d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const ConvSpec s = ConvSpec::square(2, 3, 3, 1 + seed % 2, seed % 3, 1 + seed % 2);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    Tensor b = random_tensor({3}, rng);
    const Tensor r = random_tensor(conv2d(x, w, b, s).shape(), rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) {
        ConvGrads g = conv2d_backward(r, x, w, s);
        *grads = {g.input, g.weights, g.bias};
      }
      return dot(r, conv2d(x, w, b, s));
    };
    CHECK(grad_check(fn, {&x, &w, &b}).max_relative_error < 1e-6);
  }
}

TEST_CASE("relu forward and backward") {
  CHECK(relu(Tensor({3}, {-1.0, 0.0, 2.0})) == Tensor({3}, {0.0, 0.0, 2.0}));
  const Tensor pos({4}, {0.5, 1.0, 2.0, 3.0});
  CHECK(relu(pos) == pos);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({2, 3, 4}, rng);
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    const Tensor r = random_tensor(x.shape(), rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) *grads = {relu_backward(r, x)};
      return dot(r, relu(x));
    };
    CHECK(grad_check(fn, {&x}).max_relative_error < 1e-6);
  }
}

TEST_CASE("maxpool2d forward, tie-break and oracle") {
  const Tensor one = maxpool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(one == Tensor({1, 1, 1, 1}, {4.0}));

  const Tensor flat({1, 1, 4, 4}, 2.5);
  CHECK(maxpool2d(flat, 2, 2) == Tensor({1, 1, 2, 2}, 2.5));
  const Tensor g = maxpool2d_backward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), flat, 2, 2);
  Tensor expect({1, 1, 4, 4});
  expect.at(0, 0, 0, 0) = 1;
  expect.at(0, 0, 0, 2) = 2;
  expect.at(0, 0, 2, 0) = 3;
  expect.at(0, 0, 2, 2) = 4;
  CHECK(g == expect);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Tensor x = random_tensor({2, 3, 8, 6}, rng);
    CHECK(maxpool2d(x, 2, 2) == naive_maxpool(x, 2, 2));
    CHECK(maxpool2d(x, 3, 1) == naive_maxpool(x, 3, 1));
  }
}

TEST_CASE("maxpool2d gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor r = random_tensor({1, 2, 3, 3}, rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) *grads = {maxpool2d_backward(r, x, 2, 2)};
      return dot(r, maxpool2d(x, 2, 2));
    };
    CHECK(grad_check(fn, {&x}).max_relative_error < 1e-6);
  }
}

TEST_CASE("global_avg_pool") {
  CHECK(global_avg_pool(Tensor({2, 3, 4, 5}, 1.75)) == Tensor({2, 3, 1, 1}, 1.75));
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({2, 3, 1, 1}, rng);
  CHECK(global_avg_pool(x) == x);
  const Tensor g = global_avg_pool_backward(Tensor({1, 1, 1, 1}, 1.0), {1, 1, 4, 5});
  for (double v : g.values()) CHECK(v == doctest::Approx(1.0 / 20.0).epsilon(1e-15));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r2(seed);
    Tensor in = random_tensor({2, 2, 3, 4}, r2);
    const Tensor r = random_tensor({2, 2, 1, 1}, r2);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) *grads = {global_avg_pool_backward(r, in.shape())};
      return dot(r, global_avg_pool(in));
    };
    CHECK(grad_check(fn, {&in}).max_relative_error < 1e-6);
  }
}

TEST_CASE("linear layer") {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3}, rng);
  CHECK(linear(x, eye, Tensor({3})) == x);
  const Tensor b = random_tensor({3}, rng);
  const Tensor out = linear(Tensor({2, 3}), eye, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 3; ++j) CHECK(out[n * 3 + j] == b[j]);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r2(seed);
    Tensor in = random_tensor({4, 3}, r2);
    Tensor w = random_tensor({3, 5}, r2);
    Tensor bias = random_tensor({5}, r2);
    Tensor oracle({4, 5});
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = bias[j];
        for (std::size_t f = 0; f < 3; ++f) acc += in[n * 3 + f] * w[f * 5 + j];
        oracle[n * 5 + j] = acc;
      }
    CHECK(max_diff(linear(in, w, bias), oracle) < 1e-12);
    const Tensor r = random_tensor({4, 5}, r2);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) {
        LinearGrads g = linear_backward(r, in, w);
        *grads = {g.input, g.weights, g.bias};
      }
      return dot(r, linear(in, w, bias));
    };
    CHECK(grad_check(fn, {&in, &w, &bias}).max_relative_error < 1e-6);
  }
}

TEST_CASE("softmax") {
  const Tensor u = softmax(Tensor({1, 3}));
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
  const Tensor big = softmax(Tensor({1, 3}, {1000.0, 0.0, 0.0}));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  std::mt19937_64 rng(9);
  const Tensor p = softmax(random_tensor({5, 4}, rng, -10, 10));
  for (std::size_t n = 0; n < 5; ++n) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += p[n * 4 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("nearest upsampling and resizing") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({1, 2, 3, 3}, rng);
  CHECK(upsample_nearest(x, 1) == x);
  const Tensor up = upsample_nearest(Tensor({1, 1, 1, 1}, 3.0), 4);
  CHECK(up == Tensor({1, 1, 4, 4}, 3.0));
  CHECK(resize_nearest(x, 6, 6) == upsample_nearest(x, 2));

  const Tensor small({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = resize_nearest(small, 4, 2);
  // out(i,j) = in(i*H/oh, j*W/ow)
  CHECK(r == Tensor({1, 1, 4, 2}, {1, 2, 1, 2, 4, 5, 4, 5}));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r2(seed);
    Tensor in = random_tensor({1, 2, 3, 5}, r2);
    const Tensor w1 = random_tensor({1, 2, 6, 10}, r2);
    const Tensor w2 = random_tensor({1, 2, 4, 3}, r2);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      if (grads) {
        Tensor g = upsample_nearest_backward(w1, 2);
        g += resize_nearest_backward(w2, 3, 5);
        *grads = {g};
      }
      return dot(w1, upsample_nearest(in, 2)) + dot(w2, resize_nearest(in, 4, 3));
    };
    CHECK(grad_check(fn, {&in}).max_relative_error < 1e-6);
  }
}

TEST_CASE("concat and split channels round trip") {
  std::mt19937_64 rng(8);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2, 3, 3, 3}, rng);
  const Tensor joined = concat_channels({&a, &b});
  CHECK(joined.shape() == Shape{2, 5, 3, 3});
  CHECK(joined.at(1, 3, 2, 1) == b.at(1, 1, 2, 1));
  const auto parts = split_channels(joined, {2, 3});
  CHECK(parts[0] == a);
  CHECK(parts[1] == b);
  CHECK_THROWS(split_channels(joined, {2, 2}));
}

TEST_CASE("grad_check catches a wrong gradient and restores inputs") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({4}, rng);
  const Tensor before = x;
  const GradFn wrong = [&](std::vector<Tensor>* grads) {
    double f = 0;
    for (double v : x.values()) f += v * v;
    if (grads) {
      Tensor g(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i];  // should be 2x
      *grads = {g};
    }
    return f;
  };
  CHECK(grad_check(wrong, {&x}).max_relative_error > 0.3);
  CHECK(x == before);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}
