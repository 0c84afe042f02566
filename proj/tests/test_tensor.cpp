#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "follipipe/tensor.hpp"

using follipipe::Tensor;

TEST_CASE("tensor shape and data length agree") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(3), std::out_of_range);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("row-major NCHW indexing") {
  Tensor t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at(1, 2, 3, 4) == 119.0);
  CHECK(t.at(0, 1, 0, 0) == 20.0);
  CHECK(t.at(1, 0, 0, 0) == 60.0);
}

TEST_CASE("reshape keeps data and rejects size changes") {
  Tensor t({2, 6}, 1.5);
  const Tensor r = t.reshaped({3, 4});
  CHECK(r.shape() == follipipe::Shape{3, 4});
  CHECK(r.values()[11] == 1.5);
  CHECK_THROWS(t.reshaped({5, 2}));
}

TEST_CASE("arithmetic and finiteness") {
  Tensor a({3}, 1.0);
  Tensor b({3}, 2.0);
  a += b;
  a *= 2.0;
  CHECK(a == Tensor({3}, 6.0));
  CHECK(a.all_finite());
  a[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(a.all_finite());
  CHECK_THROWS(a += Tensor({4}));
  CHECK(follipipe::shape_string({2, 3}) == "[2x3]");
}
