// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dse/tensor.hpp"

#include <catch2/catch.hpp>
#include <cmath>

#include "gradcheck.hpp"

using namespace dse;
using namespace dse::ad;
using dse::test::DTape;
using dse::test::DTensor;
using dse::test::max_rel_grad_error;
using dse::test::project;
using dse::test::random_tensor;
using dse::test::random_tensor_away_from;

TEST_CASE("forward basics", "[tensor]") {
  CHECK(sigmoid<double>(nullptr, DTensor::scalar(0.0)).item() == Approx(0.5));
  CHECK(tanh_op<double>(nullptr, DTensor::scalar(0.0)).item() == Approx(0.0).margin(1e-15));

  DTensor ones = DTensor::from({2, 3}, {1, 1, 1, 1, 1, 1});
  CHECK(reduce_mean<double>(nullptr, ones).item() == Approx(1.0));
  CHECK(reduce_sum<double>(nullptr, ones).item() == Approx(6.0));

  DTensor x = DTensor::from({4}, {-2.0, -0.5, 0.5, 2.0});
  const auto r = relu<double>(nullptr, x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 0.5);
  CHECK(r.data()[3] == 2.0);

  CHECK_THROWS_AS(add<double>(nullptr, DTensor::zeros({2, 3}), DTensor::zeros({3, 2})),
                  DimensionError);
  CHECK_THROWS_AS(reduce_mean_axes<double>(nullptr, DTensor::zeros({2, 3}), {5}), DimensionError);
}

TEST_CASE("scalar broadcasting", "[tensor]") {
  DTensor x = DTensor::from({3}, {1.0, 2.0, 3.0});
  DTensor c = DTensor::scalar(2.0);
  const auto y = mul<double>(nullptr, x, c);
  CHECK(y.data()[2] == Approx(6.0));
  const auto z = divide<double>(nullptr, x, c);
  CHECK(z.data()[1] == Approx(1.0));
  const auto w = sub<double>(nullptr, c, x);
  CHECK(w.data()[0] == Approx(1.0));
}

TEST_CASE("elementwise and reduction gradients", "[tensor][gradcheck]") {
  Rng rng(1001);
  DTensor a = random_tensor(rng, {3, 4}, true);
  DTensor b = random_tensor_away_from(rng, {3, 4}, true, 0.2);
  DTensor s = random_tensor_away_from(rng, {1}, true, 0.3);
  DTensor w = random_tensor(rng, {3, 4}, false);

  SECTION("add/sub/mul/divide, tensor and scalar") {
    auto loss = [&](DTape* tp) {
      auto t1 = add(tp, a, b);
      auto t2 = sub(tp, t1, mul(tp, a, b));
      auto t3 = divide(tp, t2, s);
      auto t4 = mul(tp, t3, s);
      auto t5 = add(tp, t4, s);
      return project(tp, t5, w);
    };
    CHECK(max_rel_grad_error(loss, {a, b, s}) < 1e-4);
  }

  SECTION("unary chain") {
    auto loss = [&](DTape* tp) {
      auto t = tanh_op(tp, a);
      t = sigmoid(tp, t);
      t = exp_op(tp, scale(tp, t, 0.3));
      t = log_op(tp, add_const(tp, t, 0.5));
      t = sqrt_op(tp, add_const(tp, mul(tp, t, t), 0.1));
      return project(tp, t, w);
    };
    CHECK(max_rel_grad_error(loss, {a}) < 1e-4);
  }

  SECTION("kinked ops, inputs away from the kink") {
    auto loss = [&](DTape* tp) {
      auto t = add(tp, relu(tp, b), abs_op(tp, b));
      return project(tp, t, w);
    };
    CHECK(max_rel_grad_error(loss, {b}) < 1e-4);
  }

  SECTION("neg and reductions") {
    auto loss = [&](DTape* tp) {
      auto t = neg(tp, a);
      auto m = reduce_mean(tp, t);
      auto sm = reduce_sum(tp, mul(tp, a, a));
      return add(tp, m, sm);
    };
    CHECK(max_rel_grad_error(loss, {a}) < 1e-4);
  }
}

TEST_CASE("axis reductions", "[tensor][gradcheck]") {
  Rng rng(1002);
  DTensor x = random_tensor(rng, {2, 3, 4, 5}, true);
  DTensor w1 = random_tensor(rng, {2, 1, 1, 5}, false);
  DTensor w2 = random_tensor(rng, {2, 3, 1, 1}, false);

  SECTION("mean over middle axes") {
    auto loss = [&](DTape* tp) {
      return project(tp, reduce_mean_axes(tp, x, {1, 2}), w1);
    };
    CHECK(max_rel_grad_error(loss, {x}) < 1e-4);
  }

  SECTION("max over trailing axes routes to the argmax") {
    auto loss = [&](DTape* tp) {
      return project(tp, reduce_max_axes(tp, x, {2, 3}), w2);
    };
    CHECK(max_rel_grad_error(loss, {x}) < 1e-4);
  }

  SECTION("max forward picks the max") {
    DTensor t = DTensor::from({1, 1, 2, 2}, {1.0, 7.0, 3.0, 2.0});
    const auto m = reduce_max_axes<double>(nullptr, t, {2, 3});
    CHECK(m.numel() == 1);
    CHECK(m.item() == Approx(7.0));
  }
}

TEST_CASE("causal cumulative pools", "[tensor][gradcheck]") {
  Rng rng(1003);
  DTensor x = random_tensor_away_from(rng, {2, 3, 6}, true, 0.01);
  DTensor w = random_tensor(rng, {2, 3, 6}, false);

  SECTION("cummean forward") {
    DTensor t = DTensor::from({1, 4}, {2.0, 4.0, 6.0, 8.0});
    const auto y = cummean_last<double>(nullptr, t);
    CHECK(y.data()[0] == Approx(2.0));
    CHECK(y.data()[1] == Approx(3.0));
    CHECK(y.data()[3] == Approx(5.0));
  }

  SECTION("cummax forward") {
    DTensor t = DTensor::from({1, 4}, {2.0, 1.0, 5.0, 4.0});
    const auto y = cummax_last<double>(nullptr, t);
    CHECK(y.data()[0] == Approx(2.0));
    CHECK(y.data()[1] == Approx(2.0));
    CHECK(y.data()[2] == Approx(5.0));
    CHECK(y.data()[3] == Approx(5.0));
  }

  SECTION("gradients") {
    auto loss = [&](DTape* tp) {
      auto t = add(tp, cummean_last(tp, x), cummax_last(tp, x));
      return project(tp, t, w);
    };
    CHECK(max_rel_grad_error(loss, {x}) < 1e-4);
  }
}

TEST_CASE("shape ops carry gradients through", "[tensor][gradcheck]") {
  Rng rng(1004);
  DTensor x = random_tensor(rng, {2, 3, 4}, true);
  DTensor y = random_tensor(rng, {2, 2, 2}, true);

  auto loss = [&](DTape* tp) {
    auto r = reshape(tp, x, {3, 2, 4});
    auto p = permute(tp, r, {2, 0, 1});          // [4,3,2]
    auto s = slice(tp, p, 0, 1, 2);              // [2,3,2]
    auto f = flip0(tp, s);                       // [2,3,2]
    auto c = concat(tp, {reshape(tp, f, {2, 3, 2}), reshape(tp, y, {2, 2, 2})}, 1);  // [2,5,2]
    auto padded = pad_axis(tp, c, 2, 1, 1);      // [2,5,4]
    DTensor w = DTensor::zeros({2, 5, 4});
    Rng wr(7);
    for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = uniform(wr, -1, 1);
    return project(tp, padded, w);
  };
  CHECK(max_rel_grad_error(loss, {x, y}) < 1e-4);
}

TEST_CASE("matmul and bias", "[tensor][gradcheck]") {
  Rng rng(1005);
  DTensor a = random_tensor(rng, {3, 4}, true);
  DTensor b = random_tensor(rng, {4, 5}, true);
  DTensor bias = random_tensor(rng, {5}, true);
  DTensor w = random_tensor(rng, {3, 5}, false);

  SECTION("forward sanity") {
    DTensor eye = DTensor::from({2, 2}, {1, 0, 0, 1});
    DTensor m = DTensor::from({2, 2}, {1, 2, 3, 4});
    const auto y = matmul<double>(nullptr, m, eye);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == Approx(m.data()[i]));
    CHECK_THROWS_AS(matmul<double>(nullptr, a, a), DimensionError);
  }

  SECTION("gradients") {
    auto loss = [&](DTape* tp) {
      return project(tp, add_row_bias(tp, matmul(tp, a, b), bias), w);
    };
    CHECK(max_rel_grad_error(loss, {a, b, bias}) < 1e-4);
  }
}

TEST_CASE("broadcast scalers", "[tensor][gradcheck]") {
  Rng rng(1006);
  DTensor x = random_tensor(rng, {2, 4, 3, 5}, true);
  DTensor g = random_tensor(rng, {2, 4}, true);
  DTensor gt = random_tensor(rng, {2, 4, 1, 5}, true);
  DTensor m = random_tensor(rng, {2, 1, 3, 5}, true);
  DTensor w = random_tensor(rng, {2, 4, 3, 5}, false);

  auto loss = [&](DTape* tp) {
    auto t = scale_channels(tp, x, g);
    t = scale_channels_time(tp, t, gt);
    t = scale_map(tp, t, m);
    return project(tp, t, w);
  };
  CHECK(max_rel_grad_error(loss, {x, g, gt, m}) < 1e-4);
}

TEST_CASE("backward determinism", "[tensor][determinism]") {
  auto run = [] {
    Rng rng(77);
    DTensor a = random_tensor(rng, {4, 4}, true);
    DTensor b = random_tensor(rng, {4, 4}, true);
    DTape tape;
    auto loss = reduce_sum(&tape, mul(&tape, sigmoid(&tape, matmul(&tape, a, b)), a));
    a.zero_grad();
    b.zero_grad();
    tape.backward(loss);
    std::vector<double> out(a.grad(), a.grad() + a.numel());
    out.insert(out.end(), b.grad(), b.grad() + b.numel());
    out.push_back(loss.item());
    return out;
  };
  const auto r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) REQUIRE(r1[i] == r2[i]);
}
