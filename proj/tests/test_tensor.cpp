#include <cmath>
#include <cstring>

#include <doctest.h>

#include "error.hpp"
#include "support/gradcheck.hpp"
#include "tensor.hpp"

using namespace gdpo;
using gdpo::testing::check_gradients;
using gdpo::testing::probe_like;
using gdpo::testing::probe_loss;
using gdpo::testing::random_tensor;

TEST_CASE("matmul basics") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor out = matmul(nullptr, eye, m);
  for (int i = 0; i < 6; ++i) CHECK(out.value()[i] == m.value()[i]);

  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor ones({2, 1}, {1, 1});
  Tensor prod = matmul(nullptr, a, ones);
  CHECK(prod.value()[0] == doctest::Approx(3.0));
  CHECK(prod.value()[1] == doctest::Approx(7.0));

  Tensor zero({2, 2});
  Tensor z = matmul(nullptr, zero, m);
  for (auto v : z.value()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(nullptr, m, a), Error);  // inner dim mismatch
}

TEST_CASE("softmax examples") {
  Tensor logits({1, 4}, {0.3, 0.3, 0.3, 0.3});
  auto [sm, lsm] = softmax_log_softmax(nullptr, logits, 1);
  for (auto v : sm.value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor pair({1, 2}, {0.0, std::log(3.0)});
  Tensor sm2 = softmax(nullptr, pair, 1);
  CHECK(sm2.value()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sm2.value()[1] == doctest::Approx(0.75).epsilon(1e-12));

  // shift invariance
  Rng rng(7);
  Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0, false);
  Tensor shifted = add_scalar(nullptr, x, 17.5);
  Tensor s1 = softmax(nullptr, x, 1);
  Tensor s2 = softmax(nullptr, shifted, 1);
  for (int i = 0; i < x.size(); ++i)
    CHECK(s1.value()[i] == doctest::Approx(s2.value()[i]).epsilon(1e-12));

  // rows sum to one; log-softmax consistent with softmax
  for (int r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 5; ++c) sum += s1.value()[r * 5 + c];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  Tensor ls = log_softmax(nullptr, x, 1);
  for (int i = 0; i < x.size(); ++i)
    CHECK(std::abs(ls.value()[i] - std::log(s1.value()[i])) < 1e-10);

  Tensor bad({1, 2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax(nullptr, bad, 1), Error);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones gradient") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tape tape;
    Tensor loss = sum_all(&tape, x);
    tape.backward(loss);
    for (auto g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    Tensor x({3}, {1, 2, 3}, true);
    Tape tape;
    Tensor loss = sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(x.grad()[2] == doctest::Approx(6.0));
  }
  SUBCASE("detached tensors hold no gradient") {
    Tensor x({3}, {1, 2, 3}, false);
    CHECK_THROWS_AS(x.grad(), Error);
    Tensor w({3}, {1, 1, 1}, true);
    Tape tape;
    Tensor loss = sum_all(&tape, mul(&tape, x, w));
    tape.backward(loss);  // fine: only w accumulates
    CHECK(w.grad()[0] == 1.0);
  }
  SUBCASE("repeated backward accumulates") {
    Tensor x({2}, {3, 4}, true);
    Tape tape;
    Tensor loss = sum_all(&tape, x);
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x({2}, {1, 2}, true);
    Tape tape;
    Tensor y = mul(&tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), Error);
  }
}

TEST_CASE("tape replay is bitwise deterministic") {
  auto run = [](std::vector<double>& grads) {
    Rng rng(11);
    Tensor x = random_tensor({4, 6}, rng, -1.0, 1.0);
    Tensor w = random_tensor({6, 3}, rng, -1.0, 1.0);
    Tensor g({3}, {1.0, 1.0, 1.0}, true);
    Tensor b({3}, {0.1, 0.2, 0.3}, true);
    Tape tape;
    Tensor h = layer_norm(&tape, matmul(&tape, x, w), g, b);
    Tensor loss = sum_all(&tape, softmax(&tape, h, 1));
    tape.backward(loss);
    for (auto v : x.grad()) grads.push_back(v);
    for (auto v : w.grad()) grads.push_back(v);
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient checks for every primitive") {
  const int kSeeds = 100;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) + 1);
    CAPTURE(seed);

    {  // add / sub / mul with matching shapes
      auto a = random_tensor({3, 4}, rng, -2, 2);
      auto b = random_tensor({3, 4}, rng, -2, 2);
      auto w1 = probe_like(a, rng);
      auto r1 = check_gradients({a, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, add(t, in[0], in[1]), w1);
      });
      CHECK_MESSAGE(r1.ok, r1.detail);
      auto r2 = check_gradients({a, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, sub(t, in[0], in[1]), w1);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
      auto r3 = check_gradients({a, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, mul(t, in[0], in[1]), w1);
      });
      CHECK_MESSAGE(r3.ok, r3.detail);
    }
    {  // broadcast over leading axes (both argument orders)
      auto a = random_tensor({3, 4}, rng, -2, 2);
      auto v = random_tensor({4}, rng, -2, 2);
      auto w = probe_like(a, rng);
      auto r = check_gradients({a, v}, [&](Tape* t, const auto& in) {
        return probe_loss(t, add(t, in[0], in[1]), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      auto r2 = check_gradients({a, v}, [&](Tape* t, const auto& in) {
        return probe_loss(t, sub(t, in[1], in[0]), w);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
      auto r3 = check_gradients({a, v}, [&](Tape* t, const auto& in) {
        return probe_loss(t, mul(t, in[1], in[0]), w);
      });
      CHECK_MESSAGE(r3.ok, r3.detail);
    }
    {  // scalar ops
      auto a = random_tensor({2, 5}, rng, -2, 2);
      auto w = probe_like(a, rng);
      auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, add_scalar(t, in[0], 0.7), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, mul_scalar(t, in[0], -1.3), w);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
    }
    {  // matmul and transpose
      auto a = random_tensor({3, 4}, rng, -1, 1);
      auto b = random_tensor({4, 2}, rng, -1, 1);
      Tensor w({3, 2});
      for (auto& x : w.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r = check_gradients({a, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, matmul(t, in[0], in[1]), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      Tensor wt({4, 3});
      for (auto& x : wt.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, transpose(t, in[0]), wt);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
    }
    {  // relu / gelu, inputs kept away from the kink
      Tensor a({2, 6}, true);
      for (auto& x : a.value()) {
        const double u = 2.0 * rng.uniform() - 1.0;
        x = u + (u >= 0 ? 0.05 : -0.05);
      }
      auto w = probe_like(a, rng);
      auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, relu(t, in[0]), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, gelu(t, in[0]), w);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
    }
    {  // log_clamped and clamp_min away from their thresholds
      auto a = random_tensor({7}, rng, 0.1, 2.0);
      auto w = probe_like(a, rng);
      auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, log_clamped(t, in[0], 1e-12), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, clamp_min(t, in[0], -1.0), w);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
    }
    {  // softmax / log_softmax over both axes
      auto a = random_tensor({3, 4}, rng, -2, 2);
      auto w = probe_like(a, rng);
      for (int axis = 0; axis < 2; ++axis) {
        auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
          return probe_loss(t, softmax(t, in[0], axis), w);
        });
        CHECK_MESSAGE(r.ok, r.detail);
        auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
          return probe_loss(t, log_softmax(t, in[0], axis), w);
        });
        CHECK_MESSAGE(r2.ok, r2.detail);
      }
    }
    {  // layer norm
      auto x = random_tensor({3, 6}, rng, -2, 2);
      auto g = random_tensor({6}, rng, 0.5, 1.5);
      auto b = random_tensor({6}, rng, -0.5, 0.5);
      auto w = probe_like(x, rng);
      auto r = check_gradients({x, g, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, layer_norm(t, in[0], in[1], in[2]), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
    }
    {  // embedding lookup
      auto table = random_tensor({5, 3}, rng, -1, 1);
      std::vector<int> idx{4, 0, 2, 2};
      Tensor w({4, 3});
      for (auto& x : w.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r = check_gradients({table}, [&](Tape* t, const auto& in) {
        return probe_loss(t, embedding(t, in[0], idx), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
    }
    {  // reductions
      auto a = random_tensor({2, 3, 2}, rng, -2, 2);
      auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
        return sum_all(t, in[0]);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return mean_all(t, in[0]);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
      Tensor w({2, 2});
      for (auto& x : w.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r3 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, sum_axis(t, in[0], 1), w);
      });
      CHECK_MESSAGE(r3.ok, r3.detail);
    }
    {  // concat and reshape
      auto a = random_tensor({3, 2}, rng, -1, 1);
      auto b = random_tensor({3, 4}, rng, -1, 1);
      Tensor w({3, 6});
      for (auto& x : w.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r = check_gradients({a, b}, [&](Tape* t, const auto& in) {
        return probe_loss(t, concat(t, in[0], in[1], 1), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      Tensor w2({6});
      for (auto& x : w2.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, reshape(t, in[0], {6}), w2);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
    }
    {  // gathers and the pair transpose
      auto a = random_tensor({4, 3}, rng, -1, 1);
      std::vector<int> rows{2, 2, 0};
      Tensor w({3, 3});
      for (auto& x : w.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, select_rows(t, in[0], rows), w);
      });
      CHECK_MESSAGE(r.ok, r.detail);
      std::vector<int> idx{1, 0, 2, 1};
      Tensor w2({4});
      for (auto& x : w2.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r2 = check_gradients({a}, [&](Tape* t, const auto& in) {
        return probe_loss(t, gather_per_row(t, in[0], idx), w2);
      });
      CHECK_MESSAGE(r2.ok, r2.detail);
      auto p = random_tensor({9, 2}, rng, -1, 1);
      Tensor w3({9, 2});
      for (auto& x : w3.value()) x = 2.0 * rng.uniform() - 1.0;
      auto r3 = check_gradients({p}, [&](Tape* t, const auto& in) {
        return probe_loss(t, pair_transpose(t, in[0], 3), w3);
      });
      CHECK_MESSAGE(r3.ok, r3.detail);
    }
  }
}
