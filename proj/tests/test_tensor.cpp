#include <doctest.h>

#include <cmath>
#include <random>

#include "npt/autodiff.hpp"
#include "npt/optim.hpp"
#include "test_util.hpp"

using namespace npt;
using npt::testing::max_abs_diff;
using npt::testing::random_permutation;
using npt::testing::random_tensor;

namespace {

Tensor3<double> make(Shape s, std::vector<double> values) { return Tensor3<double>(s, std::move(values)); }

}  // namespace

TEST_CASE("tensor storage is row-major over (n, c, v)") {
  Tensor3<double> t(2, 3, 4);
  t(1, 2, 3) = 7.0;
  CHECK(t[(1 * 3 + 2) * 4 + 3] == 7.0);
  CHECK(t.row(1, 2)[3] == 7.0);
  CHECK_THROWS_AS(Tensor3<double>(Shape{1, 2, 2}, std::vector<double>(3)), ShapeError);
}

TEST_CASE("pointwise_linear") {
  Tape<double> tape;
  SUBCASE("identity weight and zero bias reproduce the input") {
    std::mt19937_64 rng(1);
    auto x = tape.leaf(random_tensor({2, 3, 5}, rng));
    Tensor3<double> eye(1, 3, 3);
    for (int i = 0; i < 3; ++i) eye(0, i, i) = 1;
    auto y = pointwise_linear(x, tape.leaf(eye), tape.leaf(Tensor3<double>(1, 3, 1)));
    CHECK(max_abs_diff(y.value(), x.value()) == 0.0);
  }
  SUBCASE("hand-multiplied 2x2 case") {
    auto x = tape.leaf(make({1, 2, 2}, {1, 2, 3, 4}));
    auto y = pointwise_linear(x, tape.leaf(make({1, 1, 2}, {1, 1})), tape.leaf(make({1, 1, 1}, {0.5})));
    REQUIRE(y.shape() == Shape{1, 1, 2});
    CHECK(y.value()[0] == doctest::Approx(4.5));
    CHECK(y.value()[1] == doctest::Approx(6.5));
  }
  SUBCASE("bias gradient of sum(out) is N*V") {
    std::mt19937_64 rng(2);
    auto x = tape.leaf(random_tensor({2, 3, 5}, rng));
    auto w = tape.leaf(random_tensor({1, 4, 3}, rng));
    auto b = tape.leaf(random_tensor({1, 4, 1}, rng));
    tape.backward(sum_all(pointwise_linear(x, w, b)));
    for (Index c = 0; c < 4; ++c) CHECK(b.grad()[c] == doctest::Approx(10.0));
  }
  SUBCASE("shape mismatch names both shapes") {
    auto x = tape.leaf(Tensor3<double>(1, 3, 4));
    auto w = tape.leaf(Tensor3<double>(1, 2, 5));
    auto b = tape.leaf(Tensor3<double>(1, 2, 1));
    try {
      pointwise_linear(x, w, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1,2,5]") != std::string::npos);
      CHECK(msg.find("[1,3,4]") != std::string::npos);
    }
  }
}

TEST_CASE("instance_norm") {
  Tape<double> tape;
  SUBCASE("constant input normalizes to zero") {
    auto y = instance_norm(tape.leaf(Tensor3<double>(Shape{2, 3, 7}, 4.25)), 1e-5);
    for (Index i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == 0.0);
  }
  SUBCASE("two-point case") {
    auto y = instance_norm(tape.leaf(make({1, 1, 2}, {1, -1})), 1e-5);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.value()[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.9999950).epsilon(1e-7));
  }
  SUBCASE("single vertex yields zeros") {
    auto y = instance_norm(tape.leaf(make({1, 2, 1}, {3, -8})), 1e-5);
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == 0.0);
  }
  SUBCASE("per-slice statistics on random input") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto y = instance_norm(tape.leaf(random_tensor({2, 3, 4}, rng, -3, 3)), 1e-5).value();
      for (Index n = 0; n < 2; ++n) {
        for (Index c = 0; c < 3; ++c) {
          double mean = 0, sq = 0;
          for (double e : y.row(n, c)) mean += e;
          mean /= 4;
          for (double e : y.row(n, c)) sq += (e - mean) * (e - mean);
          CHECK(std::abs(mean) < 1e-12);
          // Inputs here have variance well above eps.
          CHECK(std::abs(std::sqrt(sq / 4) - 1) < 1e-3);
        }
      }
    }
  }
  SUBCASE("rejects non-positive eps") { CHECK_THROWS(instance_norm(tape.leaf(Tensor3<double>(1, 1, 2)), 0.0)); }
}

TEST_CASE("activations") {
  Tape<double> tape;
  auto r = relu(tape.leaf(make({1, 1, 3}, {-1, 0, 2})));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);
  CHECK(tanh_act(tape.leaf(make({1, 1, 1}, {0}))).value()[0] == 0.0);

  auto res = finite_diff_check([](Tape<double>&, Var<double> x) { return sum_all(tanh_act(x)); },
                               make({1, 1, 1}, {0}), 1e-6);
  CHECK(res.max_rel_error < 1e-6);
  Tape<double> t2;
  auto x0 = t2.leaf(make({1, 1, 1}, {0}));
  t2.backward(sum_all(tanh_act(x0)));
  CHECK(x0.grad()[0] == doctest::Approx(1.0));

  SUBCASE("relu subgradient at zero is zero") {
    Tape<double> t;
    auto x = t.leaf(make({1, 1, 3}, {-1, 0, 2}));
    t.backward(sum_all(relu(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
  }
}

TEST_CASE("elementwise combinators") {
  std::mt19937_64 rng(4);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 3, 4}, rng));
  CHECK(max_abs_diff(add(x, tape.leaf(Tensor3<double>(x.shape()))).value(), x.value()) == 0.0);

  auto coords = tape.leaf(Tensor3<double>(1, 3, 9));
  auto feats = tape.leaf(Tensor3<double>(1, 1024, 9));
  CHECK(concat_channels(coords, feats).shape() == Shape{1, 1027, 9});
  CHECK(concat_channels(feats, coords).shape() == Shape{1, 1027, 9});

  auto b = random_tensor({2, 3, 4}, rng);
  auto res = finite_diff_check(
      [&](Tape<double>& t, Var<double> a) { return sum_all(mul(a, t.leaf(b, false))); }, random_tensor({2, 3, 4}, rng),
      1e-6);
  CHECK(res.max_rel_error < 1e-6);

  CHECK_THROWS_AS(add(x, tape.leaf(Tensor3<double>(2, 3, 5))), ShapeError);
  CHECK_THROWS_AS(mul(x, tape.leaf(Tensor3<double>(2, 2, 4))), ShapeError);
  CHECK_THROWS_AS(concat_channels(x, tape.leaf(Tensor3<double>(1, 3, 4))), ShapeError);
  CHECK_THROWS_AS(concat_channels(x, tape.leaf(Tensor3<double>(2, 3, 5))), ShapeError);
}

TEST_CASE("global_max_pool") {
  Tape<double> tape;
  auto x = tape.leaf(make({1, 1, 3}, {1, 5, 2}));
  auto m = global_max_pool(x);
  CHECK(m.shape() == Shape{1, 1, 1});
  CHECK(m.value()[0] == 5.0);
  tape.backward(sum_all(m));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);

  SUBCASE("ties route gradient to the lowest index") {
    Tape<double> t;
    auto y = t.leaf(make({1, 1, 4}, {0, 3, 3, 1}));
    t.backward(sum_all(global_max_pool(y)));
    CHECK(y.grad()[1] == 1.0);
    CHECK(y.grad()[2] == 0.0);
  }
  SUBCASE("bit-identical under vertex permutation") {
    std::mt19937_64 rng(5);
    auto base = random_tensor({2, 6, 11}, rng);
    Tape<double> t;
    auto ref = global_max_pool(t.leaf(base)).value();
    for (int k = 0; k < 10; ++k) {
      auto perm = random_permutation(11, rng);
      auto out = global_max_pool(t.leaf(permute_columns(base, perm))).value();
      CHECK(out.storage() == ref.storage());
    }
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(6);
    auto res = finite_diff_check([](Tape<double>&, Var<double> v) { return sum_all(global_max_pool(v)); },
                                 random_tensor({2, 3, 5}, rng), 1e-6);
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("backward") {
  std::mt19937_64 rng(7);
  SUBCASE("sum gives all-ones gradient and seeds the root with one") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 2, 3}, rng));
    auto s = sum_all(x);
    tape.backward(s);
    for (Index i = 0; i < x.value().size(); ++i) CHECK(x.grad()[i] == 1.0);
    CHECK(s.grad()[0] == 1.0);
  }
  SUBCASE("composite program matches finite differences") {
    auto w = random_tensor({1, 4, 3}, rng);
    auto b = random_tensor({1, 4, 1}, rng);
    auto res = finite_diff_check(
        [&](Tape<double>& t, Var<double> x) {
          return sum_all(relu(pointwise_linear(x, t.leaf(w, false), t.leaf(b, false))));
        },
        random_tensor({2, 3, 6}, rng), 1e-6);
    CHECK(res.max_rel_error < 1e-4);
    CHECK(res.coordinates_checked == 36);
  }
  SUBCASE("disconnected parameter receives zero gradient") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({1, 2, 3}, rng));
    auto unused = tape.leaf(random_tensor({1, 2, 3}, rng));
    tape.backward(sum_all(relu(x)));
    for (Index i = 0; i < unused.value().size(); ++i) CHECK(unused.grad()[i] == 0.0);
  }
  SUBCASE("non-scalar root is rejected") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({1, 2, 3}, rng));
    CHECK_THROWS_AS(tape.backward(relu(x)), ShapeError);
  }
  SUBCASE("parents precede children on the tape") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({1, 2, 3}, rng));
    auto y = add(relu(x), tanh_act(x));
    sum_all(y);
    for (int i = 0; i < tape.size(); ++i) {
      for (int p : tape.parents(i)) CHECK(p < i);
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Adam opt;
    Tensor3<double> p(Shape{1, 2, 2}, 0.75);
    Tensor3<double> g(Shape{1, 2, 2});
    Tensor3<double>* ps[] = {&p};
    const Tensor3<double>* gs[] = {&g};
    opt.step<double>(ps, gs);
    for (Index i = 0; i < 4; ++i) CHECK(p[i] == 0.75);
  }
  SUBCASE("first bias-corrected step moves by lr against the gradient") {
    Adam opt(AdamConfig{.lr = 5e-5});
    Tensor3<double> p(Shape{1, 1, 1}, 0.0);
    Tensor3<double> g(Shape{1, 1, 1}, 1.0);
    Tensor3<double>* ps[] = {&p};
    const Tensor3<double>* gs[] = {&g};
    opt.step<double>(ps, gs);
    // m_hat = 1, v_hat = 1: update = lr / (1 + 1e-8).
    CHECK(p[0] == doctest::Approx(-5e-5 / (1 + 1e-8)).epsilon(1e-12));
    CHECK(opt.steps() == 1);
    const double after_one = p[0];
    opt.step<double>(ps, gs);
    CHECK(opt.steps() == 2);
    CHECK(p[0] < after_one);
  }
  SUBCASE("mismatched shapes are rejected") {
    Adam opt;
    Tensor3<double> p(1, 1, 2), g(1, 1, 3);
    Tensor3<double>* ps[] = {&p};
    const Tensor3<double>* gs[] = {&g};
    CHECK_THROWS_AS(opt.step<double>(ps, gs), ShapeError);
  }
}

TEST_CASE("finite_diff_check harness") {
  std::mt19937_64 rng(8);
  auto w = random_tensor({1, 2, 3}, rng);
  auto b = random_tensor({1, 2, 1}, rng);
  auto linear = finite_diff_check(
      [&](Tape<double>& t, Var<double> x) { return sum_all(pointwise_linear(x, t.leaf(w, false), t.leaf(b, false))); },
      random_tensor({1, 3, 4}, rng), 1e-6);
  CHECK(linear.max_rel_error < 1e-9);

  // Every coordinate sits at least 0.1 away from the kink.
  Tensor3<double> x(1, 2, 5);
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  for (Index i = 0; i < x.size(); ++i) x[i] = (i % 2 ? 1 : -1) * mag(rng);
  auto r = finite_diff_check([](Tape<double>&, Var<double> v) { return sum_all(relu(v)); }, x, 1e-6);
  CHECK(r.max_rel_error < 1e-6);
}

// Randomized primitive sweep: gradients, permutation equivariance.
TEST_CASE("property: primitives on random small shapes") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Index> nd(1, 2), cd(1, 8), vd(2, 16);
  for (int trial = 0; trial < 25; ++trial) {
    const Shape s{nd(rng), cd(rng), vd(rng)};
    const Index cout = cd(rng);
    auto w = random_tensor({1, cout, s.c}, rng);
    auto b = random_tensor({1, cout, 1}, rng);
    auto other = random_tensor(s, rng);
    auto weights = random_tensor({s.n, cout, s.v}, rng);

    auto program = [&](Tape<double>& t, Var<double> x) {
      auto h = instance_norm(pointwise_linear(x, t.leaf(w, false), t.leaf(b, false)), 1e-5);
      auto m = mul(add(tanh_act(h), t.leaf(weights, false)), h);
      auto cat = concat_channels(m, sub(x, t.leaf(other, false)));
      auto pooled = broadcast_vertices(global_max_pool(cat), s.v);
      return add(sum_all(square_norm_channels(cat)), sum_all(scale(gather_vertices(pooled, std::vector<Index>{0, 0}), 0.5)));
    };
    auto res = finite_diff_check(program, random_tensor(s, rng), 1e-6);
    CHECK_MESSAGE(res.max_rel_error < 1e-4, "shape " << s.str());

    // Equivariance of the per-vertex pipeline.
    auto x = random_tensor(s, rng);
    auto perm = random_permutation(s.v, rng);
    auto fwd = [&](const Tensor3<double>& in) {
      Tape<double> t;
      auto h = instance_norm(pointwise_linear(t.leaf(in), t.leaf(w), t.leaf(b)), 1e-5);
      return relu(mul(h, tanh_act(h))).value();
    };
    CHECK(max_abs_diff(fwd(permute_columns(x, perm)), permute_columns(fwd(x), perm)) < 1e-6);
  }
}

TEST_CASE("float and double paths agree") {
  std::mt19937_64 rng(10);
  auto x = random_tensor({2, 3, 8}, rng);
  auto w = random_tensor({1, 5, 3}, rng);
  auto b = random_tensor({1, 5, 1}, rng);
  Tape<double> td;
  auto yd = instance_norm(pointwise_linear(td.leaf(x), td.leaf(w), td.leaf(b)), 1e-5).value();
  Tape<float> tf;
  auto yf = instance_norm(pointwise_linear(tf.leaf(x.cast<float>()), tf.leaf(w.cast<float>()), tf.leaf(b.cast<float>())),
                          1e-5)
                .value();
  CHECK(max_abs_diff(yf.cast<double>(), yd) < 1e-4);
}
