#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ppd/rng.hpp"
#include "ppd/tensor.hpp"

using ppd::Tensor;
using T = Tensor<double>;

namespace {

std::vector<double> random_vec(ppd::Rng& rng, size_t n, double lo = -1,
                               double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(TensorForward, ElementwiseIdentities) {
  EXPECT_DOUBLE_EQ(ppd::sine(T::scalar(0.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(ppd::sigmoid(T::scalar(0.0)).item(), 0.5);
  double a = 0.37;
  T lse = ppd::logsumexp_rows(T::constant({2, 1}, {a, a}));
  EXPECT_NEAR(lse.item(), a + std::log(2.0), 1e-12);
}

TEST(TensorForward, ShapeMismatchNamesOpAndShapes) {
  T a = T::zeros({2, 3});
  T b = T::zeros({3, 3});
  try {
    ppd::add(a, b);
    FAIL() << "expected shape error";
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ppd::matmul(T::zeros({2, 3}), T::zeros({2, 3})),
               std::runtime_error);
}

TEST(TensorBackward, ProductRule) {
  T x = T::param({1}, {2.0});
  T y = T::param({1}, {3.0});
  T loss = ppd::mul(x, y);
  ppd::backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(y.grad()[0], 2.0);
}

TEST(TensorBackward, SigmoidAtZero) {
  T x = T::param({1}, {0.0});
  T loss = ppd::sigmoid(x);
  ppd::backward(loss);
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-15);
}

TEST(TensorBackward, NonScalarLossRejected) {
  T x = T::param({2}, {1.0, 2.0});
  EXPECT_THROW(ppd::backward(x), std::runtime_error);
}

TEST(TensorBackward, SharedSubexpressionAccumulates) {
  // loss = s + s with s shared must give the same leaf gradients as a
  // duplicated-graph evaluation of s1 + s2.
  ppd::Rng rng(11);
  auto xv = random_vec(rng, 6);
  auto build_s = [](const T& x) {
    return ppd::sum_all(ppd::sine(ppd::mul_scalar(x, 1.7)));
  };
  T x = T::param({2, 3}, xv);
  T s = build_s(x);
  T loss = ppd::add(s, s);
  ppd::backward(loss);
  std::vector<double> shared_grad = x.grad();

  T x2 = T::param({2, 3}, xv);
  T loss2 = ppd::add(build_s(x2), build_s(x2));
  ppd::backward(loss2);
  for (size_t i = 0; i < shared_grad.size(); ++i)
    EXPECT_NEAR(shared_grad[i], x2.grad()[i], 1e-14);
}

TEST(TensorBackward, SineMlpMatchesFiniteDifferences) {
  // random 3-layer sine MLP, all parameter grads vs central differences
  ppd::Rng rng(7);
  const int in = 3, hid = 5;
  auto w1 = random_vec(rng, in * hid);
  auto w2 = random_vec(rng, hid * hid);
  auto w3 = random_vec(rng, hid * 1);
  auto xi = random_vec(rng, 4 * in);
  auto make_loss = [&](const std::vector<T>& p) {
    T x = T::constant({4, in}, xi);
    T h1 = ppd::sine(ppd::matmul(x, p[0]));
    T h2 = ppd::sine(ppd::matmul(h1, p[1]));
    T out = ppd::matmul(h2, p[2]);
    return ppd::mean_all(out);
  };
  auto res = oracle::check_gradients(
      make_loss, {T::param({in, hid}, w1), T::param({hid, hid}, w2),
                  T::param({hid, 1}, w3)});
  EXPECT_LT(res.max_rel, 1e-4);
}

// one finite-difference check per op
TEST(TensorBackward, EveryOpMatchesFiniteDifferences) {
  ppd::Rng rng(23);
  using Builder = std::function<T(const std::vector<T>&)>;
  struct Case {
    const char* name;
    std::vector<ppd::Shape> shapes;
    Builder f;
    double lo = -1, hi = 1;
  };
  auto wrap = [](T t) { return ppd::mean_all(ppd::mul(t, t)); };
  std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}},
       [&](const std::vector<T>& p) { return wrap(ppd::matmul(p[0], p[1])); }},
      {"transpose", {{3, 4}},
       [&](const std::vector<T>& p) { return wrap(ppd::transpose(p[0])); }},
      {"add_rowbcast", {{4, 3}, {1, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::add(p[0], p[1])); }},
      {"sub_scalarbcast", {{4, 3}, {1}},
       [&](const std::vector<T>& p) { return wrap(ppd::sub(p[0], p[1])); }},
      {"mul", {{2, 5}, {2, 5}},
       [&](const std::vector<T>& p) { return wrap(ppd::mul(p[0], p[1])); }},
      {"mul_scalarbcast", {{2, 5}, {1}},
       [&](const std::vector<T>& p) { return wrap(ppd::mul(p[0], p[1])); }},
      {"neg", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::neg(p[0])); }},
      {"sine", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::sine(p[0])); }},
      {"cosine", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::cosine(p[0])); }},
      {"sigmoid", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::sigmoid(p[0])); }},
      {"relu", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::relu(p[0])); }},
      {"leaky_relu", {{2, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::leaky_relu(p[0], 0.2));
       }},
      {"exp", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::exp_(p[0])); }},
      {"log", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::log_(p[0])); },
       0.2, 2.0},
      {"sqrt", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::sqrt_(p[0])); },
       0.2, 2.0},
      {"square", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::square(p[0])); }},
      {"reciprocal", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::reciprocal(p[0])); },
       0.5, 2.0},
      {"clamp", {{2, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::clamp(p[0], -0.5, 0.5));
       }},
      {"mean_all", {{3, 3}},
       [&](const std::vector<T>& p) { return ppd::mean_all(p[0]); }},
      {"sum_all", {{3, 3}},
       [&](const std::vector<T>& p) {
         return ppd::mul_scalar(ppd::sum_all(p[0]), 0.3);
       }},
      {"sum_rows", {{3, 4}},
       [&](const std::vector<T>& p) { return wrap(ppd::sum_rows(p[0])); }},
      {"tile_rows", {{1, 4}},
       [&](const std::vector<T>& p) { return wrap(ppd::tile_rows(p[0], 3)); }},
      {"rows_max", {{5, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::rows_max(p[0])); }},
      {"rows_max_segments", {{6, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::rows_max_segments(p[0], 2));
       }},
      {"logsumexp_rows", {{5, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::logsumexp_rows(p[0]));
       }},
      {"l2_norm", {{2, 4}},
       [&](const std::vector<T>& p) { return ppd::l2_norm(p[0]); }},
      {"batch_std", {{6}},
       [&](const std::vector<T>& p) { return ppd::batch_std(p[0]); }},
      {"concat_rows", {{2, 3}, {4, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::concat_rows<double>({p[0], p[1]}));
       }},
      {"concat_cols", {{3, 2}, {3, 4}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::concat_cols(p[0], p[1]));
       }},
      {"slice_rows", {{5, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::slice_rows(p[0], 1, 4));
       }},
      {"slice_cols", {{3, 5}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::slice_cols(p[0], 1, 4));
       }},
      {"embed_rows", {{2, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::embed_rows(p[0], 1, 5));
       }},
      {"stack_scalars", {{1}, {1}, {1}, {1}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::stack_scalars<double>({p[0], p[1], p[2], p[3]},
                                                {2, 2}));
       }},
      {"repeat_rows", {{2, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::repeat_rows(p[0], 3)); }},
      {"sum_rows_segments", {{6, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::sum_rows_segments(p[0], 2));
       }},
      {"normalize_rows", {{3, 5}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::normalize_rows(p[0]));
       }},
      {"mul_rowbcast", {{4, 3}, {1, 3}},
       [&](const std::vector<T>& p) { return wrap(ppd::mul(p[0], p[1])); }},
      {"linear", {{5, 3}, {3, 4}, {1, 4}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::linear(p[0], p[1], p[2]));
       }},
      {"sine_scaled", {{2, 3}},
       [&](const std::vector<T>& p) {
         return wrap(ppd::sine_scaled(p[0], 2.5));
       }},
  };
  for (const auto& c : cases) {
    std::vector<T> leaves;
    for (const auto& s : c.shapes)
      leaves.push_back(
          T::param(s, random_vec(rng, ppd::shape_numel(s), c.lo, c.hi)));
    auto res = oracle::check_gradients(c.f, leaves);
    EXPECT_LT(res.max_rel, 1e-4) << "op " << c.name;
  }
}

TEST(TensorProperties, MaxVsLogSumExpBound) {
  ppd::Rng rng(5);
  const int N = 8;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> v = random_vec(rng, N, -6, 6);
    T t = T::constant({N, 1}, v);
    double mx = ppd::rows_max(t).item();
    double lse = ppd::logsumexp_rows(t).item();
    ASSERT_GE(lse, mx - 1e-12);
    ASSERT_LE(lse, mx + std::log(double(N)) + 1e-12);
  }
}

TEST(TensorPenalty, UnitNormLinearCriticHasZeroPenalty) {
  // D(x) = w.x with ||w|| = 1 -> (||grad|| - 1)^2 = 0 for any input
  std::vector<double> w = {0.5, -0.5, 0.5, 0.5};  // norm 1
  T wt = T::param({4, 1}, w);
  auto disc = [&](const T& x) {
    return ppd::sum_all(ppd::matmul(x, wt));
  };
  // max-pooled variant: gradient lands on one point per channel
  auto pooled_disc = [&](const T& x) {
    return ppd::sum_all(ppd::matmul(ppd::rows_max(x), wt));
  };
  ppd::Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    T x = T::param({1, 4}, random_vec(rng, 4));
    T pen = ppd::input_gradient_penalty<double>(disc, x);
    EXPECT_NEAR(pen.item(), 0.0, 1e-10);
    T xc = T::param({3, 4}, random_vec(rng, 12));
    T pen2 = ppd::input_gradient_penalty<double>(pooled_disc, xc);
    EXPECT_NEAR(pen2.item(), 0.0, 1e-10);
  }
}

TEST(TensorPenalty, ScaledCoordinateCritic) {
  // D(x) = 2*x1 -> penalty (2-1)^2 = 1, d(penalty)/d(w) = 2(||w||-1) = 2
  T wt = T::param({1, 1}, {2.0});
  auto disc = [&](const T& x) {
    return ppd::sum_all(ppd::matmul(ppd::slice_cols(x, 0, 1), wt));
  };
  T x = T::param({1, 3}, {0.3, -0.2, 0.9});
  T pen = ppd::input_gradient_penalty<double>(disc, x);
  EXPECT_NEAR(pen.item(), 1.0, 1e-12);
  ppd::backward(pen);
  EXPECT_NEAR(wt.grad()[0], 2.0, 1e-10);
}

TEST(TensorPenalty, DoubleBackwardMatchesFiniteDifferences) {
  // small critic: linear -> leaky_relu -> max-pool -> linear
  ppd::Rng rng(17);
  const int P = 6, C = 4, H = 8;
  auto w1v = random_vec(rng, C * H);
  auto b1v = random_vec(rng, H, -0.1, 0.1);
  auto w2v = random_vec(rng, H);
  auto xv = random_vec(rng, P * C);
  auto penalty_of = [&](const std::vector<T>& p) {
    auto disc = [&](const T& x) {
      T h = ppd::leaky_relu(ppd::add(ppd::matmul(x, p[0]), p[1]), 0.2);
      T pooled = ppd::rows_max(h);
      return ppd::sum_all(ppd::matmul(pooled, p[2]));
    };
    T x = T::param({P, C}, xv);
    return ppd::input_gradient_penalty<double>(disc, x);
  };
  auto res = oracle::check_gradients(
      penalty_of, {T::param({C, H}, w1v), T::param({1, H}, b1v),
                   T::param({H, 1}, w2v)},
      1e-5);
  EXPECT_LT(res.max_rel, 1e-3);
}

TEST(TensorPenalty, NonWhitelistedOpInsideCriticRaises) {
  auto disc = [](const T& x) { return ppd::sum_all(ppd::sigmoid(x)); };
  T x = T::param({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  try {
    ppd::input_gradient_penalty<double>(disc, x);
    FAIL() << "expected error for sigmoid inside critic";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("sigmoid"), std::string::npos);
  }
}

TEST(TensorPenalty, GradientOfGraphGradientMatchesFd) {
  // d/dx of (dy/dx) pathways: check input_gradient itself against finite
  // differences of y for a deeper critic with concat.
  ppd::Rng rng(29);
  const int P = 4, C = 3, H = 5;
  auto w1 = random_vec(rng, C * H);
  auto w2 = random_vec(rng, (H + C) * 1);
  auto xv = random_vec(rng, P * C);
  T w1t = T::constant({C, H}, w1);
  T w2t = T::constant({H + C, 1}, w2);
  T x = T::param({P, C}, xv);
  auto disc = [&](const T& q) {
    T h = ppd::leaky_relu(ppd::matmul(q, w1t), 0.1);
    T cat = ppd::concat_cols(h, q);
    return ppd::mean_all(ppd::matmul(cat, w2t));
  };
  T y = disc(x);
  T g = ppd::input_gradient(y, x);
  auto f = [&](const std::vector<double>& probe) {
    T xp = T::param({P, C}, probe);
    return disc(xp).item();
  };
  auto fd = oracle::finite_diff(f, xv, 1e-5);
  EXPECT_LT(oracle::max_rel_err(g.value(), fd), 1e-6);
}
