#include <cmath>
#include <functional>
#include <vector>

#include "alip/finite_diff.hpp"
#include "alip/rng.hpp"
#include "alip/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace alip;
using testutil::random_matrix;
using testutil::random_matrix_away_from_zero;

namespace {

// Reduces an op output to a scalar through a fixed random weighting, runs
// backward, and compares every input gradient against central finite
// differences computed from forward evaluations only.
void check_gradients(Rng& rng, std::vector<Tensor>& inputs,
                     const std::function<Tensor()>& forward) {
    Tensor probe;
    {
        Tensor out = forward();  // no tape; just to size the probe weights
        std::vector<double> w(out.size());
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        probe = Tensor::from_data(out.shape(), std::move(w));
    }
    auto objective = [&]() { return sum(mul(forward(), probe)).item(); };

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = sum(mul(forward(), probe));
        tape.backward(loss);
        for (auto& in : inputs) {
            REQUIRE(!in.grad().empty());
            analytic.push_back(in.grad());
        }
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto numeric = finite_difference_grad(objective, inputs[k]);
        double err = max_grad_rel_err(analytic[k], numeric);
        CAPTURE(k);
        CHECK(err <= 1e-4);
    }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("l2 normalize matches the 3-4-5 triangle") {
    Tensor x = Tensor::matrix({{3.0, 4.0}});
    Tensor y = l2_normalize_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x = Tensor::matrix({{0.0, 0.0}});
    Tensor y = softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and stable for large logits") {
    Tensor x = Tensor::matrix({{1000.0, 1000.0, 999.0}});
    Tensor y = softmax_rows(x);
    double denom = 2.0 + std::exp(-1.0);
    CHECK(y.at(0, 0) == doctest::Approx(1.0 / denom).epsilon(1e-12));
    CHECK(y.at(0, 2) == doctest::Approx(std::exp(-1.0) / denom).epsilon(1e-12));
    double row = y.at(0, 0) + y.at(0, 1) + y.at(0, 2);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names the op and both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("log rejects non-positive input") {
    Tensor x = Tensor::matrix({{1.0, -1.0}});
    CHECK_THROWS_AS(log(x), DomainError);
    Tensor z = Tensor::matrix({{0.0}});
    CHECK_THROWS_AS(log(z), DomainError);
}

TEST_CASE("backward of sum gives ones") {
    Tape tape;
    Tensor w = Tensor::from_data({3}, {1.0, 1.0, 1.0}, true);
    Tensor s = sum(w);
    tape.backward(s);
    REQUIRE(w.grad().size() == 3);
    for (double g : w.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward of sum of squares doubles the input") {
    Tape tape;
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor s = sum(mul(w, w));
    tape.backward(s);
    CHECK(w.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(w.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("finite differences recover the sum-of-squares gradient") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0});
    auto f = [&]() {
        double s = 0.0;
        for (double v : x.data()) s += v * v;
        return s;
    };
    auto g = finite_difference_grad(f, x);
    CHECK(std::fabs(g[0] - 2.0) <= 1e-6);
    CHECK(std::fabs(g[1] - 4.0) <= 1e-6);
}

TEST_CASE("exp gradient at zero is one") {
    Tape tape;
    Tensor x = Tensor::from_data({1}, {0.0}, true);
    Tensor y = sum(exp(x));
    tape.backward(y);
    CHECK(std::fabs(x.grad()[0] - 1.0) <= 1e-9);
}

TEST_CASE("backward requires a scalar root produced on the tape") {
    Tape tape;
    Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);

    Tensor detached = Tensor::scalar(1.0, true);
    CHECK_THROWS_AS(tape.backward(detached), Error);
}

TEST_CASE("finite difference oracle flags non-finite evaluations") {
    Tensor x = Tensor::from_data({2}, {1.0, 0.5});
    auto f = [&]() { return std::log(x.data()[1] - 0.49999); };  // dips negative under -h
    try {
        finite_difference_grad(f, x);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
}

TEST_CASE("repeated backward calls accumulate into leaf gradients") {
    Tape tape;
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor s = sum(mul(w, w));
    tape.backward(s);
    tape.backward(s);
    CHECK(w.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(w.grad()[1] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("normalized rows have unit norm to 1e-12") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t r = 1 + rng.uniform_int(std::uint64_t{4});
        std::size_t c = 8 + rng.uniform_int(std::uint64_t{56});
        Tensor x = random_matrix(rng, r, c, -1.0, 1.0);
        Tensor y = l2_normalize_rows(x);
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += y.at(i, j) * y.at(i, j);
            CHECK(std::fabs(std::sqrt(s) - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("tape execution is bit-deterministic") {
    auto run = [&]() {
        Rng rng(123);
        Tensor a = random_matrix(rng, 5, 7, -1.0, 1.0, true);
        Tensor b = random_matrix(rng, 7, 4, -1.0, 1.0, true);
        Tape tape;
        Tensor out = softmax_rows(matmul(relu(a), b));
        Tensor s = sum(out);
        tape.backward(s);
        std::vector<double> result = out.data();
        result.insert(result.end(), a.grad().begin(), a.grad().end());
        result.insert(result.end(), b.grad().begin(), b.grad().end());
        return result;
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(testutil::bit_identical(r1, r2));
}

TEST_CASE("no tape means no recording and no gradients") {
    Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
    Tensor table = Tensor::zeros({8, 4});
    CHECK_THROWS_AS(embedding_lookup(table, {0, 8}), DomainError);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}), DomainError);
}

TEST_CASE("gather_diag requires a square matrix") {
    CHECK_THROWS_AS(gather_diag(Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("per-primitive gradients match finite differences over random trials") {
    Rng rng(2024);
    const int kTrials = 100;

    SUBCASE("add") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 4, -1, 1, true),
                                      random_matrix(rng, 3, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return add(in[0], in[1]); });
        }
    }
    SUBCASE("sub") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 2, 5, -1, 1, true),
                                      random_matrix(rng, 2, 5, -1, 1, true)};
            check_gradients(rng, in, [&]() { return sub(in[0], in[1]); });
        }
    }
    SUBCASE("mul") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 3, -1, 1, true),
                                      random_matrix(rng, 3, 3, -1, 1, true)};
            check_gradients(rng, in, [&]() { return mul(in[0], in[1]); });
        }
    }
    SUBCASE("mul_scalar") {
        for (int t = 0; t < kTrials; ++t) {
            double c = rng.uniform(-2.0, 2.0);
            std::vector<Tensor> in = {random_matrix(rng, 3, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return mul_scalar(in[0], c); });
        }
    }
    SUBCASE("mul_scalar_tensor") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {
                random_matrix(rng, 3, 4, -1, 1, true),
                Tensor::from_data({1}, {rng.uniform(0.5, 2.0)}, true)};
            check_gradients(rng, in, [&]() { return mul_scalar_tensor(in[0], in[1]); });
        }
    }
    SUBCASE("reciprocal") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix_away_from_zero(rng, 3, 3, 0.3, 2.0, true)};
            check_gradients(rng, in, [&]() { return reciprocal(in[0]); });
        }
    }
    SUBCASE("clamp") {
        for (int t = 0; t < kTrials; ++t) {
            // Entries kept clear of the clamp boundaries so the subgradient
            // choice there does not enter the comparison.
            std::vector<double> data(9);
            for (auto& v : data) {
                v = rng.uniform(-1.0, 1.0);
                if (std::fabs(v - 0.5) < 1e-3) v = 0.6;
                if (std::fabs(v + 0.5) < 1e-3) v = -0.6;
            }
            std::vector<Tensor> in = {Tensor::from_data({3, 3}, std::move(data), true)};
            check_gradients(rng, in, [&]() { return clamp(in[0], -0.5, 0.5); });
        }
    }
    SUBCASE("matmul") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 2, 4, -1, 1, true),
                                      random_matrix(rng, 4, 3, -1, 1, true)};
            check_gradients(rng, in, [&]() { return matmul(in[0], in[1]); });
        }
    }
    SUBCASE("transpose") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 5, -1, 1, true)};
            check_gradients(rng, in, [&]() { return transpose(in[0]); });
        }
    }
    SUBCASE("exp") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return exp(in[0]); });
        }
    }
    SUBCASE("log") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 4, 0.2, 2.0, true)};
            check_gradients(rng, in, [&]() { return log(in[0]); });
        }
    }
    SUBCASE("relu") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix_away_from_zero(rng, 3, 4, 0.1, 1.0, true)};
            check_gradients(rng, in, [&]() { return relu(in[0]); });
        }
    }
    SUBCASE("softmax_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 5, -2, 2, true)};
            check_gradients(rng, in, [&]() { return softmax_rows(in[0]); });
        }
    }
    SUBCASE("log_softmax_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 5, -2, 2, true)};
            check_gradients(rng, in, [&]() { return log_softmax_rows(in[0]); });
        }
    }
    SUBCASE("l2_normalize_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix_away_from_zero(rng, 3, 6, 0.2, 1.0, true)};
            check_gradients(rng, in, [&]() { return l2_normalize_rows(in[0]); });
        }
    }
    SUBCASE("mean_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 4, 5, -1, 1, true)};
            check_gradients(rng, in, [&]() { return mean_rows(in[0]); });
        }
    }
    SUBCASE("sum") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return sum(in[0]); });
        }
    }
    SUBCASE("gather_diag") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 4, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return gather_diag(in[0]); });
        }
    }
    SUBCASE("concat_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 2, 3, -1, 1, true),
                                      random_matrix(rng, 3, 3, -1, 1, true)};
            check_gradients(rng, in, [&]() { return concat_rows({in[0], in[1]}); });
        }
    }
    SUBCASE("concat_cols") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 3, 2, -1, 1, true),
                                      random_matrix(rng, 3, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return concat_cols({in[0], in[1]}); });
        }
    }
    SUBCASE("slice_rows") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 5, 3, -1, 1, true)};
            check_gradients(rng, in, [&]() { return slice_rows(in[0], 1, 3); });
        }
    }
    SUBCASE("embedding_lookup") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<std::int64_t> ids;
            for (int i = 0; i < 6; ++i) ids.push_back(rng.uniform_int(std::int64_t{0}, 7));
            std::vector<Tensor> in = {random_matrix(rng, 8, 4, -1, 1, true)};
            check_gradients(rng, in, [&]() { return embedding_lookup(in[0], ids); });
        }
    }
    SUBCASE("add_rowvec") {
        for (int t = 0; t < kTrials; ++t) {
            std::vector<Tensor> in = {random_matrix(rng, 4, 3, -1, 1, true),
                                      random_matrix(rng, 1, 3, -1, 1, true)};
            check_gradients(rng, in, [&]() { return add_rowvec(in[0], in[1]); });
        }
    }
}

TEST_CASE("composite graph gradient matches finite differences") {
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> in = {random_matrix(rng, 3, 4, -1, 1, true),
                                  random_matrix(rng, 4, 4, -1, 1, true)};
        check_gradients(rng, in, [&]() {
            Tensor h = l2_normalize_rows(matmul(in[0], in[1]));
            return log_softmax_rows(matmul(h, transpose(h)));
        });
    }
}

TEST_CASE("weight sharing accumulates gradients from every use") {
    Tape tape;
    Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0}, true);
    // w used twice; d/dW_ab sum(W @ W) = rowsum_b(W) + colsum_a(W), which is
    // 2 in every entry at the identity.
    Tensor s = sum(matmul(w, w));
    tape.backward(s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0));
}

}  // TEST_SUITE("tensor")
