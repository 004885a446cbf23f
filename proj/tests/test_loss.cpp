#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "alip/finite_diff.hpp"
#include "alip/loss.hpp"
#include "alip/rng.hpp"
#include "alip/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace alip;
using testutil::random_matrix;

namespace {

// Brute-force reference implementation on plain doubles. Shares nothing with
// the library's tensor path.
double oracle_info_nce(const Tensor& a, const Tensor& b, double tau, Reduction reduction) {
    std::size_t n = a.rows(), d = a.cols();
    std::vector<std::vector<double>> sims(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += a.at(i, k) * b.at(j, k);
            sims[i][j] = dot / tau;
        }
    auto lse = [&](const std::vector<double>& row) {
        double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        return mx + std::log(s);
    };
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row = sims[i];
        std::vector<double> col(n);
        for (std::size_t j = 0; j < n; ++j) col[j] = sims[j][i];
        loss += -(sims[i][i] - lse(row));
        loss += -(sims[i][i] - lse(col));
    }
    return reduction == Reduction::Mean ? loss / (2.0 * static_cast<double>(n)) : loss;
}

WeightSet unit_weights(std::size_t n) {
    WeightSet w;
    w.w_s.assign(n, 1.0);
    w.w_t.assign(n, 1.0);
    w.w_c.assign(n, 1.0);
    return w;
}

Tensor unit_norm_rows(Rng& rng, std::size_t n, std::size_t d, bool requires_grad = false) {
    Tensor m = random_matrix(rng, n, d, -1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += m.at(i, j) * m.at(i, j);
        double norm = std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) m.at(i, j) /= norm;
    }
    m.set_requires_grad(requires_grad);
    return m;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("temperature mapping") {
    Tensor p = Tensor::scalar(std::log(0.07));
    CHECK(temperature_value(p, 0.01).item() == doctest::Approx(0.07).epsilon(1e-12));

    Tensor low = Tensor::scalar(-20.0);
    CHECK(temperature_value(low, 0.01).item() == doctest::Approx(0.01).epsilon(1e-12));

    Tensor half = Tensor::scalar(std::log(0.5));
    CHECK(temperature_value(half, 0.01).item() == doctest::Approx(0.5).epsilon(1e-12));

    Tensor high = Tensor::scalar(3.0);
    CHECK(temperature_value(high, 0.01).item() == doctest::Approx(1.0).epsilon(1e-12));

    // Monotone in p.
    double prev = 0.0;
    for (double v : {-6.0, -3.0, -2.0, -1.0, -0.5, -0.1}) {
        double tau = temperature_value(Tensor::scalar(v), 0.01).item();
        CHECK(tau >= prev);
        prev = tau;
    }
}

TEST_CASE("orthonormal 2-batch at tau 1 gives the closed-form value") {
    Tensor x = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
    Tensor tau = Tensor::scalar(1.0);
    double expected = 4.0 * std::log(1.0 + std::exp(-1.0));

    double from_oracle = oracle_info_nce(x, x, 1.0, Reduction::Sum);
    CHECK(std::fabs(from_oracle - expected) <= 1e-12);

    double from_impl = info_nce(x, x, tau, Reduction::Sum).item();
    CHECK(std::fabs(from_impl - expected) <= 1e-12);
    CHECK(from_impl == doctest::Approx(1.253048).epsilon(1e-6));
}

TEST_CASE("single-sample batch loses nothing") {
    Tensor x = Tensor::matrix({{0.6, 0.8}});
    Tensor t = Tensor::matrix({{1.0, 0.0}});
    Tensor tau = Tensor::scalar(0.07);
    CHECK(info_nce(x, t, tau, Reduction::Mean).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(info_nce(x, t, tau, Reduction::Sum).item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("non-positive temperature is rejected") {
    Rng rng(3);
    Tensor x = unit_norm_rows(rng, 2, 4);
    CHECK_THROWS_AS(info_nce(x, x, Tensor::scalar(0.0), Reduction::Mean), DomainError);
    CHECK_THROWS_AS(info_nce(x, x, Tensor::scalar(-0.1), Reduction::Mean), DomainError);
    CHECK_THROWS_AS(
        adaptive_loss(x, x, x, unit_weights(2), Tensor::scalar(0.0), LossConfig{}), DomainError);
}

TEST_CASE("matches the brute-force oracle on random batches") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 2 + rng.uniform_int(std::uint64_t{7});
        std::size_t d = 3 + rng.uniform_int(std::uint64_t{13});
        double tau = rng.uniform(0.05, 1.0);
        Reduction red = trial % 2 ? Reduction::Mean : Reduction::Sum;
        Tensor a = unit_norm_rows(rng, n, d);
        Tensor b = unit_norm_rows(rng, n, d);
        double got = info_nce(a, b, Tensor::scalar(tau), red).item();
        double want = oracle_info_nce(a, b, tau, red);
        CHECK(std::fabs(got - want) <= 1e-12 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("unit weights collapse the adaptive loss to plain bi-path") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.uniform_int(std::uint64_t{7});
        Tensor x = unit_norm_rows(rng, n, 8);
        Tensor t = unit_norm_rows(rng, n, 8);
        Tensor c = unit_norm_rows(rng, n, 8);
        Tensor tau = Tensor::scalar(0.07);
        LossConfig cfg;
        cfg.reduction = trial % 2 ? Reduction::Mean : Reduction::Sum;
        auto out = adaptive_loss(x, t, c, unit_weights(n), tau, cfg);
        double plain = info_nce(x, t, tau, cfg.reduction).item() +
                       info_nce(x, c, tau, cfg.reduction).item();
        CHECK(std::fabs(out.l_total.item() - plain) <= 1e-12 * std::max(1.0, std::fabs(plain)));
    }
}

TEST_CASE("disabled weight flags behave as all-ones") {
    Rng rng(23);
    Tensor x = unit_norm_rows(rng, 4, 8);
    Tensor t = unit_norm_rows(rng, 4, 8);
    Tensor c = unit_norm_rows(rng, 4, 8);
    Tensor tau = Tensor::scalar(0.07);

    WeightSet wild;
    wild.w_s = {0.2, 0.4, 0.9, 0.1};
    wild.w_t = {1.5, 0.3, 1.1, 0.7};
    wild.w_c = {0.6, 1.4, 0.2, 1.0};

    LossConfig all_off;
    all_off.enable_w_s = all_off.enable_w_t = all_off.enable_w_c = false;
    auto gated = adaptive_loss(x, t, c, wild, tau, all_off);
    auto plain = adaptive_loss(x, t, c, unit_weights(4), tau, LossConfig{});
    CHECK(gated.l_total.item() == plain.l_total.item());
    CHECK(gated.l_xt.item() == plain.l_xt.item());
    CHECK(gated.l_xc.item() == plain.l_xc.item());
}

TEST_CASE("uniform half sample-weight halves the loss exactly") {
    Rng rng(29);
    Tensor x = unit_norm_rows(rng, 4, 8);
    Tensor t = unit_norm_rows(rng, 4, 8);
    Tensor c = unit_norm_rows(rng, 4, 8);
    Tensor tau = Tensor::scalar(0.07);

    WeightSet half = unit_weights(4);
    half.w_s.assign(4, 0.5);
    auto weighted = adaptive_loss(x, t, c, half, tau, LossConfig{});
    auto plain = adaptive_loss(x, t, c, unit_weights(4), tau, LossConfig{});
    CHECK(weighted.l_xt.item() == 0.5 * plain.l_xt.item());
    CHECK(weighted.l_xc.item() == 0.5 * plain.l_xc.item());
    CHECK(weighted.l_total.item() == 0.5 * plain.l_total.item());
}

TEST_CASE("weight length mismatch is a shape error") {
    Rng rng(31);
    Tensor x = unit_norm_rows(rng, 4, 8);
    CHECK_THROWS_AS(
        adaptive_loss(x, x, x, unit_weights(3), Tensor::scalar(0.07), LossConfig{}), ShapeError);
}

TEST_CASE("sum reduction equals 2N times mean reduction") {
    Rng rng(37);
    SUBCASE("power-of-two batch is exact") {
        Tensor a = unit_norm_rows(rng, 4, 8);
        Tensor b = unit_norm_rows(rng, 4, 8);
        double s = info_nce(a, b, Tensor::scalar(0.1), Reduction::Sum).item();
        double m = info_nce(a, b, Tensor::scalar(0.1), Reduction::Mean).item();
        CHECK(s == 8.0 * m);
    }
    SUBCASE("odd batch within rounding") {
        Tensor a = unit_norm_rows(rng, 3, 8);
        Tensor b = unit_norm_rows(rng, 3, 8);
        double s = info_nce(a, b, Tensor::scalar(0.1), Reduction::Sum).item();
        double m = info_nce(a, b, Tensor::scalar(0.1), Reduction::Mean).item();
        CHECK(std::fabs(s - 6.0 * m) <= 1e-12 * std::max(1.0, std::fabs(s)));
    }
}

TEST_CASE("loss is invariant under batch permutation") {
    Rng rng(41);
    std::size_t n = 6;
    Tensor x = unit_norm_rows(rng, n, 8);
    Tensor t = unit_norm_rows(rng, n, 8);
    Tensor c = unit_norm_rows(rng, n, 8);
    WeightSet w;
    for (std::size_t i = 0; i < n; ++i) {
        w.w_s.push_back(rng.uniform(0.2, 1.0));
        w.w_t.push_back(rng.uniform(0.5, 1.5));
        w.w_c.push_back(rng.uniform(0.5, 1.5));
    }
    Tensor tau = Tensor::scalar(0.07);
    double base = adaptive_loss(x, t, c, w, tau, LossConfig{}).l_total.item();

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);

    auto permute_rows = [&](const Tensor& m) {
        Tensor out = Tensor::zeros({n, m.cols()});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(perm[i], j);
        return out;
    };
    WeightSet wp;
    for (std::size_t i = 0; i < n; ++i) {
        wp.w_s.push_back(w.w_s[perm[i]]);
        wp.w_t.push_back(w.w_t[perm[i]]);
        wp.w_c.push_back(w.w_c[perm[i]]);
    }
    double permuted =
        adaptive_loss(permute_rows(x), permute_rows(t), permute_rows(c), wp, tau, LossConfig{})
            .l_total.item();
    CHECK(std::fabs(base - permuted) <= 1e-12 * std::max(1.0, std::fabs(base)));
}

TEST_CASE("sharper temperature reduces the loss of an aligned batch") {
    Rng rng(43);
    Tensor x = unit_norm_rows(rng, 8, 16);
    double prev = HUGE_VAL;
    for (double tau : {1.0, 0.5, 0.1, 0.07}) {
        double l = info_nce(x, x, Tensor::scalar(tau), Reduction::Mean).item();
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("path components are nonnegative when weights stay at or below one") {
    Rng rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.uniform_int(std::uint64_t{6});
        Tensor x = unit_norm_rows(rng, n, 8);
        Tensor t = unit_norm_rows(rng, n, 8);
        Tensor c = unit_norm_rows(rng, n, 8);
        WeightSet w;
        for (std::size_t i = 0; i < n; ++i) {
            w.w_s.push_back(rng.uniform(0.05, 1.0));
            w.w_t.push_back(rng.uniform(0.05, 1.0));
            w.w_c.push_back(rng.uniform(0.05, 1.0));
        }
        auto out = adaptive_loss(x, t, c, w, Tensor::scalar(0.07), LossConfig{});
        CHECK(out.l_xt.item() >= 0.0);
        CHECK(out.l_xc.item() >= 0.0);
        CHECK(out.l_total.item() ==
              doctest::Approx(out.l_xt.item() + out.l_xc.item()).epsilon(1e-12));
    }
}

TEST_CASE("the text path never sees the captions") {
    Rng rng(53);
    Tensor x = unit_norm_rows(rng, 4, 8);
    Tensor t = unit_norm_rows(rng, 4, 8);
    Tensor c1 = unit_norm_rows(rng, 4, 8);
    Tensor c2 = unit_norm_rows(rng, 4, 8);
    WeightSet w = unit_weights(4);
    w.w_s = {0.3, 0.8, 1.0, 0.6};
    w.w_t = {1.2, 0.9, 1.0, 0.4};
    Tensor tau = Tensor::scalar(0.07);
    double a = adaptive_loss(x, t, c1, w, tau, LossConfig{}).l_xt.item();
    double b = adaptive_loss(x, t, c2, w, tau, LossConfig{}).l_xt.item();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(59);
    for (std::size_t n : {std::size_t{2}, std::size_t{4}, std::size_t{8}}) {
        CAPTURE(n);
        Tensor x = unit_norm_rows(rng, n, 6, true);
        Tensor t = unit_norm_rows(rng, n, 6, true);
        Tensor c = unit_norm_rows(rng, n, 6, true);
        Tensor p = Tensor::scalar(std::log(0.07), true);
        WeightSet w;
        for (std::size_t i = 0; i < n; ++i) {
            w.w_s.push_back(rng.uniform(0.3, 1.0));
            w.w_t.push_back(rng.uniform(0.5, 1.5));
            w.w_c.push_back(rng.uniform(0.5, 1.5));
        }
        LossConfig cfg;

        auto objective = [&]() {
            Tensor tau = temperature_value(p, cfg.tau_min);
            return adaptive_loss(x, t, c, w, tau, cfg).l_total.item();
        };
        {
            Tape tape;
            Tensor tau = temperature_value(p, cfg.tau_min);
            auto out = adaptive_loss(x, t, c, w, tau, cfg);
            tape.backward(out.l_total);
        }
        for (Tensor* in : {&x, &t, &c, &p}) {
            REQUIRE(!in->grad().empty());
            auto numeric = finite_difference_grad(objective, *in);
            CHECK(max_grad_rel_err(in->grad(), numeric) <= 1e-4);
        }
    }
}

}  // TEST_SUITE("loss")
