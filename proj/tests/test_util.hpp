#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "alip/rng.hpp"
#include "alip/tensor.hpp"

namespace testutil {

// Random matrix with entries in [lo, hi].
inline alip::Tensor random_matrix(alip::Rng& rng, std::size_t r, std::size_t c, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = false) {
    std::vector<double> data(r * c);
    for (auto& v : data) v = rng.uniform(lo, hi);
    return alip::Tensor::from_data({r, c}, std::move(data), requires_grad);
}

// Random matrix with |entry| in [mag_lo, mag_hi]; keeps values away from
// kinks (relu at 0) and singularities (reciprocal, log near 0).
inline alip::Tensor random_matrix_away_from_zero(alip::Rng& rng, std::size_t r, std::size_t c,
                                                 double mag_lo, double mag_hi,
                                                 bool requires_grad = false) {
    std::vector<double> data(r * c);
    for (auto& v : data) {
        double mag = rng.uniform(mag_lo, mag_hi);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return alip::Tensor::from_data({r, c}, std::move(data), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return HUGE_VAL;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

inline bool bit_identical(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    }
    return true;
}

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("alip_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
