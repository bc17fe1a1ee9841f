#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mproto/mask_partition.hpp"
#include "mproto/numerics.hpp"
#include "mproto/prototypes.hpp"

namespace mproto::testing {

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(rows, cols);
    for (auto& v : m.data()) {
        v = g(rng);
    }
    return m;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = g(rng);
    }
    return v;
}

inline FeatureMap random_features(std::mt19937_64& rng, int h, int w, int dim, double scale = 1.0) {
    return FeatureMap(h, w, random_matrix(rng, static_cast<std::size_t>(h) * w, dim, scale));
}

// Bernoulli mask with at least `min_fg` foreground pixels.
inline BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p, std::size_t min_fg = 1) {
    std::bernoulli_distribution coin(p);
    for (;;) {
        BinaryMask m(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                m.set(y, x, coin(rng));
            }
        }
        if (m.foreground_count() >= min_fg) {
            return m;
        }
    }
}

inline BinaryMask mask_from(const std::vector<std::vector<int>>& rows) {
    BinaryMask m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (std::size_t y = 0; y < rows.size(); ++y) {
        for (std::size_t x = 0; x < rows[y].size(); ++x) {
            m.set(static_cast<int>(y), static_cast<int>(x), rows[y][x] != 0);
        }
    }
    return m;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace mproto::testing
