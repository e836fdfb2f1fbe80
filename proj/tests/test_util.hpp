#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "lorax/backbone.hpp"
#include "lorax/rng.hpp"

namespace lorax::test {

inline BackboneConfig tiny_config(std::uint64_t seed = 7) {
    BackboneConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.depth = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.seed = seed;
    return c;
}

inline Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

inline Matrix random_images(Rng& rng, int n, const BackboneConfig& c) {
    Matrix m(n, c.input_dim());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c.input_dim(); ++j) m(i, j) = rng.uniform();
    return m;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

inline bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace lorax::test
