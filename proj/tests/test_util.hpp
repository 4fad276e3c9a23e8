#pragma once

#include "ipformer/tensor.hpp"
#include "oracles.hpp"

#include <random>

namespace test {

inline ipf::Tensor<double> random_tensor(ipf::Shape shape, std::mt19937_64& rng, double std = 1.0)
{
    ipf::Tensor<double> t(std::move(shape));
    std::normal_distribution<double> normal(0.0, std);
    for (auto& v : t.values()) v = normal(rng);
    return t;
}

inline ipf::MatrixXr random_matrix(ipf::Index rows, ipf::Index cols, std::mt19937_64& rng, double std = 1.0)
{
    return random_tensor({rows, cols}, rng, std).matrix();
}

inline oracle::Grid to_grid(const ipf::Tensor<double>& t)
{
    oracle::Grid g(static_cast<std::size_t>(t.extent(0)), std::vector<double>(static_cast<std::size_t>(t.extent(1))));
    for (ipf::Index i = 0; i < t.extent(0); ++i)
        for (ipf::Index j = 0; j < t.extent(1); ++j) g[i][j] = t(i, j);
    return g;
}

inline std::vector<double> to_std(const ipf::Vector<double>& v) { return {v.data(), v.data() + v.size()}; }

/// Random valid box with corners drawn uniformly.
inline ipf::ScoredBox random_box(std::mt19937_64& rng, int frame = 0)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    ipf::ScoredBox box;
    box.x1 = std::min(a, b);
    box.x2 = std::max(a, b);
    box.y1 = std::min(c, d);
    box.y2 = std::max(c, d);
    box.score = u(rng);
    box.frame = frame;
    return box;
}

} // namespace test
