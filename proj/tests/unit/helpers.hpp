#pragma once

#include <random>
#include <string>

#include <Eigen/Dense>

#include "cprloop/core.hpp"
#include "oracles.hpp"

#ifndef CPRLOOP_TEST_DATA
#define CPRLOOP_TEST_DATA "tests/data"
#endif

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(CPRLOOP_TEST_DATA) + "/" + name; }

inline cprloop::TactileFrame frame(cprloop::Side side, std::uint16_t fill, std::uint64_t t = 0) {
    cprloop::TactileFrame f;
    f.side = side;
    f.counts = cprloop::CountGrid(cprloop::kRows, cprloop::kCols, fill);
    f.timestamp_us = t;
    return f;
}

inline cprloop::DualSample random_sample(std::mt19937_64& rng, std::uint32_t seq, std::uint64_t t) {
    std::uniform_int_distribution<int> count(0, cprloop::kAdcMax);
    cprloop::DualSample s;
    s.seq = seq;
    s.palm = frame(cprloop::Side::Palm, 0, t);
    s.dorsum = frame(cprloop::Side::Dorsum, 0, t);
    for (auto& c : s.palm.counts.data) c = static_cast<std::uint16_t>(count(rng));
    for (auto& c : s.dorsum.counts.data) c = static_cast<std::uint16_t>(count(rng));
    return s;
}

inline oracle::Mat to_mat(const Eigen::MatrixXd& m) {
    oracle::Mat out(m.rows(), oracle::Vec(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

inline oracle::Vec to_vec(const Eigen::VectorXd& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

}  // namespace testing
