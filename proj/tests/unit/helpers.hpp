#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "melreport/autograd.hpp"
#include "melreport/parameters.hpp"

namespace testutil {

template <class T>
double scalar(melreport::Var<T> v)
{
    return static_cast<double>(v.value().data.at(0));
}

inline melreport::Tensor<double> randn(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0)
{
    std::mt19937_64 rng(seed);
    return melreport::normal_tensor<double>(r, c, sd, rng);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("melreport_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double max_abs_diff(const melreport::Tensor<float>& a, const melreport::Tensor<float>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

}  // namespace testutil
