#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shisr/rng.hpp"
#include "shisr/tensor.hpp"

namespace testutil {

inline shisr::Tensor make(shisr::Shape s, const std::vector<double>& v, bool grad = false) {
  return shisr::Tensor::from(s, std::vector<shisr::Real>(v.begin(), v.end()), grad);
}

inline shisr::Tensor random(shisr::Shape s, shisr::Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool grad = false) {
  std::vector<shisr::Real> v(s.numel());
  for (auto& x : v) x = static_cast<shisr::Real>(rng.uniform(lo, hi));
  return shisr::Tensor::from(s, std::move(v), grad);
}

inline std::vector<double> values(const shisr::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("shisr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
