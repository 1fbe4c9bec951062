#include "dfe/tensor.hpp"

#include <cmath>

namespace dfe {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void expect_dim(const char* op, const char* axis, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": axis " + axis + " has extent " +
                         std::to_string(got) + ", expected " + std::to_string(want));
  }
}

void expect_rank(const char* op, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(want) +
                         " input, got rank " + std::to_string(got));
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace dfe
