#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajcl {

/// Error thrown on incompatible tensor shapes; the message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major n-dimensional array. Value type; all layout is contiguous.
template <typename S>
struct Tensor {
  std::vector<int64_t> dims;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> d) : dims(std::move(d)), v(count(dims), S(0)) {}
  Tensor(std::vector<int64_t> d, std::vector<S> values) : dims(std::move(d)), v(std::move(values)) {
    if (static_cast<int64_t>(v.size()) != count(dims))
      throw ShapeError("tensor data length " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(dims));
  }

  static int64_t count(const std::vector<int64_t>& d) {
    int64_t n = 1;
    for (int64_t e : d) {
      if (e < 0) throw ShapeError("negative extent in shape " + shape_str(d));
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<int64_t> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int64_t> d, S value) {
    Tensor t(std::move(d));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  int rank() const { return static_cast<int>(dims.size()); }
  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int64_t dim(int i) const { return dims.at(static_cast<size_t>(i)); }

  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  S& at(int64_t i) { return v[static_cast<size_t>(i)]; }
  S at(int64_t i) const { return v[static_cast<size_t>(i)]; }
  S& at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * dims[1] + j)]; }
  S at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * dims[1] + j)]; }
  S& at(int64_t i, int64_t j, int64_t k) {
    return v[static_cast<size_t>((i * dims[1] + j) * dims[2] + k)];
  }
  S at(int64_t i, int64_t j, int64_t k) const {
    return v[static_cast<size_t>((i * dims[1] + j) * dims[2] + k)];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  /// Leading extents collapsed into rows: a (p×q) view of (..., q).
  int64_t last_dim() const { return dims.empty() ? 1 : dims.back(); }
  int64_t lead_count() const { return dims.empty() ? 1 : numel() / std::max<int64_t>(1, last_dim()); }

  std::string shape() const { return shape_str(dims); }

  static std::string shape_str(const std::vector<int64_t>& d) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
    os << ")";
    return os.str();
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.dims = dims;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

}  // namespace trajcl
