#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sketchgrad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. Everything user-facing throws one of these; callers that
// need exit codes map them at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};

// Row-major flattening. All vec(W) conventions in this library (data
// matrices acting on parameters, compressors, top-k tie-breaking) use
// flat index i * cols + j.
inline Vector flatten(const Matrix& w) {
  Vector v(w.size());
  Index k = 0;
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) v(k++) = w(i, j);
  return v;
}

inline Matrix unflatten(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols)
    throw ShapeError("unflatten: size " + std::to_string(v.size()) +
                     " != " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix w(rows, cols);
  Index k = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) w(i, j) = v(k++);
  return w;
}

inline double sq_fnorm(const Matrix& m) { return m.squaredNorm(); }

// Shortest decimal representation that round-trips to the same double.
// Used everywhere a float is written to a file so outputs are byte-stable.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace sketchgrad
