#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace drape {

// Row-major so that per-point rows (N×3, N×96, ...) are contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Raised when an input violates a documented precondition (shape mismatch,
/// out-of-range parameter).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for invalid configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DRAPE_REQUIRE(cond, msg)                                  \
  do {                                                            \
    if (!(cond)) throw ::drape::ContractError(std::string(msg));  \
  } while (0)

}  // namespace drape
