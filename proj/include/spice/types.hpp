#pragma once

#include <Eigen/Dense>

namespace spice {

// Storage precision for model state and linear algebra. Double by
// default; configure with -DSPICE_SINGLE_PRECISION for the float build.
#ifdef SPICE_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Matrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<real, Eigen::Dynamic, 1>;
using BoolVector = Eigen::Matrix<bool, Eigen::Dynamic, 1>;

}  // namespace spice
