#pragma once

#include <Eigen/Dense>

namespace fdbd {

// All internal math runs in double precision; f32 inputs are promoted on load.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace fdbd
