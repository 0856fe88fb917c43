#pragma once

#include <Eigen/Dense>

namespace crossdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace crossdiff
