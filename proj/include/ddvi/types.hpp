#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace ddvi {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

/// Value functions V, V^π, V* and the auxiliary DDVI iterate W.
using ValueVector = Vector;

}  // namespace ddvi
