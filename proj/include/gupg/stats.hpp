#pragma once

#include <span>

namespace gupg {

/// Ordinary least squares y ≈ intercept + slope·x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Standard error of the slope; NaN with fewer than three points.
  double slope_stderr = 0.0;
  /// Root-mean-square residual.
  double residual_rms = 0.0;
  int points = 0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace gupg
