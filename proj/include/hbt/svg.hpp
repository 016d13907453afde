#pragma once

// Self-contained SVG plots for the matrix stage and the report.

#include <string>
#include <vector>

#include "hbt/analysis.hpp"

namespace hbt {

/// Contrast heat map: rows are arm-A bins, columns arm-B bins, both in
/// increasing wavelength. Empty cells are grey.
std::string svg_matrix(const ContrastMatrix& m, const std::string& title);

struct ProfileSeries {
  std::string label;
  std::vector<DiagonalPoint> points;
};

/// Contrast with error bars along one or more diagonals.
std::string svg_profiles(const std::vector<ProfileSeries>& series, const std::string& title);

/// Normalized histogram points with the fitted model drawn over them.
std::string svg_histogram(const NormalizedHistogram& h, const PeakFitResult* fit, const std::string& title);

void write_text_file(const std::string& path, const std::string& text);

} // namespace hbt
