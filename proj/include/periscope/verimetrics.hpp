#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "periscope/simeng.hpp"

namespace periscope {

/// FAR/FRR sampled at every distinct score plus one point above the maximum.
/// A pair is accepted when score >= threshold.
struct ErrorCurve {
  std::vector<double> thresholds;
  std::vector<double> far;
  std::vector<double> frr;

  std::size_t size() const { return thresholds.size(); }
};

enum class EerMethod { interpolated, midpoint };

std::string to_string(EerMethod m);
EerMethod parse_eer_method(const std::string& text);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  EerMethod method = EerMethod::interpolated;
};

ErrorCurve error_curve(std::span<const double> genuine, std::span<const double> impostor);
ErrorCurve error_curve(const ScoreSet& scores);

/// Crossing point of FAR and FRR. An exact FAR == FRR point wins; otherwise the
/// crossing step is either linearly interpolated or reduced to the (FAR+FRR)/2 of
/// its closer endpoint.
EerResult eer(const ErrorCurve& curve, EerMethod method = EerMethod::interpolated);

/// FRR at the smallest threshold with FAR <= far_target, or 1.0 when no threshold gets there.
/// With `interpolate`, FRR is read off the segment joining that point and its predecessor at FAR == far_target.
double frr_at_far(const ErrorCurve& curve, double far_target, bool interpolate = false);

void write_curve_csv(std::ostream& out, const ErrorCurve& curve);
void write_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve);

/// 0.0070 -> "0.70".
std::string format_percent(double rate);

}  // namespace periscope
