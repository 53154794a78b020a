#include "periscope/verimetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "periscope/error.hpp"

namespace periscope {

std::string to_string(EerMethod m) { return m == EerMethod::interpolated ? "interpolated" : "midpoint"; }

EerMethod parse_eer_method(const std::string& text) {
  if (text == "interpolated") return EerMethod::interpolated;
  if (text == "midpoint") return EerMethod::midpoint;
  fail(ErrorCode::invalid_argument, "unknown EER method '" + text + "'");
}

namespace {

std::vector<double> sorted_checked(std::span<const double> values, const char* what) {
  if (values.empty()) fail(ErrorCode::empty_scores, std::string("no ") + what + " scores");
  std::vector<double> out(values.begin(), values.end());
  for (const double v : out)
    if (std::isnan(v)) fail(ErrorCode::invalid_argument, std::string("NaN in ") + what + " scores");
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

ErrorCurve error_curve(std::span<const double> genuine, std::span<const double> impostor) {
  const auto g = sorted_checked(genuine, "genuine");
  const auto im = sorted_checked(impostor, "impostor");
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());

  ErrorCurve c;
  c.thresholds.reserve(g.size() + im.size() + 1);
  // gi / ii count scores strictly below the current threshold.
  std::size_t gi = 0, ii = 0;
  while (gi < g.size() || ii < im.size()) {
    double t;
    if (ii == im.size() || (gi < g.size() && g[gi] <= im[ii]))
      t = g[gi];
    else
      t = im[ii];
    c.thresholds.push_back(t);
    c.far.push_back(static_cast<double>(im.size() - ii) / ni);
    c.frr.push_back(static_cast<double>(gi) / ng);
    while (gi < g.size() && g[gi] == t) ++gi;
    while (ii < im.size() && im[ii] == t) ++ii;
  }
  const double top = c.thresholds.back();
  c.thresholds.push_back(std::isinf(top) ? top : std::nextafter(top, std::numeric_limits<double>::infinity()));
  c.far.push_back(0.0);
  c.frr.push_back(1.0);
  return c;
}

ErrorCurve error_curve(const ScoreSet& scores) { return error_curve(scores.genuine, scores.impostor); }

EerResult eer(const ErrorCurve& curve, EerMethod method) {
  if (curve.size() == 0) fail(ErrorCode::empty_scores, "empty error curve");
  EerResult r;
  r.method = method;
  std::size_t k = 0;
  while (k < curve.size() && curve.far[k] - curve.frr[k] > 0.0) ++k;
  if (k == curve.size()) k = curve.size() - 1;
  const double dk = curve.far[k] - curve.frr[k];
  if (dk == 0.0 || k == 0) {
    r.eer = (curve.far[k] + curve.frr[k]) / 2.0;
    r.threshold = curve.thresholds[k];
    return r;
  }
  const double dp = curve.far[k - 1] - curve.frr[k - 1];
  if (method == EerMethod::interpolated) {
    const double a = dp / (dp - dk);
    r.eer = curve.far[k - 1] + a * (curve.far[k] - curve.far[k - 1]);
    r.threshold = curve.thresholds[k - 1] + a * (curve.thresholds[k] - curve.thresholds[k - 1]);
  } else {
    const std::size_t j = std::abs(dp) <= std::abs(dk) ? k - 1 : k;
    r.eer = (curve.far[j] + curve.frr[j]) / 2.0;
    r.threshold = curve.thresholds[j];
  }
  return r;
}

double frr_at_far(const ErrorCurve& curve, double far_target, bool interpolate) {
  if (!(far_target > 0.0 && far_target < 1.0))
    fail(ErrorCode::invalid_argument, "far_target must lie in (0, 1)");
  std::size_t k = 0;
  while (k < curve.size() && curve.far[k] > far_target) ++k;
  if (k == curve.size()) return 1.0;
  if (!interpolate || k == 0 || curve.far[k] == far_target) return curve.frr[k];
  const double a = (curve.far[k - 1] - far_target) / (curve.far[k - 1] - curve.far[k]);
  return curve.frr[k - 1] + a * (curve.frr[k] - curve.frr[k - 1]);
}

void write_curve_csv(std::ostream& out, const ErrorCurve& curve) {
  out << "threshold,far,frr\n";
  char line[96];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", curve.thresholds[i], curve.far[i], curve.frr[i]);
    out << line;
  }
}

void write_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  write_curve_csv(out, curve);
  if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
}

std::string format_percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", rate * 100.0);
  return buf;
}

}  // namespace periscope
