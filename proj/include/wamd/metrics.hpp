#pragma once

// Presentation-attack error rates. Score convention: higher = more
// morph-like; a sample is called morph when score >= threshold. APCER is the
// fraction of morph scores below the threshold (attacks passed as bona
// fide), BPCER the fraction of bona fide scores at or above it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "wamd/common.hpp"

namespace wamd {

struct ScoreSet {
  std::vector<double> bona_fide;
  std::vector<double> morph;
};

struct DetPoint {
  double threshold = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
};

/// Thresholds strictly increasing; APCER non-decreasing, BPCER
/// non-increasing along the curve.
struct DetCurve {
  std::vector<DetPoint> points;
};

inline double apcer(const ScoreSet& scores, double threshold) {
  if (scores.morph.empty())
    reject_input("apcer requires at least one morph score");
  std::size_t missed = 0;
  for (double s : scores.morph)
    if (s < threshold) ++missed;
  return static_cast<double>(missed) / static_cast<double>(scores.morph.size());
}

inline double bpcer(const ScoreSet& scores, double threshold) {
  if (scores.bona_fide.empty())
    reject_input("bpcer requires at least one bona fide score");
  std::size_t flagged = 0;
  for (double s : scores.bona_fide)
    if (s >= threshold) ++flagged;
  return static_cast<double>(flagged) /
         static_cast<double>(scores.bona_fide.size());
}

/// Full trade-off over the distinct observed scores plus -inf/+inf
/// sentinels (accept-all and reject-all operating points).
inline DetCurve det_curve(const ScoreSet& scores) {
  if (scores.bona_fide.empty() || scores.morph.empty())
    reject_input("det_curve requires non-empty bona fide and morph scores");
  std::vector<double> thresholds;
  thresholds.reserve(scores.bona_fide.size() + scores.morph.size() + 2);
  thresholds.push_back(-std::numeric_limits<double>::infinity());
  thresholds.insert(thresholds.end(), scores.bona_fide.begin(),
                    scores.bona_fide.end());
  thresholds.insert(thresholds.end(), scores.morph.begin(),
                    scores.morph.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  DetCurve curve;
  curve.points.reserve(thresholds.size());
  for (double t : thresholds)
    curve.points.push_back({t, apcer(scores, t), bpcer(scores, t)});
  return curve;
}

/// Detection equal error rate: the crossing of APCER and BPCER along the
/// curve, linearly interpolating the two rate sequences between adjacent
/// thresholds; exact equality points are returned as-is.
inline double d_eer(const ScoreSet& scores) {
  const DetCurve curve = det_curve(scores);
  const auto& pts = curve.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double diff = pts[i].apcer - pts[i].bpcer;
    if (diff == 0.0) return pts[i].apcer;
    if (diff > 0.0) {
      // first sign change; -inf sentinel guarantees i > 0
      const auto& lo = pts[i - 1];
      const auto& hi = pts[i];
      const double da = hi.apcer - lo.apcer;
      const double db = hi.bpcer - lo.bpcer;
      const double lambda = (lo.bpcer - lo.apcer) / (da - db);
      return lo.apcer + lambda * da;
    }
  }
  reject_state("d_eer: APCER never reached BPCER");  // unreachable
}

/// BPCER at the best achievable operating point with APCER <= target: the
/// largest curve threshold still meeting the target (no interpolation).
inline double bpcer_at_apcer(const ScoreSet& scores, double target) {
  if (!(target > 0.0 && target < 1.0))
    reject_input("bpcer_at_apcer target must lie in (0,1), got ", target);
  const DetCurve curve = det_curve(scores);
  double result = 1.0;
  for (const auto& p : curve.points)
    if (p.apcer <= target) result = p.bpcer;  // thresholds ascend
  return result;
}

}  // namespace wamd
