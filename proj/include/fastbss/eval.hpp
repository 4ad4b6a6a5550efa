#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fastbss/error.hpp"
#include "fastbss/signal.hpp"

namespace fastbss {

/// Reported in place of +inf for a perfect estimate.
inline constexpr double kSiSdrCap = 100.0;

/// Scale-invariant SDR in dB: 10 log10(|a s|^2 / |a s - s_hat|^2) with a the
/// least-squares scale of the reference s onto the estimate s_hat.
inline double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  require(estimate.size() == reference.size(), "si_sdr: lengths differ");
  double ref_energy = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    ref_energy += reference[i] * reference[i];
    dot += reference[i] * estimate[i];
  }
  require(ref_energy > 0.0, "si_sdr: reference is zero");
  const double alpha = dot / ref_energy;
  double target = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = alpha * reference[i];
    target += s * s;
    noise += (s - estimate[i]) * (s - estimate[i]);
  }
  if (noise <= target * 1e-10) return kSiSdrCap;
  if (target <= 0.0) return -kSiSdrCap;
  return std::min(kSiSdrCap, 10.0 * std::log10(target / noise));
}

struct TimingStats {
  double mean = 0.0;
  double median = 0.0;
};

/// Mean and median seconds per iteration, excluding the first (warm-up)
/// entry when there is more than one.
inline TimingStats timing_stats(std::span<const double> trace) {
  require(!trace.empty(), "timing_stats: empty trace");
  std::vector<double> v(trace.begin() + (trace.size() > 1 ? 1 : 0), trace.end());
  TimingStats out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  out.median = v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return out;
}

/// Assignment estimate[perm[i]] <-> reference[i] maximizing mean SI-SDR,
/// by exhaustive search (intended for N <= 5).
inline std::vector<std::size_t> best_permutation(const std::vector<std::vector<double>>& estimates,
                                                 const std::vector<std::vector<double>>& references) {
  require(estimates.size() == references.size(), "best_permutation: counts differ");
  require(references.size() <= 8, "best_permutation: too many sources for exhaustive search");
  const std::size_t n = references.size();
  std::vector<std::vector<double>> score(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) score[i][j] = si_sdr(estimates[j], references[i]);
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += score[i][perm[i]];
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct SourceScore {
  std::size_t source = 0;
  double si_sdr_db = 0.0;
  double input_si_sdr_db = 0.0;
  double improvement_db = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<SourceScore> scores;
  double mean_seconds = 0.0;
  double median_seconds = 0.0;

  double mean_improvement() const {
    if (scores.empty()) return 0.0;
    double s = 0.0;
    for (const auto& sc : scores) s += sc.improvement_db;
    return s / static_cast<double>(scores.size());
  }
};

/// Scores one channel of each estimate against the matching reference image
/// after resolving the source permutation. Input SI-SDR is the mixture's.
inline EvalReport evaluate(const std::vector<Waveform>& estimates, const std::vector<Waveform>& references,
                           const Waveform& mixture, std::size_t channel = 0, std::string method = {}) {
  require(!references.empty(), "evaluate: no references");
  require(estimates.size() == references.size(), "evaluate: estimate and reference counts differ");
  auto pick = [&](const Waveform& w, const char* what) {
    require(channel < w.num_channels(), std::string("evaluate: channel out of range in ") + what);
    return w.channels[channel];
  };
  std::vector<std::vector<double>> est, ref;
  for (const auto& w : estimates) est.push_back(pick(w, "estimate"));
  for (const auto& w : references) ref.push_back(pick(w, "reference"));
  const auto mix = pick(mixture, "mixture");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    require(ref[i].size() == mix.size(), "evaluate: reference and mixture lengths differ");
    require(est[i].size() == mix.size(), "evaluate: estimate and mixture lengths differ");
  }
  const auto perm = best_permutation(est, ref);
  EvalReport report;
  report.method = std::move(method);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    SourceScore s;
    s.source = i;
    s.si_sdr_db = si_sdr(est[perm[i]], ref[i]);
    s.input_si_sdr_db = si_sdr(mix, ref[i]);
    s.improvement_db = s.si_sdr_db - s.input_si_sdr_db;
    report.scores.push_back(s);
  }
  return report;
}

inline void write_report_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "method,source,si_sdr_db,input_si_sdr_db,improvement_db,mean_sec_per_iter,median_sec_per_iter\n";
  for (const auto& r : reports)
    for (const auto& s : r.scores)
      os << r.method << ',' << s.source << ',' << s.si_sdr_db << ',' << s.input_si_sdr_db << ',' << s.improvement_db
         << ',' << r.mean_seconds << ',' << r.median_seconds << '\n';
}

}  // namespace fastbss
