#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/rng.hpp"

namespace qdmsim {

/// Two-resonance NV dip model along one bias-selected axis. Frequencies in
/// MHz, fields in µT. Each resonance is a hyperfine pair of Lorentzian dips.
struct OdmrSpec {
  double zero_field_splitting = 2870.0;       // MHz
  double gyromagnetic = 28.0;                 // MHz per mT along nv_axis
  std::array<double, 3> nv_axis{0.57735026918962576, 0.57735026918962576,
                                0.57735026918962576};
  double linewidth = 1.0;    // MHz FWHM per sub-dip
  double contrast = 0.03;    // total dip depth of one resonance group
  double hyperfine = 3.05;   // MHz between the two sub-dips of a group
  std::vector<double> freq_grid;  // MHz, strictly increasing
};

struct Spectrum {
  std::vector<double> freqs;   // MHz
  std::vector<double> values;  // fluorescence contrast, 1 off resonance
};

inline double projected_field_mt(const std::array<double, 3>& b_ut,
                                 const OdmrSpec& spec) {
  return (b_ut[0] * spec.nv_axis[0] + b_ut[1] * spec.nv_axis[1] +
          b_ut[2] * spec.nv_axis[2]) * 1e-3;
}

namespace detail {

/// One resonance group: hyperfine pair of equal Lorentzian dips around fc.
inline double dip_group(double f, double fc, double width, double amplitude,
                        double hyperfine) {
  const double hw = width / 2;
  const double hw2 = hw * hw;
  const double d1 = f - (fc - hyperfine / 2);
  const double d2 = f - (fc + hyperfine / 2);
  return amplitude / 2 * (hw2 / (d1 * d1 + hw2) + hw2 / (d2 * d2 + hw2));
}

}  // namespace detail

/// freq grid spanning both resonance groups of fields up to |B|max (µT),
/// sampled finely enough for sub-percent center recovery.
inline std::vector<double> make_freq_grid(const OdmrSpec& spec,
                                          double bmax_ut,
                                          double step_mhz = 0.1) {
  const double span =
      spec.gyromagnetic * bmax_ut * 1e-3 + spec.hyperfine + 8 * spec.linewidth;
  std::vector<double> grid;
  for (double f = spec.zero_field_splitting - span;
       f <= spec.zero_field_splitting + span + step_mhz / 2; f += step_mhz)
    grid.push_back(f);
  return grid;
}

/// Spectrum = 1 - dips at D ± gamma * (B . nv_axis), each split into the
/// hyperfine pair, plus white noise.
inline Spectrum synthesize_odmr(const std::array<double, 3>& b_ut,
                                const OdmrSpec& spec, double noise_sigma,
                                std::uint64_t seed) {
  if (spec.freq_grid.size() < 8)
    throw config_error("freq_grid too small");
  if (spec.linewidth <= 0 || spec.contrast <= 0 || spec.contrast >= 1)
    throw config_error("invalid linewidth/contrast");
  const double shift = spec.gyromagnetic * projected_field_mt(b_ut, spec);
  const double f_minus = spec.zero_field_splitting - std::abs(shift);
  const double f_plus = spec.zero_field_splitting + std::abs(shift);
  const double margin = spec.hyperfine / 2;
  if (f_minus - margin < spec.freq_grid.front() ||
      f_plus + margin > spec.freq_grid.back())
    throw std::range_error("resonance outside the sampled frequency grid");

  Spectrum s;
  s.freqs = spec.freq_grid;
  s.values.resize(s.freqs.size());
  Rng rng = Rng(seed).derive("odmr");
  for (std::size_t i = 0; i < s.freqs.size(); ++i) {
    const double f = s.freqs[i];
    double v = 1.0;
    v -= detail::dip_group(f, f_minus, spec.linewidth, spec.contrast,
                           spec.hyperfine);
    v -= detail::dip_group(f, f_plus, spec.linewidth, spec.contrast,
                           spec.hyperfine);
    if (noise_sigma > 0) v += noise_sigma * rng.next_gaussian();
    s.values[i] = v;
  }
  return s;
}

struct LorentzianFit {
  double f_minus = 0;   // lower group center, MHz
  double f_plus = 0;    // upper group center, MHz
  std::array<double, 2> linewidths{};
  std::array<double, 2> contrasts{};
  double residual = 0;  // final residual norm
  int iterations = 0;
  std::vector<double> accepted_sse;  // strictly decreasing by construction
};

namespace detail {

struct DipModelEval {
  double value;
  std::array<double, 6> jac;  // d/d(fc1, fc2, w1, w2, a1, a2)
};

inline DipModelEval eval_dip_model(double f, const std::array<double, 6>& p,
                                   double hyperfine) {
  DipModelEval e{1.0, {}};
  for (int g = 0; g < 2; ++g) {
    const double fc = p[g], w = p[2 + g], a = p[4 + g];
    const double hw = w / 2, hw2 = hw * hw;
    for (int s = 0; s < 2; ++s) {
      const double d = f - (fc + (s == 0 ? -hyperfine / 2 : hyperfine / 2));
      const double den = d * d + hw2;
      const double lor = hw2 / den;
      e.value -= a / 2 * lor;
      // partials of -(a/2) * hw2/den
      e.jac[g] += -a / 2 * (2 * d * hw2) / (den * den);        // d/dfc (chain: dd/dfc = -1 folded)
      e.jac[2 + g] += -a / 2 * (hw * d * d) / (den * den);     // d/dw
      e.jac[4 + g] += -lor / 2;                                 // d/da
    }
  }
  return e;
}

/// Solve (A + lambda I) x = b for symmetric positive A, 6x6, Gaussian
/// elimination with partial pivoting.
inline bool solve6(std::array<std::array<double, 6>, 6> a,
                   std::array<double, 6> b, double lambda,
                   std::array<double, 6>& x) {
  for (int i = 0; i < 6; ++i) a[i][i] += lambda * (a[i][i] > 0 ? a[i][i] : 1.0);
  for (int col = 0; col < 6; ++col) {
    int piv = col;
    for (int r = col + 1; r < 6; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 6; ++r) {
      const double m = a[r][col] / a[col][col];
      for (int c = col; c < 6; ++c) a[r][c] -= m * a[col][c];
      b[r] -= m * b[col];
    }
  }
  for (int i = 5; i >= 0; --i) {
    double s = b[i];
    for (int c = i + 1; c < 6; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return true;
}

}  // namespace detail

/// Nonlinear least squares over the two-group dip model, damped Gauss-Newton
/// with Levenberg-style lambda control; initialized from the two deepest
/// local-minimum groups. Steps are accepted only if the SSE decreases.
inline LorentzianFit fit_lorentzian(const Spectrum& spectrum,
                                    const OdmrSpec& model,
                                    int max_iterations = 200,
                                    double step_tolerance = 1e-9) {
  const std::size_t n = spectrum.values.size();
  if (n < 12 || spectrum.freqs.size() != n)
    throw shape_error("spectrum too small or inconsistent");

  // Local minima, deepest first.
  std::vector<std::pair<double, double>> minima;  // (value, freq)
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (spectrum.values[i] <= spectrum.values[i - 1] &&
        spectrum.values[i] < spectrum.values[i + 1])
      minima.emplace_back(spectrum.values[i], spectrum.freqs[i]);
  std::sort(minima.begin(), minima.end());

  const double group_radius = model.hyperfine + model.linewidth;
  double init1 = 0, init2 = 0;
  bool have1 = false, have2 = false;
  std::vector<double> group1, group2;
  for (const auto& [v, f] : minima) {
    if (!have1) {
      init1 = f;
      have1 = true;
      group1.push_back(f);
    } else if (std::abs(f - init1) <= group_radius && !have2) {
      group1.push_back(f);
    } else if (!have2) {
      init2 = f;
      have2 = true;
      group2.push_back(f);
    } else if (std::abs(f - init2) <= group_radius) {
      group2.push_back(f);
    }
  }
  if (!have1 || !have2)
    throw fit_error("could not locate two resolvable dip groups",
                    std::numeric_limits<double>::infinity());
  auto center_of = [](const std::vector<double>& g) {
    double s = 0;
    for (double f : g) s += f;
    return s / static_cast<double>(g.size());
  };
  double fc1 = center_of(group1), fc2 = center_of(group2);
  if (fc1 > fc2) std::swap(fc1, fc2);

  double depth = 0;
  for (double v : spectrum.values) depth = std::max(depth, 1.0 - v);
  std::array<double, 6> p{fc1, fc2, model.linewidth, model.linewidth,
                          std::max(depth, 1e-3), std::max(depth, 1e-3)};

  auto sse_of = [&](const std::array<double, 6>& params) {
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = detail::eval_dip_model(spectrum.freqs[i], params,
                                              model.hyperfine).value -
                       spectrum.values[i];
      sse += r * r;
    }
    return sse;
  };

  LorentzianFit fit;
  double sse = sse_of(p);
  fit.accepted_sse.push_back(sse);
  double lambda = 1e-3;
  bool converged = false;
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    std::array<std::array<double, 6>, 6> jtj{};
    std::array<double, 6> jtr{};
    for (std::size_t i = 0; i < n; ++i) {
      const auto e = detail::eval_dip_model(spectrum.freqs[i], p,
                                            model.hyperfine);
      const double r = e.value - spectrum.values[i];
      for (int a = 0; a < 6; ++a) {
        jtr[a] += e.jac[a] * r;
        for (int b = a; b < 6; ++b) jtj[a][b] += e.jac[a] * e.jac[b];
      }
    }
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < a; ++b) jtj[a][b] = jtj[b][a];

    bool accepted = false;
    double step_norm = 0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      std::array<double, 6> delta{};
      if (!detail::solve6(jtj, jtr, lambda, delta)) {
        lambda *= 10;
        continue;
      }
      std::array<double, 6> trial = p;
      step_norm = 0;
      for (int a = 0; a < 6; ++a) {
        trial[a] -= delta[a];
        step_norm += delta[a] * delta[a];
      }
      const double trial_sse = sse_of(trial);
      if (trial_sse < sse) {
        p = trial;
        sse = trial_sse;
        fit.accepted_sse.push_back(sse);
        lambda = std::max(lambda * 0.5, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10;
    }
    if (!accepted) {  // damping exhausted at a local minimum
      converged = true;
      break;
    }
    const double scale = std::abs(p[0]) + std::abs(p[1]) + 1.0;
    if (std::sqrt(step_norm) < step_tolerance * scale) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw fit_error("lorentzian fit did not converge", std::sqrt(sse));

  fit.iterations = iter;
  fit.residual = std::sqrt(sse);
  fit.f_minus = std::min(p[0], p[1]);
  fit.f_plus = std::max(p[0], p[1]);
  const bool swapped = p[0] > p[1];
  fit.linewidths = {std::abs(swapped ? p[3] : p[2]),
                    std::abs(swapped ? p[2] : p[3])};
  fit.contrasts = {swapped ? p[5] : p[4], swapped ? p[4] : p[5]};
  return fit;
}

struct FieldExtraction {
  double b_parallel_ut = 0;        // field projection along the NV axis
  double common_mode_shift = 0;    // MHz, temperature proxy
};

/// B∥ from the resonance splitting; the common-mode shift of the pair is the
/// temperature proxy and cancels out of the field estimate.
inline FieldExtraction extract_field(double f_minus, double f_plus,
                                     const OdmrSpec& spec) {
  if (f_plus < f_minus)
    throw std::invalid_argument("extract_field requires f_plus >= f_minus");
  FieldExtraction out;
  out.b_parallel_ut = (f_plus - f_minus) / (2 * spec.gyromagnetic) * 1e3;
  out.common_mode_shift = (f_plus + f_minus) / 2 - spec.zero_field_splitting;
  return out;
}

/// Optional measurement layer: route every pixel of a vector-field image
/// through synthesize -> fit -> extract on top of a bias field, returning the
/// single projected channel B∥ (IC contribution only). Slow by construction;
/// meant for validation runs.
inline VectorFieldImage odmr_extract_image(const VectorFieldImage& img,
                                           const OdmrSpec& spec_in,
                                           const std::array<double, 3>& bias_ut,
                                           double spectrum_noise,
                                           std::uint64_t seed) {
  OdmrSpec spec = spec_in;
  if (spec.freq_grid.empty()) {
    double bmax = std::sqrt(bias_ut[0] * bias_ut[0] + bias_ut[1] * bias_ut[1] +
                            bias_ut[2] * bias_ut[2]);
    double px_max = 0;
    for (double v : img.data) px_max = std::max(px_max, std::abs(v));
    spec.freq_grid = make_freq_grid(spec, bmax + 2.0 * px_max + 10.0);
  }
  const double bias_par =
      projected_field_mt(bias_ut, spec) * 1e3;  // µT along axis
  const double sign = bias_par >= 0 ? 1.0 : -1.0;
  VectorFieldImage out(img.height, img.width, 1);
  int failures = 0;
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      const std::array<double, 3> total{img.at(i, j, 0) + bias_ut[0],
                                        img.at(i, j, 1) + bias_ut[1],
                                        img.at(i, j, 2) + bias_ut[2]};
      const std::uint64_t px_seed =
          Rng(seed).derive(static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(j)).next_u64();
      try {
        const Spectrum s = synthesize_odmr(total, spec, spectrum_noise, px_seed);
        const LorentzianFit fit = fit_lorentzian(s, spec);
        const FieldExtraction ex = extract_field(fit.f_minus, fit.f_plus, spec);
        out.at(i, j, 0) = sign * ex.b_parallel_ut - bias_par;
      } catch (const fit_error&) {
        out.at(i, j, 0) = 0.0;
        ++failures;
      }
    }
  }
  (void)failures;
  return out;
}

}  // namespace qdmsim
