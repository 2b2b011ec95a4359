#include "essm/dsp.hpp"

#include <cmath>
#include <numeric>

#include "essm/errors.hpp"

namespace essm::ingest {

namespace {

double bessel_i0(double x) {
  // power series; converges quickly for the window arguments used here
  double sum = 1.0, term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < 1e-14 * sum) break;
  }
  return sum;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

struct Biquad {
  double b0, b1, b2, a1, a2;  // a0 normalized to 1
};

Biquad make_notch(double f0, double fs, double q) {
  const double w0 = 2.0 * M_PI * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return Biquad{1.0 / a0, -2.0 * c / a0, 1.0 / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
}

/// One direct-form-II-transposed pass with steady-state initial conditions
/// scaled by the first sample, so constants pass through without transients.
void filter_pass(const Biquad& f, std::vector<double>& x) {
  if (x.empty()) return;
  const double dc = (f.b0 + f.b1 + f.b2) / (1.0 + f.a1 + f.a2);
  const double s2_ss = f.b2 - f.a2 * dc;
  const double s1_ss = f.b1 - f.a1 * dc + s2_ss;
  double s1 = s1_ss * x.front();
  double s2 = s2_ss * x.front();
  for (auto& v : x) {
    const double y = f.b0 * v + s1;
    s1 = f.b1 * v - f.a1 * y + s2;
    s2 = f.b2 * v - f.a2 * y;
    v = y;
  }
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, std::size_t fs_in,
                             std::size_t fs_out) {
  if (fs_in == 0 || fs_out == 0) throw ConfigError("resample: zero sampling rate");
  if (fs_in == fs_out) return x;
  const std::size_t g = std::gcd(fs_in, fs_out);
  const std::size_t up = fs_out / g;    // L
  const std::size_t down = fs_in / g;   // M
  const std::size_t n_out = x.size() * up / down;
  if (x.empty()) return {};

  // Kernel on the fs_in*L grid.
  const double cutoff_hz = 0.9 * 0.5 * static_cast<double>(std::min(fs_in, fs_out));
  const double fc = cutoff_hz / (static_cast<double>(fs_in) * static_cast<double>(up));
  const std::size_t half = 12 * std::max(up, down);
  const std::size_t taps = 2 * half + 1;
  const double beta = 8.6;
  const double i0b = bessel_i0(beta);
  std::vector<double> h(taps);
  for (std::size_t n = 0; n < taps; ++n) {
    const double d = static_cast<double>(n) - static_cast<double>(half);
    const double frac = d / static_cast<double>(half);
    const double window = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - frac * frac))) / i0b;
    h[n] = 2.0 * fc * sinc(2.0 * fc * d) * window;
  }
  // Normalize each polyphase branch (residue class mod L) to unit sum; every
  // output sample draws all of its taps from exactly one branch.
  for (std::size_t r = 0; r < up; ++r) {
    double s = 0.0;
    for (std::size_t n = r; n < taps; n += up) s += h[n];
    if (s != 0.0)
      for (std::size_t n = r; n < taps; n += up) h[n] /= s;
  }

  std::vector<double> y(n_out, 0.0);
  const std::ptrdiff_t hspan = static_cast<std::ptrdiff_t>(half);
  const std::ptrdiff_t n_in = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t upi = static_cast<std::ptrdiff_t>(up);
  const auto ceil_div = [](std::ptrdiff_t a, std::ptrdiff_t b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
  };
  for (std::size_t j = 0; j < n_out; ++j) {
    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(j * down);
    std::ptrdiff_t lo = ceil_div(base - hspan, upi);
    std::ptrdiff_t hi = (base + hspan) / upi;  // base + hspan >= 0
    if (lo < 0) lo = 0;
    if (hi >= n_in) hi = n_in - 1;
    double acc = 0.0;
    for (std::ptrdiff_t n = lo; n <= hi; ++n) {
      const std::ptrdiff_t idx = base - n * static_cast<std::ptrdiff_t>(up) + hspan;
      acc += x[static_cast<std::size_t>(n)] * h[static_cast<std::size_t>(idx)];
    }
    y[j] = acc;
  }
  return y;
}

std::vector<double> notch_filter(const std::vector<double>& x, double fs,
                                 const std::vector<double>& freqs, double q) {
  if (fs <= 0) throw ConfigError("notch_filter: sampling rate must be positive");
  if (q <= 0) throw ConfigError("notch_filter: Q must be positive");
  for (double f : freqs) {
    if (f <= 0 || f >= fs / 2.0)
      throw ConfigError("notch_filter: frequency " + std::to_string(f) +
                        " Hz not below Nyquist (" + std::to_string(fs / 2.0) + " Hz)");
  }
  std::vector<double> y = x;
  for (double f : freqs) {
    const Biquad bq = make_notch(f, fs, q);
    filter_pass(bq, y);
    std::reverse(y.begin(), y.end());
    filter_pass(bq, y);
    std::reverse(y.begin(), y.end());
  }
  return y;
}

}  // namespace essm::ingest
