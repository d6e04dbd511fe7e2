#include "rcm/convolution.hpp"

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

Backend parse_backend(std::string_view name) {
  if (name == "auto") return Backend::Auto;
  if (name == "fft") return Backend::Fft;
  if (name == "naive") return Backend::Naive;
  throw ArgumentError("unknown backend '" + std::string(name) + "' (expected auto, fft or naive)");
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::Auto: return "auto";
    case Backend::Fft: return "fft";
    case Backend::Naive: return "naive";
  }
  return "auto";
}

namespace {

constexpr double kFlushRatio = 1e-15;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

template <typename T>
struct FftwDeleter {
  void operator()(T* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwDeleter<double>>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwDeleter<fftw_complex>>;

RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

struct PlanPair {
  fftw_plan forward;
  fftw_plan inverse;
};

// FFTW planning is not thread-safe; execution with fresh arrays is. Plans are
// created once per size under a lock and reused with the new-array interface.
PlanPair plans_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  RealBuffer r = alloc_real(n);
  ComplexBuffer c = alloc_complex(n / 2 + 1);
  const int len = static_cast<int>(n);
  PlanPair p{fftw_plan_dft_r2c_1d(len, r.get(), c.get(), FFTW_ESTIMATE),
             fftw_plan_dft_c2r_1d(len, c.get(), r.get(), FFTW_ESTIMATE)};
  cache.emplace(n, p);
  return p;
}

// Spectra of two zero-padded real vectors of transform length n.
struct Spectra {
  ComplexBuffer a;
  ComplexBuffer b;
};

Spectra transform_pair(std::span<const double> a, std::span<const double> b, std::size_t n,
                       const PlanPair& plans) {
  RealBuffer buf = alloc_real(n);
  Spectra s{alloc_complex(n / 2 + 1), alloc_complex(n / 2 + 1)};
  std::fill(buf.get(), buf.get() + n, 0.0);
  std::copy(a.begin(), a.end(), buf.get());
  fftw_execute_dft_r2c(plans.forward, buf.get(), s.a.get());
  std::fill(buf.get(), buf.get() + n, 0.0);
  std::copy(b.begin(), b.end(), buf.get());
  fftw_execute_dft_r2c(plans.forward, buf.get(), s.b.get());
  return s;
}

std::vector<double> inverse_prefix(fftw_complex* spectrum, std::size_t n, std::size_t count,
                                   const PlanPair& plans) {
  RealBuffer buf = alloc_real(n);
  fftw_execute_dft_c2r(plans.inverse, spectrum, buf.get());
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> out(count);
  double peak = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    double v = buf[i] * scale;
    out[i] = v > 0.0 ? v : 0.0;
    peak = std::max(peak, out[i]);
  }
  const double floor = peak * kFlushRatio;
  for (double& v : out) {
    if (v < floor) v = 0.0;
  }
  return out;
}

std::vector<double> convolve_fft(std::span<const double> a, std::span<const double> b) {
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  const PlanPair plans = plans_for(n);
  Spectra s = transform_pair(a, b, n, plans);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    std::complex<double> x(s.a[k][0], s.a[k][1]), y(s.b[k][0], s.b[k][1]);
    std::complex<double> z = x * y;
    s.a[k][0] = z.real();
    s.a[k][1] = z.imag();
  }
  return inverse_prefix(s.a.get(), n, out_len, plans);
}

// Circular cross-correlation of length n >= |parent| has no wrap-around on the
// valid offsets, since i + j <= |parent| - 1 there.
std::vector<double> correlate_fft(std::span<const double> parent, std::span<const double> sibling) {
  const std::size_t out_len = parent.size() - sibling.size() + 1;
  const std::size_t n = next_pow2(parent.size());
  const PlanPair plans = plans_for(n);
  Spectra s = transform_pair(parent, sibling, n, plans);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    std::complex<double> x(s.a[k][0], s.a[k][1]), y(s.b[k][0], s.b[k][1]);
    std::complex<double> z = x * std::conj(y);
    s.a[k][0] = z.real();
    s.a[k][1] = z.imag();
  }
  return inverse_prefix(s.a.get(), n, out_len, plans);
}

std::vector<double> convolve_naive(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    double* dst = out.data() + i;
    for (std::size_t j = 0; j < b.size(); ++j) dst[j] += ai * b[j];
  }
  return out;
}

std::vector<double> correlate_naive(std::span<const double> parent,
                                    std::span<const double> sibling) {
  std::vector<double> out(parent.size() - sibling.size() + 1, 0.0);
  for (std::size_t j = 0; j < sibling.size(); ++j) {
    const double sj = sibling[j];
    const double* src = parent.data() + j;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += src[i] * sj;
  }
  return out;
}

}  // namespace

std::vector<double> convolve(std::span<const double> a, std::span<const double> b,
                             Backend backend) {
  if (a.empty() || b.empty()) throw ArgumentError("convolve needs nonempty inputs");
  const bool use_fft = backend == Backend::Fft ||
                       (backend == Backend::Auto && std::min(a.size(), b.size()) >= kFftThreshold);
  return use_fft ? convolve_fft(a, b) : convolve_naive(a, b);
}

std::vector<double> correlate(std::span<const double> parent, std::span<const double> sibling,
                              Backend backend) {
  if (parent.empty() || sibling.empty()) throw ArgumentError("correlate needs nonempty inputs");
  if (sibling.size() > parent.size()) {
    throw ArgumentError("correlate: sibling message longer than parent message");
  }
  const std::size_t out_len = parent.size() - sibling.size() + 1;
  const bool use_fft = backend == Backend::Fft ||
                       (backend == Backend::Auto &&
                        std::min(sibling.size(), out_len) >= kFftThreshold);
  return use_fft ? correlate_fft(parent, sibling) : correlate_naive(parent, sibling);
}

}  // namespace rcm
