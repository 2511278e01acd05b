#include "groupdecode/fft.hpp"

#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include <fftw3.h>

namespace gdec::fft {
namespace {

// The FFTW planner is not re-entrant; plans are created once per (kind, size)
// and executed through the thread-safe new-array interface.
enum class Kind { c2c_forward, c2c_backward, r2c, c2r };

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_plan get_plan(Kind kind, int n) {
  static std::map<std::pair<Kind, int>, fftw_plan> cache;
  std::lock_guard lock(planner_mutex());
  auto key = std::make_pair(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  std::vector<fftw_complex> cin(static_cast<std::size_t>(n));
  std::vector<fftw_complex> cout(static_cast<std::size_t>(n));
  std::vector<double> rbuf(static_cast<std::size_t>(n));
  fftw_plan p = nullptr;
  switch (kind) {
    case Kind::c2c_forward:
      p = fftw_plan_dft_1d(n, cin.data(), cout.data(), FFTW_FORWARD, flags);
      break;
    case Kind::c2c_backward:
      p = fftw_plan_dft_1d(n, cin.data(), cout.data(), FFTW_BACKWARD, flags);
      break;
    case Kind::r2c:
      p = fftw_plan_dft_r2c_1d(n, rbuf.data(), cout.data(), flags);
      break;
    case Kind::c2r:
      p = fftw_plan_dft_c2r_1d(n, cin.data(), rbuf.data(), flags);
      break;
  }
  if (p == nullptr) throw std::runtime_error("fftw: failed to create plan");
  cache.emplace(key, p);
  return p;
}

fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

std::vector<Complex> forward(std::span<const Complex> x) {
  const int n = static_cast<int>(x.size());
  std::vector<Complex> in(x.begin(), x.end());
  std::vector<Complex> out(x.size());
  if (n == 0) return out;
  fftw_execute_dft(get_plan(Kind::c2c_forward, n), as_fftw(in.data()), as_fftw(out.data()));
  return out;
}

std::vector<Complex> inverse(std::span<const Complex> X) {
  const int n = static_cast<int>(X.size());
  std::vector<Complex> in(X.begin(), X.end());
  std::vector<Complex> out(X.size());
  if (n == 0) return out;
  fftw_execute_dft(get_plan(Kind::c2c_backward, n), as_fftw(in.data()), as_fftw(out.data()));
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

std::vector<Complex> rfft(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x.begin(), x.end());
  std::vector<Complex> out(x.size() / 2 + 1);
  if (n == 0) return out;
  fftw_execute_dft_r2c(get_plan(Kind::r2c, n), in.data(), as_fftw(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const Complex> X, std::size_t n) {
  if (X.size() != n / 2 + 1) throw std::invalid_argument("irfft: spectrum length does not match n");
  // c2r destroys its input
  std::vector<Complex> in(X.begin(), X.end());
  std::vector<double> out(n);
  if (n == 0) return out;
  fftw_execute_dft_c2r(get_plan(Kind::c2r, static_cast<int>(n)), as_fftw(in.data()), out.data());
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace gdec::fft
