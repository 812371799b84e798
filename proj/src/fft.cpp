#include "vsep/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace vsep {
namespace {

std::mutex planner_mutex;

fftw_plan plan_1d(int n, int sign) {
  static std::map<std::pair<int, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(planner_mutex);
  auto key = std::make_pair(n, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  fftw_complex* buf = fftw_alloc_complex(static_cast<size_t>(n));
  fftw_plan p = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(buf);
  cache.emplace(key, p);
  return p;
}

fftw_plan plan_2d(int rows, int cols, int sign) {
  static std::map<std::tuple<int, int, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(planner_mutex);
  auto key = std::make_tuple(rows, cols, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  fftw_complex* buf = fftw_alloc_complex(static_cast<size_t>(rows) * cols);
  fftw_plan p = fftw_plan_dft_2d(rows, cols, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(buf);
  cache.emplace(key, p);
  return p;
}

}  // namespace

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in, int sign) {
  std::vector<std::complex<double>> out(in);
  if (in.empty()) return out;
  fftw_plan p = plan_1d(static_cast<int>(in.size()), sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(out.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& in,
                                       int rows, int cols, int sign) {
  std::vector<std::complex<double>> out(in);
  if (in.empty()) return out;
  fftw_plan p = plan_2d(rows, cols, sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(out.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

}  // namespace vsep
