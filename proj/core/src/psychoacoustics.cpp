#include "earcan/psychoacoustics.hpp"

#include <cmath>
#include <string>

#include "earcan/error.hpp"

namespace earcan {

double threshold_in_quiet_spl(double freq_hz) {
  if (freq_hz < 20.0 || freq_hz > 8000.0)
    fail(Errc::domain, "threshold_in_quiet: frequency " + std::to_string(freq_hz) +
                           " Hz outside [20, 8000]");
  const double f = freq_hz / 1000.0;
  return 3.64 * std::pow(f, -0.8) - 6.5 * std::exp(-0.6 * (f - 3.3) * (f - 3.3)) +
         1e-3 * f * f * f * f;
}

double threshold_in_quiet_dbfs(double freq_hz) {
  return threshold_in_quiet_spl(freq_hz) - kSplAtFullScaleDb;
}

}  // namespace earcan
