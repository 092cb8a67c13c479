#pragma once

#include <cmath>
#include <cstddef>

namespace cfnsg {

// Front-to-back alpha compositing of piecewise-constant emission/extinction
// segments. rgb is packed as 3 doubles per sample. Writes the pixel color
// into out[0..2] and returns the final transmittance T after the last
// sample (useful for blending in a background).
inline double composite_raw(const double* rgb, const double* sigma,
                            const double* delta, std::size_t n, double* out) {
  out[0] = out[1] = out[2] = 0.0;
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double att = std::exp(-sigma[i] * delta[i]);
    const double weight = transmittance * (1.0 - att);
    out[0] += weight * rgb[3 * i + 0];
    out[1] += weight * rgb[3 * i + 1];
    out[2] += weight * rgb[3 * i + 2];
    transmittance *= att;
  }
  return transmittance;
}

}  // namespace cfnsg
