#pragma once

#include <array>

namespace hsf::cie {

struct CmfSample {
  double nm;
  double x_bar;
  double y_bar;
  double z_bar;
};

inline constexpr int kCmfCount = 73;
inline constexpr double kVisibleLowNm = 380.0;
inline constexpr double kVisibleHighNm = 740.0;
inline constexpr const char* kCmfTableVersion = "cie1931-2deg-5nm-v1";

const std::array<CmfSample, kCmfCount>& cmf_table();

/// Linear interpolation of the colour-matching functions; zero outside 380-740 nm.
CmfSample cmf_at(double nm);

// D65 reference white and the XYZ -> linear sRGB matrix (IEC 61966-2-1).
inline constexpr std::array<double, 3> kD65White{0.95047, 1.0, 1.08883};
inline constexpr double kXyzToSrgb[3][3] = {
    {3.2406, -1.5372, -0.4986},
    {-0.9689, 1.8758, 0.0415},
    {0.0557, -0.2040, 1.0570},
};

}  // namespace hsf::cie
