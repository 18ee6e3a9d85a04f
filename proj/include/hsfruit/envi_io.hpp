#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "hsfruit/spectral.hpp"

namespace hsf {

enum class Interleave { kBsq, kBil, kBip };

/// ENVI "data type" codes supported by the reader.
enum class EnviDataType : int {
  kUint8 = 1,
  kInt16 = 2,
  kFloat32 = 4,
  kFloat64 = 5,
  kUint16 = 12,
};

struct EnviHeader {
  int samples = 0;  // width
  int lines = 0;    // height
  int bands = 0;
  EnviDataType data_type = EnviDataType::kFloat32;
  Interleave interleave = Interleave::kBsq;
  int byte_order = 0;
  std::size_t header_offset = 0;
  std::vector<double> wavelengths;
  /// "reflectance" or "raw"; absent in third-party files, then inferred from the data type.
  std::string kind;
  std::map<std::string, std::string> extra;
};

/// Parses the text of an ENVI header. Throws kMissingHeaderKey, kUnknownInterleave or kFormat.
EnviHeader parse_envi_header(const std::string& text);
std::string format_envi_header(const EnviHeader& header);

/// Given either the .hdr path or the payload path, returns {header, payload} paths.
std::pair<std::filesystem::path, std::filesystem::path> envi_pair(const std::filesystem::path& path);

using LoadedVolume = std::variant<HyperCube, RawFrame>;

/// Loads an ENVI header/payload pair. Integer payloads and `kind = raw` load as RawFrame,
/// float payloads as HyperCube. Any interleave is converted to band-last in memory.
LoadedVolume load_cube(const std::filesystem::path& path);
HyperCube load_hypercube(const std::filesystem::path& path);
RawFrame load_raw_frame(const std::filesystem::path& path);

/// Writes `<stem>.hdr` + `<stem>.bin`. Reflectance is stored as little-endian float32.
void save_cube(const HyperCube& cube, const std::filesystem::path& path, Interleave interleave = Interleave::kBsq);

/// Raw frames are stored as little-endian uint16 unless a value is not an integer count in
/// [0, 65535], in which case float32 is used (averaged references are fractional).
void save_raw_frame(const RawFrame& frame, const std::filesystem::path& path,
                    Interleave interleave = Interleave::kBsq);

}  // namespace hsf
