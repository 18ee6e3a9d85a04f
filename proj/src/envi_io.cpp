#include "hsfruit/envi_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace hsf {
namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorCode::kMissingHeaderKey, "ENVI header is missing required key '" + key + "'");
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (trim(it->second.substr(pos)).size() != 0) throw std::invalid_argument(key);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    fail(ErrorCode::kFormat, "ENVI header key '" + key + "' is not an integer: " + it->second);
  }
}

std::size_t element_size(EnviDataType t) {
  switch (t) {
    case EnviDataType::kUint8: return 1;
    case EnviDataType::kInt16:
    case EnviDataType::kUint16: return 2;
    case EnviDataType::kFloat32: return 4;
    case EnviDataType::kFloat64: return 8;
  }
  return 0;
}

const char* interleave_name(Interleave il) {
  switch (il) {
    case Interleave::kBsq: return "bsq";
    case Interleave::kBil: return "bil";
    case Interleave::kBip: return "bip";
  }
  return "bsq";
}

// Offset (in elements) of sample (y, x, b) within a payload of the given interleave.
std::size_t file_offset(Interleave il, int h, int w, int nb, int y, int x, int b) {
  (void)h;
  switch (il) {
    case Interleave::kBsq: return (static_cast<std::size_t>(b) * h + y) * w + x;
    case Interleave::kBil: return (static_cast<std::size_t>(y) * nb + b) * w + x;
    case Interleave::kBip: return (static_cast<std::size_t>(y) * w + x) * nb + b;
  }
  return 0;
}

template <typename T>
T read_scalar(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    std::reverse(tmp, tmp + sizeof(T));
    std::memcpy(&v, tmp, sizeof(T));
  }
  return v;
}

double decode(EnviDataType t, const unsigned char* p, bool swap) {
  switch (t) {
    case EnviDataType::kUint8: return *p;
    case EnviDataType::kInt16: return read_scalar<std::int16_t>(p, swap);
    case EnviDataType::kUint16: return read_scalar<std::uint16_t>(p, swap);
    case EnviDataType::kFloat32: return read_scalar<float>(p, swap);
    case EnviDataType::kFloat64: return read_scalar<double>(p, swap);
  }
  return 0.0;
}

struct Decoded {
  EnviHeader header;
  std::vector<float> data;  // band-last
};

Decoded read_envi(const fs::path& path) {
  auto [hdr_path, bin_path] = envi_pair(path);
  std::ifstream hin(hdr_path);
  if (!hin) fail(ErrorCode::kIo, "cannot open ENVI header " + hdr_path.string());
  std::stringstream ss;
  ss << hin.rdbuf();
  Decoded out{parse_envi_header(ss.str()), {}};
  const EnviHeader& h = out.header;

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) fail(ErrorCode::kIo, "cannot open ENVI payload " + bin_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t count = static_cast<std::size_t>(h.samples) * h.lines * h.bands;
  const std::size_t expected = h.header_offset + count * element_size(h.data_type);
  if (bytes.size() != expected) {
    fail(ErrorCode::kPayloadSize, "ENVI payload " + bin_path.string() + " has " + std::to_string(bytes.size()) +
                                      " bytes, header implies " + std::to_string(expected));
  }
  const bool swap = (h.byte_order == 1) != (std::endian::native == std::endian::big);
  const std::size_t es = element_size(h.data_type);
  const unsigned char* base = bytes.data() + h.header_offset;
  out.data.resize(count);
  for (int y = 0; y < h.lines; ++y) {
    for (int x = 0; x < h.samples; ++x) {
      for (int b = 0; b < h.bands; ++b) {
        const std::size_t src = file_offset(h.interleave, h.lines, h.samples, h.bands, y, x, b);
        out.data[(static_cast<std::size_t>(y) * h.samples + x) * h.bands + b] =
            static_cast<float>(decode(h.data_type, base + src * es, swap));
      }
    }
  }
  return out;
}

WavelengthAxis axis_for(const EnviHeader& h) {
  if (h.wavelengths.empty()) {
    std::vector<double> idx(static_cast<std::size_t>(h.bands));
    for (int b = 0; b < h.bands; ++b) idx[b] = b;
    return WavelengthAxis(std::move(idx));
  }
  return WavelengthAxis(h.wavelengths);
}

template <typename Emit>
void write_envi(const Volume& v, const fs::path& path, EnviHeader header, Emit emit_element) {
  header.samples = v.width();
  header.lines = v.height();
  header.bands = v.bands();
  header.wavelengths = v.axis().values();
  fs::path stem = path;
  if (stem.extension() == ".hdr" || stem.extension() == ".bin") stem.replace_extension();
  fs::path hdr = stem;
  hdr += ".hdr";
  fs::path bin = stem;
  bin += ".bin";
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  {
    std::ofstream out(hdr);
    if (!out) fail(ErrorCode::kIo, "cannot write " + hdr.string());
    out << format_envi_header(header);
  }
  std::ofstream out(bin, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + bin.string());
  const std::size_t count = v.data().size();
  const std::size_t es = element_size(header.data_type);
  std::vector<unsigned char> bytes(count * es);
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      for (int b = 0; b < v.bands(); ++b) {
        const std::size_t dst = file_offset(header.interleave, v.height(), v.width(), v.bands(), y, x, b);
        emit_element(v.at(y, x, b), bytes.data() + dst * es);
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void store_le(T value, unsigned char* p) {
  std::memcpy(p, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(p, p + sizeof(T));
}

}  // namespace

EnviHeader parse_envi_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (first) {
      first = false;
      if (line == "ENVI") continue;
    }
    if (line.empty() || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = lower(trim(line.substr(0, eq)));
    std::string value = trim(line.substr(eq + 1));
    if (!value.empty() && value.front() == '{') {
      while (value.find('}') == std::string::npos) {
        std::string more;
        if (!std::getline(in, more)) fail(ErrorCode::kFormat, "unterminated '{' for ENVI key '" + key + "'");
        value += " " + trim(more);
      }
      value = trim(value.substr(1, value.find('}') - 1));
    }
    kv[key] = value;
  }

  EnviHeader h;
  h.samples = parse_int(kv, "samples");
  h.lines = parse_int(kv, "lines");
  h.bands = parse_int(kv, "bands");
  const int dt = parse_int(kv, "data type");
  switch (dt) {
    case 1: case 2: case 4: case 5: case 12: h.data_type = static_cast<EnviDataType>(dt); break;
    default: fail(ErrorCode::kFormat, "unsupported ENVI data type " + std::to_string(dt));
  }
  auto il = kv.find("interleave");
  if (il == kv.end()) fail(ErrorCode::kMissingHeaderKey, "ENVI header is missing required key 'interleave'");
  const std::string ilv = lower(il->second);
  if (ilv == "bsq") h.interleave = Interleave::kBsq;
  else if (ilv == "bil") h.interleave = Interleave::kBil;
  else if (ilv == "bip") h.interleave = Interleave::kBip;
  else fail(ErrorCode::kUnknownInterleave, "unknown ENVI interleave '" + il->second + "'");
  if (kv.count("byte order")) h.byte_order = parse_int(kv, "byte order");
  if (kv.count("header offset")) h.header_offset = static_cast<std::size_t>(parse_int(kv, "header offset"));
  require(h.samples >= 0 && h.lines >= 0 && h.bands >= 1, ErrorCode::kFormat, "ENVI header has invalid dimensions");

  auto wl = kv.find("wavelength");
  if (wl == kv.end()) fail(ErrorCode::kMissingHeaderKey, "ENVI header is missing required key 'wavelength'");
  std::stringstream ws(wl->second);
  std::string tok;
  while (std::getline(ws, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      h.wavelengths.push_back(std::stod(tok));
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, "ENVI wavelength entry is not a number: " + tok);
    }
  }
  if (static_cast<int>(h.wavelengths.size()) != h.bands) {
    fail(ErrorCode::kFormat, "ENVI header declares bands = " + std::to_string(h.bands) + " but lists " +
                                 std::to_string(h.wavelengths.size()) + " wavelengths");
  }
  if (auto k = kv.find("hsf kind"); k != kv.end()) h.kind = lower(k->second);
  for (const auto& [k, v] : kv) {
    static const char* known[] = {"samples", "lines", "bands", "data type", "interleave", "byte order",
                                  "header offset", "wavelength", "hsf kind"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known)) {
      h.extra[k] = v;
    }
  }
  return h;
}

std::string format_envi_header(const EnviHeader& h) {
  std::ostringstream os;
  os << "ENVI\n";
  os << "samples = " << h.samples << "\n";
  os << "lines = " << h.lines << "\n";
  os << "bands = " << h.bands << "\n";
  os << "header offset = " << h.header_offset << "\n";
  os << "file type = ENVI Standard\n";
  os << "data type = " << static_cast<int>(h.data_type) << "\n";
  os << "interleave = " << interleave_name(h.interleave) << "\n";
  os << "byte order = " << h.byte_order << "\n";
  if (!h.kind.empty()) os << "hsf kind = " << h.kind << "\n";
  os << "wavelength units = Nanometers\n";
  os << "wavelength = {";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < h.wavelengths.size(); ++i) {
    if (i) os << ", ";
    os << h.wavelengths[i];
  }
  os << "}\n";
  return os.str();
}

std::pair<fs::path, fs::path> envi_pair(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".hdr" || stem.extension() == ".bin" || stem.extension() == ".raw" ||
      stem.extension() == ".img" || stem.extension() == ".dat") {
    stem.replace_extension();
  }
  fs::path hdr = stem;
  hdr += ".hdr";
  if (path.extension() != ".hdr" && fs::exists(path) && !fs::is_directory(path)) {
    return {hdr, path};
  }
  for (const char* ext : {".bin", ".raw", ".img", ".dat", ""}) {
    fs::path bin = stem;
    bin += ext;
    if (fs::exists(bin) && !fs::is_directory(bin) && bin != hdr) return {hdr, bin};
  }
  fs::path bin = stem;
  bin += ".bin";
  return {hdr, bin};
}

LoadedVolume load_cube(const fs::path& path) {
  Decoded d = read_envi(path);
  const EnviHeader& h = d.header;
  WavelengthAxis axis = axis_for(h);
  bool raw = h.data_type == EnviDataType::kUint8 || h.data_type == EnviDataType::kUint16 ||
             h.data_type == EnviDataType::kInt16;
  if (h.kind == "raw") raw = true;
  if (h.kind == "reflectance") raw = false;
  if (raw) return RawFrame(h.lines, h.samples, std::move(axis), std::move(d.data));
  return HyperCube(h.lines, h.samples, std::move(axis), std::move(d.data));
}

HyperCube load_hypercube(const fs::path& path) {
  LoadedVolume v = load_cube(path);
  if (auto* c = std::get_if<HyperCube>(&v)) return std::move(*c);
  fail(ErrorCode::kFormat, path.string() + " holds raw counts, expected calibrated reflectance");
}

RawFrame load_raw_frame(const fs::path& path) {
  LoadedVolume v = load_cube(path);
  if (auto* r = std::get_if<RawFrame>(&v)) return std::move(*r);
  // Float payloads without a kind tag are accepted as raw when non-negative.
  const HyperCube& c = std::get<HyperCube>(v);
  std::vector<float> data(c.data().begin(), c.data().end());
  return RawFrame(c.height(), c.width(), c.axis(), std::move(data));
}

void save_cube(const HyperCube& cube, const fs::path& path, Interleave interleave) {
  EnviHeader h;
  h.data_type = EnviDataType::kFloat32;
  h.interleave = interleave;
  h.kind = "reflectance";
  write_envi(cube, path, h, [](float v, unsigned char* p) { store_le<float>(v, p); });
}

void save_raw_frame(const RawFrame& frame, const fs::path& path, Interleave interleave) {
  bool integral = true;
  for (float v : frame.data()) {
    if (v < 0.0f || v > 65535.0f || std::floor(v) != v) {
      integral = false;
      break;
    }
  }
  EnviHeader h;
  h.interleave = interleave;
  h.kind = "raw";
  if (integral) {
    h.data_type = EnviDataType::kUint16;
    write_envi(frame, path, h, [](float v, unsigned char* p) { store_le<std::uint16_t>(static_cast<std::uint16_t>(v), p); });
  } else {
    h.data_type = EnviDataType::kFloat32;
    write_envi(frame, path, h, [](float v, unsigned char* p) { store_le<float>(v, p); });
  }
}

}  // namespace hsf
