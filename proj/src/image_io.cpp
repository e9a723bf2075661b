#include "bufd/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bufd {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Kind::truncated, "cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed: " + tmp + " -> " + path);
}

namespace {

/// Skip whitespace and '#' comments (netpbm header grammar).
void skip_separators(const std::string& s, std::size_t& at) {
  while (at < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[at]))) {
      ++at;
    } else if (s[at] == '#') {
      while (at < s.size() && s[at] != '\n') ++at;
    } else {
      break;
    }
  }
}

long parse_int(const std::string& s, std::size_t& at, const char* what) {
  skip_separators(s, at);
  std::size_t start = at;
  while (at < s.size() && std::isdigit(static_cast<unsigned char>(s[at])))
    ++at;
  if (at == start)
    throw IoError(IoError::Kind::bad_header,
                  std::string("netpbm: missing ") + what);
  return std::stol(s.substr(start, at - start));
}

}  // namespace

Tensor<float> read_image(const std::string& path) {
  const std::string s = read_file(path);
  if (s.size() < 2 || s[0] != 'P' || (s[1] != '5' && s[1] != '6'))
    throw IoError(IoError::Kind::bad_magic,
                  "netpbm: expected P5 or P6 magic in " + path);
  const int channels = s[1] == '5' ? 1 : 3;
  std::size_t at = 2;
  const long w = parse_int(s, at, "width");
  const long h = parse_int(s, at, "height");
  const long maxval = parse_int(s, at, "maxval");
  if (maxval != 255)
    throw IoError(IoError::Kind::unsupported_maxval,
                  "netpbm: unsupported maxval " + std::to_string(maxval) +
                      " (only 255)");
  if (w <= 0 || h <= 0)
    throw IoError(IoError::Kind::bad_header, "netpbm: bad dimensions");
  if (at >= s.size() || !std::isspace(static_cast<unsigned char>(s[at])))
    throw IoError(IoError::Kind::bad_header,
                  "netpbm: missing separator before payload");
  ++at;  // exactly one whitespace byte before the raster

  const std::size_t need =
      static_cast<std::size_t>(w) * static_cast<std::size_t>(h) *
      static_cast<std::size_t>(channels);
  if (s.size() - at < need)
    throw IoError(IoError::Kind::truncated,
                  "netpbm: payload has " + std::to_string(s.size() - at) +
                      " bytes, need " + std::to_string(need));

  Tensor<float> img({1, channels, h, w});
  const auto* bytes = reinterpret_cast<const unsigned char*>(s.data() + at);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  if (channels == 1) {
    for (std::int64_t i = 0; i < hw; ++i)
      img[i] = static_cast<float>(bytes[i]) / 255.0f;
  } else {
    for (std::int64_t i = 0; i < hw; ++i)
      for (int c = 0; c < 3; ++c)
        img[c * hw + i] = static_cast<float>(bytes[i * 3 + c]) / 255.0f;
  }
  return img;
}

void write_image(const std::string& path, const Tensor<float>& img,
                 const std::string& comment) {
  if (img.rank() != 4 || img.dim(0) != 1 ||
      (img.dim(1) != 1 && img.dim(1) != 3))
    throw std::invalid_argument("write_image: expected {1,1|3,H,W}, got " +
                                shape_str(img.shape()));
  const std::int64_t c = img.dim(1), h = img.dim(2), w = img.dim(3);
  std::string out;
  out += c == 1 ? "P5\n" : "P6\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(w) + " " + std::to_string(h) + "\n255\n";

  const std::int64_t hw = h * w;
  std::string raster(static_cast<std::size_t>(hw * c), '\0');
  auto quantize = [](float v) {
    const long q = std::lround(static_cast<double>(v) * 255.0);
    return static_cast<char>(std::min(255L, std::max(0L, q)));
  };
  if (c == 1) {
    for (std::int64_t i = 0; i < hw; ++i)
      raster[static_cast<std::size_t>(i)] = quantize(img[i]);
  } else {
    for (std::int64_t i = 0; i < hw; ++i)
      for (int ch = 0; ch < 3; ++ch)
        raster[static_cast<std::size_t>(i * 3 + ch)] =
            quantize(img[ch * hw + i]);
  }
  out += raster;
  atomic_write(path, out);
}

}  // namespace bufd
