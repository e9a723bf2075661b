#pragma once

#include <stdexcept>
#include <string>

#include "bufd/tensor.hpp"

namespace bufd {

struct IoError : std::runtime_error {
  enum class Kind {
    bad_magic,
    bad_header,
    unsupported_maxval,
    truncated,
    version_mismatch,
    bad_layout,  // manifest offsets/shapes that do not fit the payload
  };
  Kind kind;
  IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

/// Whole-file read; throws IoError(truncated) when the file cannot be read.
std::string read_file(const std::string& path);

/// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::string& path, const std::string& bytes);

/// Binary netpbm, maxval 255 only. Grayscale P5 loads as {1,1,H,W}, color
/// P6 as {1,3,H,W}, values mapped to v/255.
Tensor<float> read_image(const std::string& path);

/// round(v*255) clamped to [0,255]. One-channel tensors write P5, three-
/// channel write P6. An optional comment lands after the magic line.
void write_image(const std::string& path, const Tensor<float>& img,
                 const std::string& comment = "");

}  // namespace bufd
