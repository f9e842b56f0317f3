#pragma once

#include <string>

#include "s3pet/image.hpp"

namespace s3pet {

// PVOL container: "PVOL1\n", "dims=<D> <H> <W> <C>\n", "dtype=f32le\n",
// one empty line, then D*H*W*C IEEE-754 little-endian 32-bit floats in
// row-major (depth slowest) order.

void write_volume(const std::string& path, const ImageVolume& vol);
ImageVolume read_volume(const std::string& path);

}  // namespace s3pet
