#pragma once
#include <string>

#include "dpu/tensor.hpp"

namespace dpu {

// 8-bit grayscale image I/O. Pixels map linearly between [0,255] bytes and
// [0,1] doubles; color PNGs are converted to luma on read. Format is picked
// by file extension (.png, .pgm); anything else is an IoError.
TensorD read_image(const std::string& path);
void write_image(const std::string& path, const TensorD& img);

TensorD read_pgm(const std::string& path);
void write_pgm(const std::string& path, const TensorD& img);
TensorD read_png(const std::string& path);
void write_png(const std::string& path, const TensorD& img);

}  // namespace dpu
