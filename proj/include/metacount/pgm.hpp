#pragma once

#include <string>

#include "metacount/tensor.hpp"

namespace metacount::pgm {

class PgmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads a binary (P5) or plain (P2) portable graymap, 8 or 16 bit, and
// rescales samples to [0,1]. Returns an [H,W] tensor.
Tensor read(const std::string& path);

// Writes a P5 graymap with the given maxval (255 or 65535). Values are
// clipped to [0,1] and rounded to the nearest level.
void write(const std::string& path, const Tensor& image, unsigned maxval = 65535);

}  // namespace metacount::pgm
