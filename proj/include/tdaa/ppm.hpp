#pragma once

#include <string>

#include "tdaa/tensor.hpp"

namespace tdaa {

// Binary PPM (P6, maxval 255). The only image codec this project needs.
void write_ppm(const Tensor& image, const std::string& path);  // image [3,H,W] in [0,1]
Tensor read_ppm(const std::string& path);                      // -> [3,H,W] in [0,1]

}  // namespace tdaa
