#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "fusedet/tensor.hpp"

namespace fusedet {

/// FFTN binary tensor format:
///   magic 'F' 'F' 'T' 'N', version 0x01, dtype 0x00 (float32), rank byte,
///   rank little-endian uint32 extents, row-major little-endian payload.
/// Round-trips are bit-exact.
void write_fftn(std::ostream& out, const Tensor& t);
Tensor read_fftn(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace fusedet
