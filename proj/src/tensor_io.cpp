#include "fusedet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fusedet {

static_assert(std::endian::native == std::endian::little,
              "FFTN writer assumes a little-endian host");

namespace {
constexpr unsigned char kMagic[4] = {0x46, 0x46, 0x54, 0x4e};  // "FFTN"
constexpr unsigned char kVersion = 0x01;
constexpr unsigned char kDtypeF32 = 0x00;
}  // namespace

void write_fftn(std::ostream& out, const Tensor& t) {
  if (t.rank() > 4) throw TensorError("FFTN supports rank <= 4");
  out.write(reinterpret_cast<const char*>(kMagic), 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(kDtypeF32));
  out.put(static_cast<char>(t.rank()));
  for (int d : t.shape) {
    const std::uint32_t e = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&e), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw TensorError("FFTN write failed");
}

Tensor read_fftn(std::istream& in) {
  unsigned char header[7];
  in.read(reinterpret_cast<char*>(header), 7);
  if (!in || std::memcmp(header, kMagic, 4) != 0) throw TensorError("FFTN: bad magic");
  if (header[4] != kVersion) throw TensorError("FFTN: unsupported version");
  if (header[5] != kDtypeF32) throw TensorError("FFTN: unsupported dtype");
  const int rank = header[6];
  if (rank > 4) throw TensorError("FFTN: rank > 4");

  std::vector<int> shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    std::uint32_t e = 0;
    in.read(reinterpret_cast<char*>(&e), 4);
    shape[static_cast<std::size_t>(i)] = static_cast<int>(e);
  }
  if (!in) throw TensorError("FFTN: truncated header");

  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!in) throw TensorError("FFTN: truncated payload");
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for write: " + path);
  write_fftn(f, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for read: " + path);
  return read_fftn(f);
}

}  // namespace fusedet
