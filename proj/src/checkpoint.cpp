#include "bev/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "bev/error.hpp"

namespace bev {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'B', 'E', 'V', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::Io, "truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
      const std::uint64_t count =
          std::accumulate(a.dims.begin(), a.dims.end(), std::uint64_t{1}, std::multiplies<>());
      if (count != a.data.size()) throw Error(ErrorKind::Shape, "array '" + a.name + "' does not match its dims");
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.dtype));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.dims.size()));
      for (auto d : a.dims) put<std::uint64_t>(os, d);
      if (a.dtype == DType::F32) {
        for (double v : a.data) put<float>(os, static_cast<float>(v));
      } else {
        os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * 8));
      }
    }
    if (!os.flush()) throw Error(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw Error(ErrorKind::Io, path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Io, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<NamedArray> arrays(count);
  for (auto& a : arrays) {
    a.name.resize(get<std::uint32_t>(is, path));
    if (!is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()))) {
      throw Error(ErrorKind::Io, "truncated checkpoint " + path.string());
    }
    const auto dtype = get<std::uint32_t>(is, path);
    if (dtype > 1) throw Error(ErrorKind::Io, "unknown dtype in array '" + a.name + "'");
    a.dtype = static_cast<DType>(dtype);
    a.dims.resize(get<std::uint32_t>(is, path));
    std::uint64_t n = 1;
    for (auto& d : a.dims) n *= (d = get<std::uint64_t>(is, path));
    a.data.resize(n);
    for (auto& v : a.data) v = a.dtype == DType::F32 ? get<float>(is, path) : get<double>(is, path);
  }
  return arrays;
}

}  // namespace bev
