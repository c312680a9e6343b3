#include "trajclust/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "trajclust/common.hpp"

namespace trajclust::nn {

namespace {

constexpr char kMagic[4] = {'T', 'J', 'C', 'K'};

template <class T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint truncated while reading " + what);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, value] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape()) put<std::uint64_t>(out, d);
    for (double x : value.data()) put<double>(out, x);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + ": not a TJCK checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

  std::vector<NamedTensor> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::string where = "record " + std::to_string(out.size());
    const auto name_len = get<std::uint32_t>(in, where + " name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint truncated in " + where + " name");
    const auto rank = get<std::uint32_t>(in, where + " rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, where + " shape"));
    std::vector<double> data(shape_size(shape));
    for (auto& x : data) x = get<double>(in, where + " data");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

}  // namespace trajclust::nn
