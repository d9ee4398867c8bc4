#include "bcsi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bcsi/volume.hpp"

namespace bcsi {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("checkpoint: truncated in " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint16_t get_u16(std::istream& is, const std::string& path) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw FormatError("checkpoint: truncated in " + path);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

static_assert(sizeof(double) == 8, "format assumes 64-bit doubles");

}  // namespace

void CheckpointData::add(const std::string& name, Tensor t) {
  if (contains(name)) throw FormatError("checkpoint: duplicate tensor \"" + name + "\"");
  if (name.empty() || name.size() > 0xFFFF) throw FormatError("checkpoint: bad tensor name");
  tensors.emplace_back(name, std::move(t));
}

const Tensor& CheckpointData::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint: missing tensor \"" + name + "\"");
}

bool CheckpointData::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_checkpoint: cannot open " + path);
  os.write("BCK1", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(os, static_cast<uint32_t>(d));
    // little-endian assumed for the payload, as for volume files
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw FormatError("write_checkpoint: write failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BCK1", 4) != 0)
    throw FormatError("read_checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is, path);
  if (version != 1) throw FormatError("read_checkpoint: unknown version in " + path);
  const uint32_t count = get_u32(is, path);

  CheckpointData data;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("checkpoint: truncated in " + path);
    const int rank = is.get();
    if (rank == EOF || rank > 8) throw FormatError("checkpoint: bad rank in " + path);
    Shape shape(static_cast<size_t>(rank));
    int64_t numel = 1;
    for (int& d : shape) {
      d = static_cast<int>(get_u32(is, path));
      if (d < 1) throw FormatError("checkpoint: bad dim in " + path);
      numel *= d;
    }
    std::vector<double> payload(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (static_cast<size_t>(is.gcount()) != payload.size() * sizeof(double))
      throw FormatError("checkpoint: truncated payload in " + path);
    data.add(name, Tensor::from_vector(std::move(shape), std::move(payload)));
  }
  if (is.get() != EOF) throw FormatError("read_checkpoint: trailing bytes in " + path);
  return data;
}

double u64_as_f64(uint64_t v) { return std::bit_cast<double>(v); }
uint64_t f64_as_u64(double v) { return std::bit_cast<uint64_t>(v); }

}  // namespace bcsi
