#include "semmod/serialize.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "semmod/errors.hpp"

namespace semmod {

namespace {

constexpr char kMagic[4] = {'F', 'F', 'C', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  std::istream& in;
  std::size_t offset = 0;

  void raw(char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw ParseError(std::string("container truncated while reading ") + what, offset);
    offset += n;
  }
  std::uint64_t u64(const char* what) {
    char b[8];
    raw(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

}  // namespace

void write_container(std::ostream& out, const std::vector<NamedArray>& entries) {
  out.write(kMagic, 4);
  put_u64(out, entries.size());
  for (const NamedArray& e : entries) {
    put_u64(out, e.name.size());
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u64(out, static_cast<std::uint64_t>(e.value.shape.rank));
    put_u64(out, e.value.shape.d0);
    if (e.value.shape.rank == 2) put_u64(out, e.value.shape.d1);
    for (double v : e.value.data) put_f64(out, v);
  }
}

std::vector<NamedArray> read_container(std::istream& in) {
  Reader r{in};
  char magic[4];
  r.raw(magic, 4, "magic");
  if (magic[0] != 'F' || magic[1] != 'F' || magic[2] != 'C' || magic[3] != '1')
    throw ParseError("bad container magic", 0);
  const std::uint64_t count = r.u64("entry count");
  std::vector<NamedArray> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = r.u64("name length");
    if (name_len > (1 << 20)) throw ParseError("unreasonable name length", r.offset - 8);
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len, "name");
    const std::uint64_t rank = r.u64("rank");
    if (rank != 1 && rank != 2) throw ParseError("rank must be 1 or 2", r.offset - 8);
    Shape shape;
    shape.rank = static_cast<int>(rank);
    shape.d0 = r.u64("extent 0");
    shape.d1 = rank == 2 ? r.u64("extent 1") : 1;
    if (shape.size() > (1ULL << 32)) throw ParseError("unreasonable extents", r.offset - 8);
    std::vector<double> data(shape.size());
    for (double& v : data) v = r.f64("payload");
    entries.push_back(NamedArray{std::move(name), Array{shape, std::move(data)}});
  }
  return entries;
}

void write_container_file(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  write_container(out, entries);
  if (!out) throw NumericError("write failed: " + path.string());
}

std::vector<NamedArray> read_container_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  return read_container(in);
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace semmod
