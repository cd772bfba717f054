#include "mutdet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "mutdet/errors.hpp"

namespace mutdet::ckpt {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("truncated checkpoint: " + path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save(const std::string& path, const cfg::RunConfig& rc, const nn::ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << kMagic << "\n";
  const std::string cfg_text = cfg::serialize_config(rc);
  write_u32(out, std::uint32_t(cfg_text.size()));
  out.write(cfg_text.data(), std::streamsize(cfg_text.size()));
  write_u32(out, std::uint32_t(store.names().size()));
  for (const std::string& name : store.names()) {
    const nn::Mat& v = store.value(name);
    write_u32(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_u32(out, std::uint32_t(v.rows()));
    write_u32(out, std::uint32_t(v.cols()));
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(std::size_t(v.size()) * sizeof(double)));
  }
  if (!out) throw DataError("short write: " + path);
}

Loaded load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw DataError("bad checkpoint magic in " + path);

  const std::uint32_t cfg_len = read_u32(in, path);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), std::streamsize(cfg_len));
  if (!in) throw DataError("truncated checkpoint config: " + path);

  Loaded loaded;
  loaded.config = cfg::parse_config_text(cfg_text);

  const std::uint32_t n_tensors = read_u32(in, path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), std::streamsize(name_len));
    const std::uint32_t rows = read_u32(in, path);
    const std::uint32_t cols = read_u32(in, path);
    if (!in) throw DataError("truncated checkpoint tensor header: " + path);
    nn::Mat v(rows, cols);
    in.read(reinterpret_cast<char*>(v.data()),
            std::streamsize(std::size_t(v.size()) * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint tensor data: " + path);
    loaded.store.create(name, v);
  }
  return loaded;
}

}  // namespace mutdet::ckpt
