#include "t3d/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "t3d/errors.hpp"

namespace t3d {

namespace {

constexpr std::array<char, 8> kMagic{'T', '3', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CorruptRecordError("checkpoint truncated");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const DenoiserParams& params) {
  const auto& c = params.config;
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  for (std::int64_t v : {c.vocab_size, c.mask_id, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len,
                         c.block_size}) {
    put<std::int64_t>(os, v);
  }
  auto named = params.named();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(os, d);
    auto v = t->values();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw Error("checkpoint write failed");
}

DenoiserParams read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw CorruptRecordError("not a checkpoint file");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CorruptRecordError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.vocab_size = get<std::int64_t>(is);
  c.mask_id = get<std::int64_t>(is);
  c.d_model = get<std::int64_t>(is);
  c.n_layers = get<std::int64_t>(is);
  c.n_heads = get<std::int64_t>(is);
  c.d_ff = get<std::int64_t>(is);
  c.max_len = get<std::int64_t>(is);
  c.block_size = get<std::int64_t>(is);
  c.validate();

  // Shapes come from a fresh init; the file must agree with them.
  DenoiserParams p = init_params(c, 0);
  auto named = p.named();
  const auto count = get<std::uint32_t>(is);
  if (count != named.size()) throw CorruptRecordError("checkpoint tensor count does not match config");
  for (auto& [name, t] : named) {
    const auto len = get<std::uint32_t>(is);
    std::string got(len, '\0');
    if (!is.read(got.data(), len)) throw CorruptRecordError("checkpoint truncated");
    if (got != name) throw CorruptRecordError("expected tensor '" + name + "', found '" + got + "'");
    const auto rank = get<std::uint32_t>(is);
    numcore::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    if (shape != t->shape()) throw CorruptRecordError("shape mismatch for tensor '" + name + "'");
    auto v = t->mutable_values();
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw CorruptRecordError("checkpoint truncated");
    }
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

DenoiserParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace t3d
