#include "tenext/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tenext {

namespace {

constexpr char kMagic[8] = {'T', 'N', 'X', 'C', 'K', 'P', 'T', '1'};
constexpr uint8_t kVersion = 1;

// All integers are serialized little-endian regardless of host order.
template <typename T>
void put(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint: truncated file '" + path + "'");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  std::string get_bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<uint8_t>(out, kVersion);

  const std::string meta = ckpt.meta.serialize();
  put<uint32_t>(out, static_cast<uint32_t>(meta.size()));
  out += meta;

  put<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff)
      throw std::invalid_argument("checkpoint: tensor name too long: '" + name + "'");
    put<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    put<uint8_t>(out, static_cast<uint8_t>(t.shape.size()));
    for (int d : t.shape) put<int32_t>(out, d);
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
    put<uint64_t>(out, bytes);
    const size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, t.data.data(), bytes);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf, 0, path};
  r.need(sizeof(kMagic));
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  r.pos = sizeof(kMagic);
  const uint8_t version = r.get<uint8_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in '" + path + "'");

  Checkpoint ckpt;
  const uint32_t meta_len = r.get<uint32_t>();
  ckpt.meta = KvConfig::parse_text(r.get_bytes(meta_len), path);

  const uint32_t n_tensors = r.get<uint32_t>();
  ckpt.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint16_t name_len = r.get<uint16_t>();
    std::string name = r.get_bytes(name_len);
    const uint8_t ndim = r.get<uint8_t>();
    std::vector<int> shape(ndim);
    for (uint8_t d = 0; d < ndim; ++d) shape[d] = r.get<int32_t>();
    const uint64_t bytes = r.get<uint64_t>();
    if (bytes != static_cast<uint64_t>(Tensor<float>::count(shape)) * sizeof(float))
      throw std::runtime_error("checkpoint: tensor '" + name +
                               "' byte length disagrees with its shape in '" + path + "'");
    r.need(bytes);
    Tensor<float> t(shape);
    std::memcpy(t.data.data(), buf.data() + r.pos, bytes);
    r.pos += bytes;
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != buf.size())
    throw std::runtime_error("checkpoint: trailing bytes in '" + path + "'");
  return ckpt;
}

}  // namespace tenext
