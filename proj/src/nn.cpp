#include "cmwm/nn.hpp"

#include <cstring>

namespace cmwm {

namespace {

template <typename T>
void put(std::vector<uint8_t>& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  size_t off = buf.size();
  buf.resize(off + sizeof(T));
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T take(const std::vector<uint8_t>& buf, size_t& off, const char* what) {
  if (off + sizeof(T) > buf.size())
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), ckpt::kMagic, ckpt::kMagic + 4);
  put<uint16_t>(buf, ckpt::kVersion);
  put<uint32_t>(buf, uint32_t(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    const Tensor& t = params.tensor(i);
    put<uint16_t>(buf, uint16_t(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put<uint8_t>(buf, uint8_t(t.ndim()));
    for (int d : t.shape) put<uint32_t>(buf, uint32_t(d));
    size_t off = buf.size();
    buf.resize(off + t.data.size() * sizeof(float));
    std::memcpy(buf.data() + off, t.data.data(), t.data.size() * sizeof(float));
  }
  write_file(path, buf.data(), buf.size());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::vector<uint8_t> buf = read_file(path);
  size_t off = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), ckpt::kMagic, 4) != 0)
    throw FormatError("checkpoint has bad magic: " + path.string());
  off = 4;
  uint16_t version = take<uint16_t>(buf, off, "version");
  if (version != ckpt::kVersion)
    throw FormatError("checkpoint version mismatch (got " + std::to_string(version) + ")");
  uint32_t count = take<uint32_t>(buf, off, "tensor count");
  ParamSet ps;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = take<uint16_t>(buf, off, "name length");
    if (off + name_len > buf.size()) throw FormatError("checkpoint truncated in name");
    std::string name(reinterpret_cast<const char*>(buf.data() + off), name_len);
    off += name_len;
    uint8_t ndim = take<uint8_t>(buf, off, "ndim");
    Shape shape(ndim);
    for (auto& d : shape) d = int(take<uint32_t>(buf, off, "dim"));
    Tensor& t = ps.add(name, shape);
    size_t bytes = t.data.size() * sizeof(float);
    if (off + bytes > buf.size()) throw FormatError("checkpoint truncated in tensor data");
    std::memcpy(t.data.data(), buf.data() + off, bytes);
    off += bytes;
  }
  if (off != buf.size()) throw FormatError("checkpoint has trailing bytes");
  return ps;
}

}  // namespace cmwm
