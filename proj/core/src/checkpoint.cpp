#include "tdir/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "tdir/io.hpp"

namespace tdir {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'D', 'I', 'R'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_text(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string text(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t count) {
    need(count * 4, "tensor values");
    std::memcpy(dst, bytes_.data() + pos_, count * 4);
    pos_ += count * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, ckpt.format_version);
  put_text(out, ckpt.config.to_text());
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    put_text(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("metadata entry '" + k + "' cannot be encoded as a key=value line");
    }
    meta += k + "=" + v + "\n";
  }
  put_text(out, meta);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  Reader in(bytes);
  in.need(4, "magic");
  in.u32("magic");
  Checkpoint ckpt;
  ckpt.format_version = in.u32("format version");
  if (ckpt.format_version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.format_version));
  }
  try {
    ckpt.config = ModelConfig::parse(in.text("model config"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  const auto expected = param_shapes(ckpt.config);
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.text("tensor name");
    const std::uint32_t ndim = in.u32("tensor rank");
    Shape dims;
    for (std::uint32_t d = 0; d < ndim; ++d) dims.push_back(in.u32("tensor dims"));
    auto it = expected.find(name);
    if (it == expected.end() || it->second != dims) {
      throw CheckpointError("tensor " + name + " " + shape_str(dims) + " does not fit the stored model config");
    }
    Tensor<float> t(dims);
    in.floats(t.values.data(), t.values.size());
    ckpt.params.emplace(std::move(name), std::move(t));
  }
  if (ckpt.params.size() != expected.size()) throw CheckpointError("checkpoint is missing parameter tensors");
  std::istringstream meta(in.text("metadata"));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed metadata line '" + line + "'");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint metadata");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return deserialize_checkpoint(bytes);
}

}  // namespace tdir
