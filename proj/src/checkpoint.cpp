#include "pinlab/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pinlab {

namespace {

static_assert(sizeof(float) == 4);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }

  std::string_view take(std::size_t n, const std::string& field) {
    need(n, field);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const std::string& field) {
    if (remaining() < n)
      throw CheckpointError("checkpoint truncated while reading " + field + " at byte " +
                            std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TensorList& tensors) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (Index d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.value.size(); ++i) put_f32(out, t.value[i]);
  }
  return out;
}

TensorList decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw CheckpointError("bad magic (expected SPCK)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");
  TensorList out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string where = "tensor " + std::to_string(k);
    const std::uint32_t len = r.u32(where + " name length");
    NamedTensor t;
    t.name = std::string(r.take(len, where + " name"));
    const std::uint32_t rank = r.u32(t.name + " rank");
    if (rank < 1 || rank > 4) throw CheckpointError(t.name + " rank " + std::to_string(rank) + " not in 1..4");
    Shape shape;
    std::uint64_t volume = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32(t.name + " dims");
      if (dim == 0) throw CheckpointError(t.name + " has a zero dimension");
      volume *= dim;
      shape.push_back(static_cast<Index>(dim));
    }
    if (volume * 4 > r.remaining())
      throw CheckpointError("checkpoint truncated while reading " + t.name + " data");
    t.value = Tensor<float>(shape);
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] = r.f32(t.name + " data");
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0)
    throw CheckpointError("byte length: " + std::to_string(r.remaining()) +
                          " trailing bytes after the last tensor");
  return out;
}

void save_checkpoint(const std::string& path, const TensorList& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

TensorList load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

const Tensor<float>* find_tensor_or_null(const TensorList& tensors, std::string_view name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Tensor<float>& find_tensor(const TensorList& tensors, std::string_view name) {
  if (const auto* t = find_tensor_or_null(tensors, name)) return *t;
  throw CheckpointError("checkpoint has no tensor named " + std::string(name));
}

Tensor<float> pack_u64(std::uint64_t v) {
  Tensor<float> t({4});
  for (Index i = 0; i < 4; ++i) t[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return t;
}

std::uint64_t unpack_u64(const Tensor<float>& t, std::string_view what) {
  if (t.shape() != Shape{4}) throw CheckpointError(std::string(what) + " must have shape [4]");
  std::uint64_t v = 0;
  for (Index i = 0; i < 4; ++i) {
    const float f = t[i];
    if (!(f >= 0.0f && f <= 65535.0f) || std::floor(f) != f)
      throw CheckpointError(std::string(what) + " holds a non-integer chunk");
    v |= static_cast<std::uint64_t>(f) << (16 * i);
  }
  return v;
}

}  // namespace pinlab
