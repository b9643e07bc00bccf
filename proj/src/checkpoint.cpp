#include "aflow/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

constexpr char kMagic[8] = {'A', 'F', 'L', 'O', 'W', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }

  const std::uint8_t* bytes(std::size_t len) {
    need(len);
    const std::uint8_t* p = data_ + pos_;
    pos_ += len;
    return p;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) {
      throw DataError("checkpoint: truncated file");
    }
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void append_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
  }
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

Tensor read_tensor(Reader& r, std::string* name_out) {
  const std::uint32_t name_len = r.u32();
  *name_out = r.str(name_len);
  const std::uint32_t rank = r.u32();
  if (rank > 8) {
    throw DataError("checkpoint: implausible tensor rank");
  }
  std::vector<int> shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    if (d > (1u << 24)) {
      throw DataError("checkpoint: implausible tensor dimension");
    }
    shape.push_back(static_cast<int>(d));
  }
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = r.u32();
    float f = 0.0f;
    std::memcpy(&f, &bits, 4);
    t[i] = static_cast<double>(f);
  }
  return t;
}

void round_through_f32(Tensor& t) {
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(static_cast<float>(t[i]));
  }
}

}  // namespace

void sync_storage_precision(NetworkParams& params, AdamState& adam) {
  for (auto& l : params.layers) {
    round_through_f32(l.weight);
    round_through_f32(l.bias);
  }
  for (auto& t : adam.m) {
    round_through_f32(t);
  }
  for (auto& t : adam.v) {
    round_through_f32(t);
  }
}

void Checkpoint::sync_storage_precision() { aflow::sync_storage_precision(params, adam); }

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kFormatVersion);

  const std::string meta = checkpoint_meta_to_json(ckpt.meta);
  put_u64(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());

  const std::size_t layer_count = ckpt.params.layers.size();
  if (ckpt.adam.m.size() != 2 * layer_count || ckpt.adam.v.size() != 2 * layer_count) {
    throw ConfigError("save_checkpoint: adam state does not mirror parameters");
  }
  put_u64(out, static_cast<std::uint64_t>(layer_count * 6));
  for (std::size_t l = 0; l < layer_count; ++l) {
    const LayerParams& lp = ckpt.params.layers[l];
    append_tensor(out, "param." + lp.id + ".weight", lp.weight);
    append_tensor(out, "param." + lp.id + ".bias", lp.bias);
    append_tensor(out, "adam_m." + lp.id + ".weight", ckpt.adam.m[2 * l]);
    append_tensor(out, "adam_m." + lp.id + ".bias", ckpt.adam.m[2 * l + 1]);
    append_tensor(out, "adam_v." + lp.id + ".weight", ckpt.adam.v[2 * l]);
    append_tensor(out, "adam_v." + lp.id + ".bias", ckpt.adam.v[2 * l + 1]);
  }

  const std::uint32_t crc = static_cast<std::uint32_t>(::crc32(0L, out.data(), static_cast<uInt>(out.size())));
  put_u32(out, crc);

  // Atomic write.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw IoError("save_checkpoint: cannot open " + tmp.string());
    }
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) {
      throw IoError("save_checkpoint: write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("save_checkpoint: rename failed: " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("load_checkpoint: cannot open " + path.string());
  }
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 4 + 4) {
    throw DataError("load_checkpoint: file too small");
  }
  if (std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw DataError("load_checkpoint: bad magic bytes in " + path.string());
  }

  const std::uint32_t stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
  }();
  const std::uint32_t computed_crc =
      static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != computed_crc) {
    throw DataError("load_checkpoint: CRC mismatch (corrupted file?)");
  }

  Reader r(buf.data(), buf.size() - 4);
  r.bytes(8);  // magic
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw DataError("load_checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint64_t meta_len = r.u64();
  Checkpoint ckpt;
  ckpt.meta = checkpoint_meta_from_json(r.str(meta_len));

  const std::uint64_t tensor_count = r.u64();
  if (tensor_count % 6 != 0) {
    throw DataError("load_checkpoint: unexpected tensor count");
  }
  const std::size_t layer_count = tensor_count / 6;
  ckpt.adam.config = ckpt.meta.adam;
  ckpt.adam.t = ckpt.meta.adam_t;
  for (std::size_t l = 0; l < layer_count; ++l) {
    std::string name;
    LayerParams lp;
    lp.weight = read_tensor(r, &name);
    if (name.rfind("param.", 0) != 0 || name.size() < 14) {
      throw DataError("load_checkpoint: unexpected tensor name " + name);
    }
    lp.id = name.substr(6, name.size() - 6 - 7);  // strip "param." and ".weight"
    lp.bias = read_tensor(r, &name);
    ckpt.adam.m.push_back(read_tensor(r, &name));
    ckpt.adam.m.push_back(read_tensor(r, &name));
    ckpt.adam.v.push_back(read_tensor(r, &name));
    ckpt.adam.v.push_back(read_tensor(r, &name));
    ckpt.params.layers.push_back(std::move(lp));
  }
  return ckpt;
}

}  // namespace aflow
