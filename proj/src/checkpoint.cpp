#include "fv/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <map>
#include <string>

#include "fv/image.hpp"  // read_file / write_file_atomic

namespace fv {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'C', 'K'};
using Kind = CheckpointError::Kind;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k)
    out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k)
    out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_str(out, name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d)
    put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    put_u32(out, std::bit_cast<std::uint32_t>(t[i]));
}

void put_section(std::string& out,
                 const std::vector<std::pair<std::string, Tensor>>& ts) {
  put_u32(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& [name, t] : ts) put_tensor(out, name, t);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  const char* need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw CheckpointError(Kind::truncated,
                            path_ + ": truncated reading " + what +
                                " at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32(const char* what) {
    const char* p = need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k]))
           << (8 * k);
    return v;
  }

  std::uint64_t u64(const char* what) {
    const char* p = need(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k]))
           << (8 * k);
    return v;
  }

  std::string str(const char* what) {
    const std::uint32_t len = u32(what);
    const char* p = need(len, what);
    return std::string(p, len);
  }

  std::pair<std::string, Tensor> tensor() {
    std::string name = str("tensor name");
    const std::uint32_t rank = u32("tensor rank");
    if (rank > 8)
      throw CheckpointError(Kind::truncated,
                            path_ + ": implausible tensor rank " +
                                std::to_string(rank) + " at byte " +
                                std::to_string(pos_));
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = u32("tensor dim");
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
      if (numel > (1LL << 31))
        throw CheckpointError(Kind::truncated,
                              path_ + ": implausible tensor size at byte " +
                                  std::to_string(pos_));
    }
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t[i] = std::bit_cast<float>(u32("tensor data"));
    return {std::move(name), std::move(t)};
  }

  std::vector<std::pair<std::string, Tensor>> section(const char* what) {
    const std::uint32_t count = u32(what);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) out.push_back(tensor());
    return out;
  }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, Tensor>> map_to_pairs(
    const std::map<std::string, Tensor>& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(m.size());
  for (const auto& [name, t] : m) out.emplace_back(name, t);
  return out;
}

}  // namespace

Checkpoint make_checkpoint(FusionModel& model, const AdamState& adam,
                           const std::string& rng_state, int epoch) {
  Checkpoint ck;
  ck.epoch = static_cast<std::uint32_t>(epoch);
  ck.config_kv = model.config().to_kv();
  ck.rng_state = rng_state;
  ck.adam_t = adam.t;
  model.visit_params([&](const std::string& name, Tensor& t) {
    ck.tensors.emplace_back(name, t);
  });
  model.visit_buffers([&](const std::string& name, Tensor& t) {
    ck.tensors.emplace_back(name, t);
  });
  ck.adam_m = map_to_pairs(adam.m);
  ck.adam_v = map_to_pairs(adam.v);
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out(kMagic, 4);
  put_u32(out, ck.version);
  put_u32(out, ck.epoch);
  put_str(out, ck.config_kv);
  put_str(out, ck.rng_state);
  put_u64(out, static_cast<std::uint64_t>(ck.adam_t));
  put_section(out, ck.tensors);
  put_section(out, ck.adam_m);
  put_section(out, ck.adam_v);
  try {
    write_file_atomic(path, out);
  } catch (const IoError& e) {
    throw CheckpointError(Kind::io, e.what());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(Kind::io, e.what());
  }
  Reader r(bytes, path);
  const char* magic = r.need(4, "magic");
  if (std::string(magic, 4) != std::string(kMagic, 4))
    throw CheckpointError(Kind::bad_magic,
                          path + ": bad checkpoint magic bytes");
  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != kCheckpointVersion)
    throw CheckpointError(Kind::bad_version,
                          path + ": unsupported checkpoint version " +
                              std::to_string(ck.version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  ck.epoch = r.u32("epoch");
  ck.config_kv = r.str("model config");
  ck.rng_state = r.str("rng state");
  ck.adam_t = static_cast<std::int64_t>(r.u64("adam step counter"));
  ck.tensors = r.section("model tensors");
  ck.adam_m = r.section("adam first moments");
  ck.adam_v = r.section("adam second moments");
  if (r.remaining() != 0)
    throw CheckpointError(Kind::truncated,
                          path + ": " + std::to_string(r.remaining()) +
                              " unexpected trailing bytes at byte " +
                              std::to_string(r.pos()));
  return ck;
}

void apply_checkpoint(FusionModel& model, AdamState& adam,
                      const Checkpoint& ck) {
  if (ck.config_kv != model.config().to_kv())
    throw CheckpointError(Kind::config_mismatch,
                          "checkpoint model config does not match the "
                          "constructed model");

  std::map<std::string, Tensor> live;
  model.visit_params(
      [&](const std::string& name, Tensor& t) { live.emplace(name, t); });
  model.visit_buffers(
      [&](const std::string& name, Tensor& t) { live.emplace(name, t); });

  if (ck.tensors.size() != live.size())
    throw CheckpointError(Kind::tensor_count,
                          "checkpoint holds " +
                              std::to_string(ck.tensors.size()) +
                              " tensors, model has " +
                              std::to_string(live.size()));
  for (const auto& [name, stored] : ck.tensors) {
    auto it = live.find(name);
    if (it == live.end())
      throw CheckpointError(Kind::tensor_name,
                            "checkpoint tensor '" + name +
                                "' not present in the model");
    if (it->second.shape() != stored.shape())
      throw CheckpointError(Kind::tensor_name,
                            "checkpoint tensor '" + name + "' has shape " +
                                shape_str(stored.shape()) + ", model expects " +
                                shape_str(it->second.shape()));
    it->second.data() = stored.data();
  }

  adam.t = ck.adam_t;
  adam.m.clear();
  adam.v.clear();
  for (const auto& [name, t] : ck.adam_m) {
    if (!live.count(name))
      throw CheckpointError(Kind::tensor_name,
                            "adam moment '" + name +
                                "' names no model parameter");
    adam.m[name] = t.clone();
  }
  for (const auto& [name, t] : ck.adam_v) {
    if (!live.count(name))
      throw CheckpointError(Kind::tensor_name,
                            "adam moment '" + name +
                                "' names no model parameter");
    adam.v[name] = t.clone();
  }
}

FusionModel model_from_checkpoint(const Checkpoint& ck) {
  FusionModel model(ModelConfig::from_kv(ck.config_kv));
  AdamState scratch;
  apply_checkpoint(model, scratch, ck);
  return model;
}

}  // namespace fv
