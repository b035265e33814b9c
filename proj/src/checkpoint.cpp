#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "msaec/error.hpp"
#include "msaec/model.hpp"

namespace msaec {
namespace {

constexpr std::array<char, 8> kMagic = {'M', 'S', 'A', 'A', 'E', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::array<std::size_t*, 11> config_fields(ModelConfig& c) {
  return {&c.num_filters,     &c.filter_length, &c.bottleneck_channels, &c.skip_channels,
          &c.hidden_channels, &c.kernel_size,   &c.blocks_per_repeat,   &c.repeats,
          &c.attention_width, &c.attention_heads, &c.stride};
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  ModelConfig cfg = params.config;
  for (std::size_t* field : config_fields(cfg)) w.u32(static_cast<std::uint32_t>(*field));
  w.u8(cfg.causal ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(cfg.fusion));
  w.u8(static_cast<std::uint8_t>(cfg.attention_scale));
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& nt : named) {
    w.u32(static_cast<std::uint32_t>(nt.name.size()));
    w.bytes(nt.name.data(), nt.name.size());
    w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : nt.tensor.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(kMagic.size()) != std::string(kMagic.data(), kMagic.size())) throw IoError("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  for (std::size_t* field : config_fields(cfg)) *field = r.u32();
  cfg.causal = r.u8() != 0;
  const std::uint8_t fusion = r.u8();
  const std::uint8_t scale = r.u8();
  if (fusion > 1 || scale > 1) throw IoError("checkpoint has unknown flag values");
  cfg.fusion = static_cast<InputFusion>(fusion);
  cfg.attention_scale = static_cast<AttentionScale>(scale);
  ModelParams params;
  try {
    params = make_params(cfg);
  } catch (const ContractError& e) {
    throw IoError(std::string("checkpoint config invalid: ") + e.what());
  }
  auto named = params.named();
  const std::uint32_t count = r.u32();
  if (count != named.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, expected " + std::to_string(named.size()));
  }
  for (auto& nt : named) {
    const std::string name = r.str(r.u32());
    if (name != nt.name) throw IoError("checkpoint tensor '" + name + "' where '" + nt.name + "' was expected");
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != nt.tensor.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                    shape_str(nt.tensor.shape()));
    }
    for (double& v : nt.tensor.mutable_data()) v = static_cast<double>(r.f32());
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return params;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace msaec
