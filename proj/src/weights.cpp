// SPDX-License-Identifier: Apache-2.0
#include "evtrack/weights.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>

#include "evtrack/error.hpp"
#include "evtrack/nn/rng.hpp"
#include "evtrack/sa_moe.hpp"

namespace evtrack {

// ---------------------------------------------------------------------------
// ModelConfig

std::size_t ModelConfig::stage_of(std::size_t layer) const {
  if (layer < 1 || layer > num_layers()) throw InvalidArgument("layer out of range");
  if (layer <= layers_per_stage[0]) return 1;
  if (layer <= layers_per_stage[0] + layers_per_stage[1]) return 2;
  return 3;
}

std::size_t ModelConfig::stage_first_layer(std::size_t stage) const {
  switch (stage) {
    case 1: return 1;
    case 2: return layers_per_stage[0] + 1;
    case 3: return layers_per_stage[0] + layers_per_stage[1] + 1;
    default: throw InvalidArgument("stage must be 1, 2 or 3");
  }
}

bool ModelConfig::is_moe_layer(std::size_t layer) const {
  return layer == stage_first_layer(1) || layer == stage_first_layer(2) || layer == stage_first_layer(3);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("model config: " + m); };
  if (patch == 0 || embed_dim == 0 || heads == 0 || mlp_ratio == 0) fail("sizes must be positive");
  if (template_size % patch != 0 || search_size % patch != 0) fail("patch must divide crop sizes");
  if (embed_dim % heads != 0) fail("heads must divide embed_dim");
  if (hidden_dim() % 3 != 0) fail("FFN hidden dim must be divisible by 3");
  for (std::size_t n : layers_per_stage) {
    if (n == 0) fail("every stage needs at least one layer");
  }
  if (num_layers() != 12) fail("stage layers must sum to 12");
  std::array<bool, 3> seen{};
  for (frames::Density d : injection_order) {
    if (seen[static_cast<std::size_t>(d)]) fail("injection order must be a permutation");
    seen[static_cast<std::size_t>(d)] = true;
  }
  if (dps_start_layer < 1 || dps_start_layer > num_layers()) fail("dps_start_layer out of range");
  if (head_channels < 2 || head_channels % 2 != 0) fail("head_channels must be even and >= 2");
  if (!(ln_eps > 0.0f)) fail("ln_eps must be positive");
}

// ---------------------------------------------------------------------------
// Names

namespace names {

std::string block(std::size_t layer, const std::string& leaf) {
  return "blocks." + std::to_string(layer - 1) + "." + leaf;
}
std::string expert(std::size_t layer, std::size_t e, const std::string& leaf) {
  return block(layer, "moe.expert" + std::to_string(e) + "." + leaf);
}
std::string router(std::size_t layer, const std::string& leaf) { return block(layer, "moe.router." + leaf); }
std::string transform(std::size_t stage, const std::string& leaf) {
  return "transform." + std::to_string(stage) + "." + leaf;
}
std::string halting(std::size_t layer, const std::string& leaf) {
  return "halting." + std::to_string(layer - 1) + "." + leaf;
}
std::string head(const std::string& branch, const std::string& leaf) { return "head." + branch + "." + leaf; }

}  // namespace names

namespace {

constexpr std::array<std::pair<const char*, std::size_t>, 3> kHeadBranches{
    {{"score", 1}, {"offset", 2}, {"size", 2}}};

}  // namespace

std::map<std::string, nn::Shape> expected_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, h = c.hidden_dim(), p = c.patch;
  std::map<std::string, nn::Shape> s;
  s["patch_embed.weight"] = {d, 3 * p * p};
  s["patch_embed.bias"] = {d};
  s["pos_embed.template"] = {c.template_tokens(), d};
  s["pos_embed.search"] = {c.search_tokens(), d};
  for (std::size_t l = 1; l <= c.num_layers(); ++l) {
    s[names::block(l, "norm1.weight")] = {d};
    s[names::block(l, "norm1.bias")] = {d};
    s[names::block(l, "attn.qkv.weight")] = {3 * d, d};
    s[names::block(l, "attn.qkv.bias")] = {3 * d};
    s[names::block(l, "attn.proj.weight")] = {d, d};
    s[names::block(l, "attn.proj.bias")] = {d};
    s[names::block(l, "norm2.weight")] = {d};
    s[names::block(l, "norm2.bias")] = {d};
    s[names::block(l, "mlp.fc1.weight")] = {h, d};
    s[names::block(l, "mlp.fc1.bias")] = {h};
    s[names::block(l, "mlp.fc2.weight")] = {d, h};
    s[names::block(l, "mlp.fc2.bias")] = {d};
    if (c.is_moe_layer(l)) {
      for (std::size_t e = 0; e < 3; ++e) {
        s[names::expert(l, e, "fc1.weight")] = {h / 3, d};
        s[names::expert(l, e, "fc1.bias")] = {h / 3};
        s[names::expert(l, e, "fc2.weight")] = {d, h / 3};
        s[names::expert(l, e, "fc2.bias")] = {d};
      }
      s[names::router(l, "fc1.weight")] = {d, 2 * d};
      s[names::router(l, "fc1.bias")] = {d};
      s[names::router(l, "fc2.weight")] = {3, d};
      s[names::router(l, "fc2.bias")] = {3};
    }
    if (l >= c.dps_start_layer) {
      s[names::halting(l, "weight")] = {1, d};
      s[names::halting(l, "bias")] = {1};
    }
  }
  for (std::size_t stage = 2; stage <= 3; ++stage) {
    s[names::transform(stage, "norm.weight")] = {d};
    s[names::transform(stage, "norm.bias")] = {d};
    s[names::transform(stage, "linear.weight")] = {d, d};
    s[names::transform(stage, "linear.bias")] = {d};
  }
  s["norm.weight"] = {d};
  s["norm.bias"] = {d};
  const std::size_t c1 = c.head_channels, c2 = c.head_channels / 2;
  for (const auto& [branch, outs] : kHeadBranches) {
    s[names::head(branch, "conv1.weight")] = {c1, d, 3, 3};
    s[names::head(branch, "conv1.bias")] = {c1};
    s[names::head(branch, "bn1.scale")] = {c1};
    s[names::head(branch, "bn1.shift")] = {c1};
    s[names::head(branch, "conv2.weight")] = {c2, c1, 3, 3};
    s[names::head(branch, "conv2.bias")] = {c2};
    s[names::head(branch, "bn2.scale")] = {c2};
    s[names::head(branch, "bn2.shift")] = {c2};
    s[names::head(branch, "out.weight")] = {outs, c2, 1, 1};
    s[names::head(branch, "out.bias")] = {outs};
  }
  return s;
}

// ---------------------------------------------------------------------------
// ModelWeights

void ModelWeights::set(const std::string& name, nn::Tensor t) { tensors_[name] = std::move(t); }

const nn::Tensor& ModelWeights::get(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("missing weight tensor '" + name + "'");
  return it->second;
}

nn::Tensor& ModelWeights::mutable_tensor(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("missing weight tensor '" + name + "'");
  return it->second;
}

void ModelWeights::audit(const ModelConfig& config) const {
  const auto expected = expected_shapes(config);
  for (const auto& [name, t] : tensors_) {
    const auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("unknown weight tensor '" + name + "'");
    if (t.dims() != it->second) {
      throw FormatError("weight '" + name + "' has shape " + nn::to_string(t.dims()) + ", expected " +
                        nn::to_string(it->second));
    }
    if (!t.all_finite()) throw FormatError("weight '" + name + "' contains non-finite values");
  }
  for (const auto& [name, shape] : expected) {
    if (!tensors_.count(name)) throw FormatError("missing weight tensor '" + name + "'");
  }
}

namespace {

template <typename T>
void put_le(std::string& buf, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
      u = static_cast<U>((u << 8) | static_cast<unsigned char>(bytes_[pos_ + i]));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string take_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weights file truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ModelWeights::save(std::ostream& out) const {
  std::string buf = "PSMW";
  put_le<std::uint32_t>(buf, kVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    if (name.size() > 0xFFFF) throw InvalidArgument("weight name too long: " + name);
    if (t.rank() > 0xFF) throw InvalidArgument("weight rank too large: " + name);
    put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_le<std::uint32_t>(buf, bits);
    }
  }
  put_le<std::uint64_t>(buf, fnv1a(buf));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void ModelWeights::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  save(out);
}

ModelWeights ModelWeights::load(std::istream& in) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    Reader head(bytes);
    if (head.take_string(4) != "PSMW") throw FormatError("weights file: bad magic");
    const auto version = head.take<std::uint32_t>();
    if (version != kVersion) {
      throw VersionError("weights file: version " + std::to_string(version) + ", expected " +
                         std::to_string(kVersion));
    }
  }
  if (bytes.size() < 20) throw FormatError("weights file truncated at byte " + std::to_string(bytes.size()));
  {
    const std::string trailer = bytes.substr(bytes.size() - 8);
    Reader tr(trailer);
    const auto stored = tr.take<std::uint64_t>();
    bytes.resize(bytes.size() - 8);
    if (stored != fnv1a(bytes)) throw FormatError("weights file: checksum mismatch");
  }
  Reader r(bytes);
  r.take_string(8);
  const auto count = r.take<std::uint32_t>();
  ModelWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.take<std::uint16_t>();
    std::string name = r.take_string(len);
    if (w.contains(name)) throw FormatError("weights file: duplicate tensor '" + name + "'");
    const auto rank = r.take<std::uint8_t>();
    nn::Shape dims(rank);
    for (auto& d : dims) d = r.take<std::uint32_t>();
    const std::size_t n = nn::element_count(dims);
    if (n > bytes.size() / 4) throw FormatError("weights file: tensor '" + name + "' larger than file");
    std::vector<float> values(n);
    for (float& v : values) {
      const auto bits = r.take<std::uint32_t>();
      std::memcpy(&v, &bits, sizeof v);
    }
    w.set(name, nn::Tensor(std::move(dims), std::move(values)));
  }
  if (!r.done()) throw FormatError("weights file: trailing bytes after last tensor");
  return w;
}

ModelWeights ModelWeights::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return load(in);
}

ModelWeights ModelWeights::load(const std::filesystem::path& path, const ModelConfig& config) {
  ModelWeights w = load(path);
  w.audit(config);
  return w;
}

// ---------------------------------------------------------------------------
// Selftest weights

ModelWeights make_selftest_weights(const ModelConfig& c, const SelftestWeightOptions& opts) {
  const auto shapes = expected_shapes(c);
  nn::Rng rng(opts.seed);
  ModelWeights w;

  auto xavier = [&](const nn::Shape& s) {
    // Fan-in/out of a [out, in, kh, kw] or [out, in] weight.
    const std::size_t receptive = s.size() == 4 ? s[2] * s[3] : 1;
    const double fan_in = static_cast<double>(s[1] * receptive);
    const double fan_out = static_cast<double>(s[0] * receptive);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    nn::Tensor t(s);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
    return t;
  };
  auto uniform = [&](const nn::Shape& s, double a) {
    nn::Tensor t(s);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-a, a));
    return t;
  };
  auto ends_with = [](const std::string& s, const char* suffix) {
    const std::size_t n = std::strlen(suffix);
    return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
  };

  // std::map iteration is name-ordered, so draws are reproducible.
  for (const auto& [name, shape] : shapes) {
    if (name.find(".moe.expert") != std::string::npos) continue;  // derived below
    if (name.starts_with("halting.") && ends_with(name, ".bias")) {
      w.set(name, nn::Tensor(shape, opts.halting_bias));
    } else if (ends_with(name, "norm1.weight") || ends_with(name, "norm2.weight") ||
               ends_with(name, "norm.weight") || ends_with(name, ".scale")) {
      w.set(name, nn::Tensor(shape, 1.0f));
    } else if (ends_with(name, "norm1.bias") || ends_with(name, "norm2.bias") ||
               ends_with(name, "norm.bias") || ends_with(name, ".shift")) {
      w.set(name, nn::Tensor(shape, 0.0f));
    } else if (name.starts_with("pos_embed.")) {
      w.set(name, uniform(shape, 0.05));
    } else if (shape.size() >= 2) {
      w.set(name, xavier(shape));
    } else {
      w.set(name, uniform(shape, 0.02));
    }
  }

  for (std::size_t l = 1; l <= c.num_layers(); ++l) {
    if (!c.is_moe_layer(l)) continue;
    const moe::Ffn shared{w.get(names::block(l, "mlp.fc1.weight")), w.get(names::block(l, "mlp.fc1.bias")),
                          w.get(names::block(l, "mlp.fc2.weight")), w.get(names::block(l, "mlp.fc2.bias"))};
    const moe::ExpertSet set = moe::split_ffn(shared);
    for (std::size_t e = 0; e < 3; ++e) {
      w.set(names::expert(l, e, "fc1.weight"), set.experts[e].fc1_weight);
      w.set(names::expert(l, e, "fc1.bias"), set.experts[e].fc1_bias);
      w.set(names::expert(l, e, "fc2.weight"), set.experts[e].fc2_weight);
      w.set(names::expert(l, e, "fc2.bias"), set.experts[e].fc2_bias);
    }
  }
  w.audit(c);
  return w;
}

}  // namespace evtrack
