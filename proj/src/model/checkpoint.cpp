#include "cull/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cull/error.hpp"
#include "cull/util/hash.hpp"

namespace cull {

namespace {

constexpr char kMagic[8] = {'C', 'U', 'L', 'L', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '\0'};

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rows()));
    u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) f32(t.data()[i]);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const char* bytes(std::size_t n) {
    need(n);
    const char* p = s_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(*bytes(1)); }
  std::uint32_t u32() {
    const char* p = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(bytes(n), n);
  }
  Tensor tensor() {
    const std::uint32_t rows = u32(), cols = u32();
    need(std::size_t(rows) * cols * 4);
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = f32();
    return t;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const LayeredModel& m) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const auto& c = m.config;
  w.u32(c.arch == Arch::EncoderDecoder ? 0 : 1);
  for (int v : {c.d_model, c.heads, c.d_ffn, c.n_encoder_layers, c.n_decoder_layers, c.vocab_size, c.max_len}) w.i32(v);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(m.weights.size()));
  for (const auto& [name, t] : m.weights) {
    w.str(name);
    w.tensor(t);
  }
  w.u32(static_cast<std::uint32_t>(m.mask.size()));
  for (LayerId id : m.mask.removed) {
    w.u8(id.section == Section::Encoder ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(id.index));
  }
  w.u8(m.lora ? 1 : 0);
  if (m.lora) {
    w.u32(static_cast<std::uint32_t>(m.lora->rank));
    w.f64(m.lora->alpha);
    w.f64(m.lora->dropout);
    w.u32(static_cast<std::uint32_t>(m.lora->targets.size()));
    for (LinearRole r : m.lora->targets) w.str(to_string(r));
    w.u8(m.base_frozen ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(m.adapters.size()));
    for (const auto& [name, ad] : m.adapters) {
      w.str(name);
      w.tensor(ad.a);
      w.tensor(ad.b);
    }
  }
  w.bytes(kTrailer, sizeof kTrailer);
  return w.take();
}

LayeredModel deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(r.bytes(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  LayeredModel m;
  auto& c = m.config;
  const std::uint32_t arch = r.u32();
  if (arch > 1) throw FormatError("bad architecture code");
  c.arch = arch == 0 ? Arch::EncoderDecoder : Arch::DecoderOnly;
  c.d_model = r.i32();
  c.heads = r.i32();
  c.d_ffn = r.i32();
  c.n_encoder_layers = r.i32();
  c.n_decoder_layers = r.i32();
  c.vocab_size = r.i32();
  c.max_len = r.i32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  const std::uint32_t n_weights = r.u32();
  for (std::uint32_t i = 0; i < n_weights; ++i) {
    std::string name = r.str();
    m.weights.emplace(std::move(name), r.tensor());
  }
  const std::uint32_t n_mask = r.u32();
  for (std::uint32_t i = 0; i < n_mask; ++i) {
    const std::uint8_t s = r.u8();
    if (s > 1) throw FormatError("bad section code in mask");
    LayerId id{s == 0 ? Section::Encoder : Section::Decoder, static_cast<int>(r.u32())};
    if (!c.has_layer(id)) throw FormatError("mask names unknown layer " + id.name());
    m.mask.removed.insert(id);
  }
  if (r.u8() == 1) {
    LoraConfig lc;
    lc.rank = static_cast<int>(r.u32());
    lc.alpha = r.f64();
    lc.dropout = r.f64();
    lc.targets.clear();
    const std::uint32_t n_roles = r.u32();
    for (std::uint32_t i = 0; i < n_roles; ++i) {
      try {
        lc.targets.insert(parse_linear_role(r.str()));
      } catch (const ConfigError& e) {
        throw FormatError(e.what());
      }
    }
    m.lora = lc;
    m.base_frozen = r.u8() == 1;
    const std::uint32_t n_ad = r.u32();
    for (std::uint32_t i = 0; i < n_ad; ++i) {
      std::string name = r.str();
      LoraAdapter<float> ad;
      ad.a = r.tensor();
      ad.b = r.tensor();
      m.adapters.emplace(std::move(name), std::move(ad));
    }
  }
  if (std::memcmp(r.bytes(sizeof kTrailer), kTrailer, sizeof kTrailer) != 0) throw FormatError("bad checkpoint trailer");
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return m;
}

void save(const LayeredModel& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

LayeredModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string model_hash(const LayeredModel& m) { return hash_hex(serialize(m)); }

}  // namespace cull
