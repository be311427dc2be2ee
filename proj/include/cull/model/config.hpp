#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace cull {

enum class Arch { EncoderDecoder, DecoderOnly };

/// Declaration order is the pruning tie-break order.
enum class Section { Encoder, Decoder };

std::string to_string(Arch arch);
std::string to_string(Section section);
Arch parse_arch(const std::string& s);
Section parse_section(const std::string& s);

/// A transformer block, addressed by section and 0-based index within it.
struct LayerId {
  Section section = Section::Decoder;
  int index = 0;

  auto operator<=>(const LayerId&) const = default;

  /// "enc.3" / "dec.3"
  std::string name() const;
  static LayerId parse(const std::string& name);
};

/// Blocks skipped during evaluation. A removed block contributes its residual
/// input unchanged.
struct LayerMask {
  std::set<LayerId> removed;

  bool contains(LayerId id) const { return removed.count(id) != 0; }
  std::size_t size() const { return removed.size(); }
  bool empty() const { return removed.empty(); }
  LayerMask with(LayerId id) const {
    LayerMask m = *this;
    m.removed.insert(id);
    return m;
  }
  bool operator==(const LayerMask&) const = default;
};

struct ModelConfig {
  Arch arch = Arch::EncoderDecoder;
  int d_model = 64;
  int heads = 4;
  int d_ffn = 128;
  int n_encoder_layers = 8;
  int n_decoder_layers = 8;
  int vocab_size = 128;
  int max_len = 24;
  std::uint64_t seed = 7;

  /// Throws ConfigError on invalid dimensions.
  void validate() const;

  int layer_count(Section s) const { return s == Section::Encoder ? n_encoder_layers : n_decoder_layers; }
  int total_layers() const { return n_encoder_layers + n_decoder_layers; }
  /// All block ids, encoder first.
  std::vector<LayerId> layers() const;
  bool has_layer(LayerId id) const { return id.index >= 0 && id.index < layer_count(id.section); }

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig toy_encoder_decoder();
  static ModelConfig toy_decoder_only();
};

/// Linear weights an adapter may be attached to.
enum class LinearRole { AttnQ, AttnK, AttnV, AttnO, CrossQ, CrossK, CrossV, CrossO, FfnIn, FfnOut };

std::string to_string(LinearRole role);
LinearRole parse_linear_role(const std::string& s);
std::set<LinearRole> all_linear_roles();

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  double dropout = 0.1;
  std::set<LinearRole> targets = all_linear_roles();

  double scaling() const { return alpha / rank; }
  bool operator==(const LoraConfig&) const = default;
};

}  // namespace cull
