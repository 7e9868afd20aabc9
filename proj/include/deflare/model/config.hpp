#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "deflare/core/error.hpp"

namespace deflare {

struct ModelConfig {
  std::size_t stages = 2;            // resolution levels, the last one is the bottleneck
  std::size_t base_dim = 8;          // channels at level 0; doubles per level
  std::size_t blocks_per_stage = 1;  // PSCBlocks per level
  std::size_t heads = 1;
  std::size_t desm_expand = 2;
  std::size_t cab_reduction = 2;
  double attn_eps = 1e-6;
  // Predict a correction added to the input image instead of the image itself.
  bool input_residual = true;

  std::size_t channels(std::size_t level) const { return base_dim << level; }

  void validate() const {
    if (stages < 1) throw ConfigError("model.stages must be >= 1");
    if (base_dim == 0 || base_dim % 2) throw ConfigError("model.base_dim must be even and > 0");
    if (blocks_per_stage < 1) throw ConfigError("model.blocks_per_stage must be >= 1");
    if (!(attn_eps > 0)) throw ConfigError("model.attn_eps must be > 0");
    if (heads < 1) throw ConfigError("model.heads must be >= 1");
    if (desm_expand < 1 || (desm_expand * base_dim) % 2) {
      throw ConfigError("model.desm_expand must give an even expanded width");
    }
    for (std::size_t s = 0; s < stages; ++s) {
      const std::size_t c = channels(s);
      if (c % heads) throw ConfigError("model.heads must divide every level width");
      if (cab_reduction < 1 || c % cab_reduction) {
        throw ConfigError("model.cab_reduction must divide every level width");
      }
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"stages", c.stages},
                     {"base_dim", c.base_dim},
                     {"blocks_per_stage", c.blocks_per_stage},
                     {"heads", c.heads},
                     {"desm_expand", c.desm_expand},
                     {"cab_reduction", c.cab_reduction},
                     {"attn_eps", c.attn_eps},
                     {"input_residual", c.input_residual}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.stages = j.value("stages", d.stages);
  c.base_dim = j.value("base_dim", d.base_dim);
  c.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
  c.heads = j.value("heads", d.heads);
  c.desm_expand = j.value("desm_expand", d.desm_expand);
  c.cab_reduction = j.value("cab_reduction", d.cab_reduction);
  c.attn_eps = j.value("attn_eps", d.attn_eps);
  c.input_residual = j.value("input_residual", d.input_residual);
}

}  // namespace deflare
