#pragma once

#include "ttyrl/model.hpp"

namespace ttyrl::testing {

// A few hundred parameters: 3x3 cell crop at 2x2 glyphs, one strided conv,
// two 8-unit LSTM layers.
inline ModelConfig toy_config(Algorithm algo, int actions = 5, int rem_heads = 3) {
  ModelConfig cfg;
  cfg.render.glyph_width = 2;
  cfg.render.glyph_height = 2;
  cfg.render.crop_rows = 3;
  cfg.render.crop_cols = 3;
  cfg.conv = {{4, 2, 2, 2, 2}};
  cfg.encoder_dim = 8;
  cfg.hidden = 8;
  cfg.layers = 2;
  cfg.actions = actions;
  return with_heads(cfg, algo, rem_heads);
}

}  // namespace ttyrl::testing
