#include "ttyrl/model.hpp"

#include <cmath>
#include <sstream>

#include "ttyrl/config.hpp"
#include "ttyrl/errors.hpp"

namespace ttyrl {

using Eigen::Index;

std::string_view to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::BC: return "bc";
    case Algorithm::CQL: return "cql";
    case Algorithm::IQL: return "iql";
    case Algorithm::AWAC: return "awac";
    case Algorithm::REM: return "rem";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (const auto a : {Algorithm::BC, Algorithm::CQL, Algorithm::IQL, Algorithm::AWAC, Algorithm::REM}) {
    if (to_string(a) == text) return a;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown algorithm '" + std::string(text) + "'");
}

// ------------------------------------------------------------------ config

std::vector<FeatureShape> encoder_shapes(const ModelConfig& cfg) {
  std::vector<FeatureShape> shapes{{cfg.render.height(), cfg.render.width(), kImageChannels}};
  for (const auto& layer : cfg.conv) {
    const auto& in = shapes.back();
    if (layer.channels < 1 || layer.kernel_h < 1 || layer.kernel_w < 1 || layer.stride_h < 1 || layer.stride_w < 1) {
      throw Error(ErrorKind::InvalidArgument, "conv layer dimensions must be positive");
    }
    if (layer.kernel_h > in.height || layer.kernel_w > in.width) {
      throw Error(ErrorKind::InvalidArgument, "conv kernel larger than its input");
    }
    shapes.push_back({(in.height - layer.kernel_h) / layer.stride_h + 1, (in.width - layer.kernel_w) / layer.stride_w + 1,
                      layer.channels});
  }
  return shapes;
}

void ModelConfig::validate() const {
  ttyrl::validate(render);
  encoder_shapes(*this);
  if (encoder_dim < 1) throw Error(ErrorKind::InvalidArgument, "encoder_dim must be >= 1");
  if (hidden < 1) throw Error(ErrorKind::InvalidArgument, "hidden size must be >= 1");
  if (layers < 1) throw Error(ErrorKind::InvalidArgument, "layer count must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidArgument, "dropout must be in [0, 1)");
  if (actions < 1 || actions > 256) throw Error(ErrorKind::InvalidArgument, "action count must be in [1, 256]");
  if (q_heads < 0) throw Error(ErrorKind::InvalidArgument, "q_heads must be >= 0");
  if (!policy_head && !value_head && q_heads == 0) throw Error(ErrorKind::InvalidArgument, "model has no heads");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "render.glyph_width = " << render.glyph_width << "\n"
     << "render.glyph_height = " << render.glyph_height << "\n"
     << "render.crop_rows = " << render.crop_rows << "\n"
     << "render.crop_cols = " << render.crop_cols << "\n"
     << "render.cursor_highlight = " << (render.cursor_highlight ? "true" : "false") << "\n"
     << "conv = ";
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& c = conv[i];
    os << (i ? ";" : "") << c.channels << ":" << c.kernel_h << ":" << c.kernel_w << ":" << c.stride_h << ":"
       << c.stride_w;
  }
  os << "\n"
     << "encoder_dim = " << encoder_dim << "\n"
     << "hidden = " << hidden << "\n"
     << "layers = " << layers << "\n"
     << "dropout = " << dropout << "\n"
     << "actions = " << actions << "\n"
     << "prev_action = " << (condition_on_prev_action ? "true" : "false") << "\n"
     << "policy_head = " << (policy_head ? "true" : "false") << "\n"
     << "value_head = " << (value_head ? "true" : "false") << "\n"
     << "q_heads = " << q_heads << "\n";
  return os.str();
}

std::vector<ConvLayer> parse_conv_stack(std::string_view text) {
  std::vector<ConvLayer> out;
  while (!text.empty()) {
    const auto semi = text.find(';');
    const auto item = text.substr(0, semi);
    text = semi == std::string_view::npos ? std::string_view{} : text.substr(semi + 1);
    if (item.empty()) continue;
    int v[5] = {0, 0, 0, 1, 1};
    int n = 0;
    std::string_view rest = item;
    while (!rest.empty() && n < 5) {
      const auto colon = rest.find(':');
      v[n++] = std::stoi(std::string(rest.substr(0, colon)));
      rest = colon == std::string_view::npos ? std::string_view{} : rest.substr(colon + 1);
    }
    if (n < 3 || !rest.empty()) {
      throw Error(ErrorKind::InvalidArgument, "conv layer '" + std::string(item) + "' is not channels:kh:kw[:sh:sw]");
    }
    out.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return out;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  const auto kv = parse_key_values(text);
  ModelConfig cfg;
  cfg.render.glyph_width = static_cast<int>(kv_int(kv, "render.glyph_width", cfg.render.glyph_width));
  cfg.render.glyph_height = static_cast<int>(kv_int(kv, "render.glyph_height", cfg.render.glyph_height));
  cfg.render.crop_rows = static_cast<int>(kv_int(kv, "render.crop_rows", cfg.render.crop_rows));
  cfg.render.crop_cols = static_cast<int>(kv_int(kv, "render.crop_cols", cfg.render.crop_cols));
  cfg.render.cursor_highlight = kv_bool(kv, "render.cursor_highlight", cfg.render.cursor_highlight);
  if (kv.count("conv")) cfg.conv = parse_conv_stack(kv.at("conv"));
  cfg.encoder_dim = static_cast<int>(kv_int(kv, "encoder_dim", cfg.encoder_dim));
  cfg.hidden = static_cast<int>(kv_int(kv, "hidden", cfg.hidden));
  cfg.layers = static_cast<int>(kv_int(kv, "layers", cfg.layers));
  cfg.dropout = kv_double(kv, "dropout", cfg.dropout);
  cfg.actions = static_cast<int>(kv_int(kv, "actions", cfg.actions));
  cfg.condition_on_prev_action = kv_bool(kv, "prev_action", cfg.condition_on_prev_action);
  cfg.policy_head = kv_bool(kv, "policy_head", cfg.policy_head);
  cfg.value_head = kv_bool(kv, "value_head", cfg.value_head);
  cfg.q_heads = static_cast<int>(kv_int(kv, "q_heads", cfg.q_heads));
  return cfg;
}

ModelConfig with_heads(ModelConfig cfg, Algorithm algo, int rem_heads) {
  cfg.policy_head = algo == Algorithm::BC || algo == Algorithm::IQL || algo == Algorithm::AWAC;
  cfg.value_head = algo == Algorithm::IQL;
  cfg.q_heads = algo == Algorithm::BC ? 0 : algo == Algorithm::REM ? rem_heads : 1;
  return cfg;
}

// ------------------------------------------------------------------ inputs

template <typename Scalar>
ModelInput<Scalar> make_input(const SequenceBatch& batch, const ModelConfig& cfg) {
  validate(cfg.render);
  const auto obs = static_cast<Index>(batch.obs_len());
  const auto bsz = static_cast<Index>(batch.batch_size);
  ModelInput<Scalar> in;
  in.batch = bsz;
  in.steps = obs;
  in.pixels.resize(static_cast<Index>(cfg.render.pixels()), obs * bsz);
  in.prev_actions.resize(static_cast<std::size_t>(obs * bsz));
  for (Index b = 0; b < bsz; ++b) {
    for (Index t = 0; t < obs; ++t) {
      const auto frame = static_cast<std::size_t>(b * obs + t);
      const Index col = t * bsz + b;
      render_screen_into<Scalar>(batch.tty_chars.data() + frame * kScreenCells,
                                 batch.tty_colors.data() + frame * kScreenCells, batch.tty_cursor[2 * frame],
                                 batch.tty_cursor[2 * frame + 1], cfg.render, in.pixels.col(col));
      in.prev_actions[static_cast<std::size_t>(col)] = batch.prev_actions[frame];
    }
  }
  return in;
}

template <typename Scalar>
ModelInput<Scalar> make_step_input(const std::uint8_t* chars, const std::int8_t* colors, int cursor_row,
                                   int cursor_col, int prev_action, const ModelConfig& cfg) {
  ModelInput<Scalar> in;
  in.batch = 1;
  in.steps = 1;
  in.pixels.resize(static_cast<Index>(cfg.render.pixels()), 1);
  render_screen_into<Scalar>(chars, colors, cursor_row, cursor_col, cfg.render, in.pixels.col(0));
  in.prev_actions = {prev_action};
  return in;
}

// ------------------------------------------------------------------ model

namespace {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// Feature map addressing: element (c, y, x) of frame n lives at
// base + n * frame + c * cs + y * ys + x * xs.
struct MapLayout {
  Index frame, cs, ys, xs;
};

MapLayout chw(const FeatureShape& s) {
  return {static_cast<Index>(s.size()), static_cast<Index>(s.height) * s.width, s.width, 1};
}
MapLayout hwc(const FeatureShape& s) {
  return {static_cast<Index>(s.size()), 1, static_cast<Index>(s.width) * s.channels, s.channels};
}

template <typename Scalar>
void im2col(const Scalar* src, const MapLayout& lay, const FeatureShape& in, const FeatureShape& out,
            const ConvLayer& k, Index frames, Matrix<Scalar>& cols) {
  const Index positions = static_cast<Index>(out.height) * out.width;
  cols.resize(static_cast<Index>(in.channels) * k.kernel_h * k.kernel_w, positions * frames);
  for (Index n = 0; n < frames; ++n) {
    const Scalar* base = src + n * lay.frame;
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        Scalar* col = cols.data() + (n * positions + oy * out.width + ox) * cols.rows();
        Index r = 0;
        for (int c = 0; c < in.channels; ++c) {
          for (int ky = 0; ky < k.kernel_h; ++ky) {
            const Scalar* row = base + c * lay.cs + (oy * k.stride_h + ky) * lay.ys + ox * k.stride_w * lay.xs;
            for (int kx = 0; kx < k.kernel_w; ++kx) col[r++] = row[kx * lay.xs];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, const MapLayout& lay, const FeatureShape& in, const FeatureShape& out,
            const ConvLayer& k, Index frames, Scalar* dst) {
  const Index positions = static_cast<Index>(out.height) * out.width;
  std::fill(dst, dst + frames * lay.frame, Scalar(0));
  for (Index n = 0; n < frames; ++n) {
    Scalar* base = dst + n * lay.frame;
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        const Scalar* col = cols.data() + (n * positions + oy * out.width + ox) * cols.rows();
        Index r = 0;
        for (int c = 0; c < in.channels; ++c) {
          for (int ky = 0; ky < k.kernel_h; ++ky) {
            Scalar* row = base + c * lay.cs + (oy * k.stride_h + ky) * lay.ys + ox * k.stride_w * lay.xs;
            for (int kx = 0; kx < k.kernel_w; ++kx) row[kx * lay.xs] += col[r++];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
class RecurrentModel<Scalar>::ForwardTape final : public Tape<Scalar> {
 public:
  Index batch = 0;
  Index steps = 0;
  std::vector<Matrix<Scalar>> conv_cols;
  std::vector<Matrix<Scalar>> conv_out;  // post-ReLU
  Matrix<Scalar> features;               // dense input
  Matrix<Scalar> encoded;                // post-ReLU dense output
  std::vector<Matrix<Scalar>> x;         // LSTM layer inputs
  std::vector<Matrix<Scalar>> gates;     // activated i, f, g, o
  std::vector<Matrix<Scalar>> cell;
  std::vector<Matrix<Scalar>> cell_tanh;
  std::vector<Matrix<Scalar>> hidden;
  std::vector<Matrix<Scalar>> h0, c0;
  std::vector<Matrix<Scalar>> dropout;  // empty when inactive
};

template <typename Scalar>
typename RecurrentModel<Scalar>::Block RecurrentModel<Scalar>::add_block(const std::string& name, Index rows,
                                                                         Index cols) {
  const Index offset = layout_.empty() ? 0 : layout_.back().second.offset + layout_.back().second.rows *
                                                                                 layout_.back().second.cols;
  Block b{offset, rows, cols};
  layout_.emplace_back(name, b);
  return b;
}

template <typename Scalar>
RecurrentModel<Scalar>::RecurrentModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  shapes_ = encoder_shapes(cfg_);
  const Index hid = cfg_.hidden;
  for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
    const auto& k = cfg_.conv[i];
    const Index fan_in = static_cast<Index>(shapes_[i].channels) * k.kernel_h * k.kernel_w;
    off_.conv_w.push_back(add_block("conv" + std::to_string(i) + ".w", k.channels, fan_in));
    off_.conv_b.push_back(add_block("conv" + std::to_string(i) + ".b", k.channels, 1));
  }
  off_.dense_w = add_block("dense.w", cfg_.encoder_dim, shapes_.back().size());
  off_.dense_b = add_block("dense.b", cfg_.encoder_dim, 1);
  lstm_input_ = cfg_.encoder_dim + (cfg_.condition_on_prev_action ? cfg_.actions : 0);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "lstm" + std::to_string(l);
    off_.w_ih.push_back(add_block(p + ".w_ih", 4 * hid, l == 0 ? lstm_input_ : hid));
    off_.w_hh.push_back(add_block(p + ".w_hh", 4 * hid, hid));
    off_.b.push_back(add_block(p + ".b", 4 * hid, 1));
  }
  if (cfg_.policy_head) {
    off_.policy_w = add_block("policy.w", cfg_.actions, hid);
    off_.policy_b = add_block("policy.b", cfg_.actions, 1);
  }
  if (cfg_.q_heads > 0) {
    off_.q_w = add_block("q.w", static_cast<Index>(cfg_.q_heads) * cfg_.actions, hid);
    off_.q_b = add_block("q.b", static_cast<Index>(cfg_.q_heads) * cfg_.actions, 1);
  }
  if (cfg_.value_head) {
    off_.value_w = add_block("value.w", 1, hid);
    off_.value_b = add_block("value.b", 1, 1);
  }
  const auto& last = layout_.back().second;
  params_.resize(last.offset + last.rows * last.cols);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), bias blocks use the fan-in of
  // their weight block.
  Rng rng(seed);
  Index fan_in = 1;
  for (const auto& [name, b] : layout_) {
    if (name.ends_with(".w") || name.ends_with(".w_ih")) fan_in = b.cols;
    if (name.ends_with(".w_hh")) fan_in = hid;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < b.rows * b.cols; ++i) {
      params_[b.offset + i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  }
}

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> RecurrentModel<Scalar>::view(const Block& b) const {
  return {params_.data() + b.offset, b.rows, b.cols};
}

template <typename Scalar>
Eigen::Map<Matrix<Scalar>> RecurrentModel<Scalar>::block(const std::string& name) {
  for (const auto& [n, b] : layout_) {
    if (n == name) return {params_.data() + b.offset, b.rows, b.cols};
  }
  throw Error(ErrorKind::InvalidArgument, "no parameter block '" + name + "'");
}

template <typename Scalar>
RecurrentState<Scalar> RecurrentModel<Scalar>::initial_state(Index batch) const {
  RecurrentState<Scalar> s;
  for (int l = 0; l < cfg_.layers; ++l) {
    s.h.push_back(Matrix<Scalar>::Zero(cfg_.hidden, batch));
    s.c.push_back(Matrix<Scalar>::Zero(cfg_.hidden, batch));
  }
  return s;
}

template <typename Scalar>
HeadOutputs<Scalar> RecurrentModel<Scalar>::forward(const ModelInput<Scalar>& input,
                                                    const RecurrentState<Scalar>& state,
                                                    RecurrentState<Scalar>* final_state,
                                                    std::unique_ptr<Tape<Scalar>>* tape, Rng* dropout_rng) const {
  const Index bsz = input.batch;
  const Index steps = input.steps;
  const Index n = bsz * steps;
  if (input.pixels.rows() != shapes_.front().size() || input.pixels.cols() != n) {
    throw Error(ErrorKind::InvalidArgument, "model input has the wrong shape");
  }
  if (static_cast<int>(state.h.size()) != cfg_.layers || static_cast<int>(state.c.size()) != cfg_.layers) {
    throw Error(ErrorKind::InvalidArgument, "recurrent state has the wrong layer count");
  }
  const Index hid = cfg_.hidden;
  auto t_owned = std::make_unique<ForwardTape>();
  ForwardTape& tp = *t_owned;
  tp.batch = bsz;
  tp.steps = steps;

  // Encoder.
  const Matrix<Scalar>* current = &input.pixels;
  for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
    const MapLayout lay = i == 0 ? chw(shapes_[0]) : hwc(shapes_[i]);
    Matrix<Scalar> cols;
    im2col(current->data(), lay, shapes_[i], shapes_[i + 1], cfg_.conv[i], n, cols);
    Matrix<Scalar> y = view(off_.conv_w[i]) * cols;
    y.colwise() += view(off_.conv_b[i]).col(0);
    y = y.cwiseMax(Scalar(0));
    tp.conv_cols.push_back(std::move(cols));
    tp.conv_out.push_back(std::move(y));
    current = &tp.conv_out.back();
  }
  if (cfg_.conv.empty()) {
    tp.features = input.pixels;
  } else {
    tp.features = Eigen::Map<const Matrix<Scalar>>(current->data(), shapes_.back().size(), n);
  }
  tp.encoded = view(off_.dense_w) * tp.features;
  tp.encoded.colwise() += view(off_.dense_b).col(0);
  tp.encoded = tp.encoded.cwiseMax(Scalar(0));

  Matrix<Scalar> x0(lstm_input_, n);
  x0.topRows(cfg_.encoder_dim) = tp.encoded;
  if (cfg_.condition_on_prev_action) {
    x0.bottomRows(cfg_.actions).setZero();
    for (Index j = 0; j < n; ++j) {
      const int a = input.prev_actions[static_cast<std::size_t>(j)];
      if (a < 0 || a >= cfg_.actions) throw Error(ErrorKind::InvalidArgument, "previous action out of range");
      x0(cfg_.encoder_dim + a, j) = Scalar(1);
    }
  }
  tp.x.push_back(std::move(x0));

  if (final_state) *final_state = RecurrentState<Scalar>{};
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto w_hh = view(off_.w_hh[l]);
    Matrix<Scalar> pre = view(off_.w_ih[l]) * tp.x[l];
    pre.colwise() += view(off_.b[l]).col(0);
    Matrix<Scalar> gates(4 * hid, n), cell(hid, n), cell_tanh(hid, n), hidden(hid, n);
    Matrix<Scalar> h = state.h[l];
    Matrix<Scalar> c = state.c[l];
    if (h.rows() != hid || h.cols() != bsz || c.rows() != hid || c.cols() != bsz) {
      throw Error(ErrorKind::InvalidArgument, "recurrent state has the wrong shape");
    }
    tp.h0.push_back(h);
    tp.c0.push_back(c);
    for (Index t = 0; t < steps; ++t) {
      auto g = gates.middleCols(t * bsz, bsz);
      g = pre.middleCols(t * bsz, bsz);
      g.noalias() += w_hh * h;
      g.topRows(2 * hid) = g.topRows(2 * hid).unaryExpr([](Scalar v) { return sigmoid(v); });
      g.middleRows(2 * hid, hid) = g.middleRows(2 * hid, hid).array().tanh();
      g.bottomRows(hid) = g.bottomRows(hid).unaryExpr([](Scalar v) { return sigmoid(v); });
      c = g.middleRows(hid, hid).cwiseProduct(c) + g.topRows(hid).cwiseProduct(g.middleRows(2 * hid, hid));
      cell.middleCols(t * bsz, bsz) = c;
      cell_tanh.middleCols(t * bsz, bsz) = c.array().tanh();
      h = g.bottomRows(hid).cwiseProduct(cell_tanh.middleCols(t * bsz, bsz));
      hidden.middleCols(t * bsz, bsz) = h;
    }
    if (final_state) {
      final_state->h.push_back(h);
      final_state->c.push_back(c);
    }
    if (l + 1 < cfg_.layers) {
      if (dropout_rng && cfg_.dropout > 0.0) {
        const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - cfg_.dropout));
        Matrix<Scalar> mask(hid, n);
        for (Index i = 0; i < mask.size(); ++i) {
          mask.data()[i] = uniform01(*dropout_rng) < cfg_.dropout ? Scalar(0) : keep;
        }
        tp.x.push_back(hidden.cwiseProduct(mask));
        tp.dropout.push_back(std::move(mask));
      } else {
        tp.x.push_back(hidden);
      }
    }
    tp.gates.push_back(std::move(gates));
    tp.cell.push_back(std::move(cell));
    tp.cell_tanh.push_back(std::move(cell_tanh));
    tp.hidden.push_back(std::move(hidden));
  }

  const Matrix<Scalar>& top = tp.hidden.back();
  HeadOutputs<Scalar> out;
  if (cfg_.policy_head) {
    out.policy = view(off_.policy_w) * top;
    out.policy.colwise() += view(off_.policy_b).col(0);
  }
  if (cfg_.q_heads > 0) {
    out.q = view(off_.q_w) * top;
    out.q.colwise() += view(off_.q_b).col(0);
  }
  if (cfg_.value_head) {
    out.value = view(off_.value_w) * top;
    out.value.colwise() += view(off_.value_b).col(0);
  }
  if (tape) *tape = std::move(t_owned);
  return out;
}

template <typename Scalar>
Vector<Scalar> RecurrentModel<Scalar>::backward(const Tape<Scalar>& tape_base, const HeadOutputs<Scalar>& grads) const {
  const auto& tp = static_cast<const ForwardTape&>(tape_base);
  const Index bsz = tp.batch;
  const Index steps = tp.steps;
  const Index n = bsz * steps;
  const Index hid = cfg_.hidden;
  Vector<Scalar> grad = Vector<Scalar>::Zero(params_.size());
  auto gview = [&](const Block& b) { return Eigen::Map<Matrix<Scalar>>(grad.data() + b.offset, b.rows, b.cols); };

  const Matrix<Scalar>& top = tp.hidden.back();
  Matrix<Scalar> dh = Matrix<Scalar>::Zero(hid, n);
  auto head = [&](const Matrix<Scalar>& d, const Block& w, const Block& b) {
    if (d.size() == 0) return;
    if (d.cols() != n || d.rows() != w.rows) throw Error(ErrorKind::InvalidArgument, "head gradient has the wrong shape");
    gview(w).noalias() += d * top.transpose();
    gview(b) += d.rowwise().sum();
    dh.noalias() += view(w).transpose() * d;
  };
  if (cfg_.policy_head) head(grads.policy, off_.policy_w, off_.policy_b);
  if (cfg_.q_heads > 0) head(grads.q, off_.q_w, off_.q_b);
  if (cfg_.value_head) head(grads.value, off_.value_w, off_.value_b);

  Matrix<Scalar> dgates(4 * hid, n);
  Matrix<Scalar> h_prev(hid, n);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const auto w_hh = view(off_.w_hh[l]);
    const auto& gates = tp.gates[l];
    const auto& cell = tp.cell[l];
    const auto& cell_tanh = tp.cell_tanh[l];
    Matrix<Scalar> dh_next = Matrix<Scalar>::Zero(hid, bsz);
    Matrix<Scalar> dc_next = Matrix<Scalar>::Zero(hid, bsz);
    for (Index t = steps - 1; t >= 0; --t) {
      const Index c0 = t * bsz;
      const auto i = gates.block(0, c0, hid, bsz).array();
      const auto f = gates.block(hid, c0, hid, bsz).array();
      const auto g = gates.block(2 * hid, c0, hid, bsz).array();
      const auto o = gates.block(3 * hid, c0, hid, bsz).array();
      const auto tc = cell_tanh.middleCols(c0, bsz).array();
      const Matrix<Scalar> c_prev = t == 0 ? tp.c0[l] : cell.middleCols(c0 - bsz, bsz);
      const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dht = dh.middleCols(c0, bsz).array() + dh_next.array();
      const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dc =
          dht * o * (Scalar(1) - tc * tc) + dc_next.array();
      dgates.block(0, c0, hid, bsz) = (dc * g * i * (Scalar(1) - i)).matrix();
      dgates.block(hid, c0, hid, bsz) = (dc * c_prev.array() * f * (Scalar(1) - f)).matrix();
      dgates.block(2 * hid, c0, hid, bsz) = (dc * i * (Scalar(1) - g * g)).matrix();
      dgates.block(3 * hid, c0, hid, bsz) = (dht * tc * o * (Scalar(1) - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next.noalias() = w_hh.transpose() * dgates.middleCols(c0, bsz);
      h_prev.middleCols(c0, bsz) = t == 0 ? tp.h0[l] : tp.hidden[l].middleCols(c0 - bsz, bsz);
    }
    gview(off_.w_ih[l]).noalias() += dgates * tp.x[l].transpose();
    gview(off_.w_hh[l]).noalias() += dgates * h_prev.transpose();
    gview(off_.b[l]) += dgates.rowwise().sum();
    Matrix<Scalar> dx = view(off_.w_ih[l]).transpose() * dgates;
    if (l > 0) {
      dh = tp.dropout.empty() ? dx : dx.cwiseProduct(tp.dropout[l - 1]);
    } else {
      dh = dx.topRows(cfg_.encoder_dim);
    }
  }

  // dh now holds d(encoded).
  Matrix<Scalar> dz = (tp.encoded.array() > Scalar(0)).select(dh, Scalar(0));
  gview(off_.dense_w).noalias() += dz * tp.features.transpose();
  gview(off_.dense_b) += dz.rowwise().sum();
  if (cfg_.conv.empty()) return grad;

  const auto& last = shapes_.back();
  Matrix<Scalar> dy(last.channels, static_cast<Index>(last.height) * last.width * n);
  Eigen::Map<Matrix<Scalar>>(dy.data(), last.size(), n).noalias() = view(off_.dense_w).transpose() * dz;
  for (int i = static_cast<int>(cfg_.conv.size()) - 1; i >= 0; --i) {
    const auto& y = tp.conv_out[i];
    dy = (y.array() > Scalar(0)).select(dy, Scalar(0));
    gview(off_.conv_w[i]).noalias() += dy * tp.conv_cols[i].transpose();
    gview(off_.conv_b[i]) += dy.rowwise().sum();
    if (i == 0) break;
    const Matrix<Scalar> dcols = view(off_.conv_w[i]).transpose() * dy;
    const auto& in = shapes_[i];
    Matrix<Scalar> dprev(in.channels, static_cast<Index>(in.height) * in.width * n);
    col2im(dcols, hwc(in), in, shapes_[i + 1], cfg_.conv[i], n, dprev.data());
    dy = std::move(dprev);
  }
  return grad;
}

template <typename Scalar>
std::unique_ptr<ModelContract<Scalar>> RecurrentModel<Scalar>::clone() const {
  return std::make_unique<RecurrentModel<Scalar>>(*this);
}

#define TTYRL_MODEL(S)                                                                                           \
  template ModelInput<S> make_input<S>(const SequenceBatch&, const ModelConfig&);                                \
  template ModelInput<S> make_step_input<S>(const std::uint8_t*, const std::int8_t*, int, int, int,              \
                                            const ModelConfig&);                                                 \
  template class RecurrentModel<S>;

TTYRL_MODEL(float)
TTYRL_MODEL(double)
TTYRL_MODEL(long double)

}  // namespace ttyrl
