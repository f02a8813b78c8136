#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ttyrl/loader.hpp"
#include "ttyrl/random.hpp"
#include "ttyrl/render.hpp"

namespace ttyrl {

enum class Algorithm : std::uint8_t { BC, CQL, IQL, AWAC, REM };

std::string_view to_string(Algorithm algo);
Algorithm parse_algorithm(std::string_view text);

struct ConvLayer {
  int channels = 16;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride_h = 1;
  int stride_w = 1;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct ModelConfig {
  RenderSpec render;
  std::vector<ConvLayer> conv;
  int encoder_dim = 512;
  int hidden = 2048;
  int layers = 2;
  double dropout = 0.0;
  int actions = kDefaultActionCount;
  bool condition_on_prev_action = true;
  bool policy_head = true;
  bool value_head = false;
  // Q ensemble size; 0 disables the Q head.
  int q_heads = 0;

  void validate() const;
  // key = value lines; stable across runs, used for checkpoint digests.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
};

// "channels:kh:kw[:sh:sw]" items separated by ';'.
std::vector<ConvLayer> parse_conv_stack(std::string_view text);

// Head layout each algorithm needs.
ModelConfig with_heads(ModelConfig cfg, Algorithm algo, int rem_heads);

// Spatial shapes through the encoder: (height, width, channels) per stage,
// starting with the rendered image.
struct FeatureShape {
  int height;
  int width;
  int channels;
  int size() const noexcept { return height * width * channels; }
};
std::vector<FeatureShape> encoder_shapes(const ModelConfig& cfg);

template <typename Scalar>
struct ModelInput {
  // One column per frame, ordered t * batch + b.
  Matrix<Scalar> pixels;
  std::vector<int> prev_actions;
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;
};

// Renders the observation axis of a batch (all L+1 frames) time-major.
template <typename Scalar>
ModelInput<Scalar> make_input(const SequenceBatch& batch, const ModelConfig& cfg);

template <typename Scalar>
ModelInput<Scalar> make_step_input(const std::uint8_t* chars, const std::int8_t* colors, int cursor_row,
                                   int cursor_col, int prev_action, const ModelConfig& cfg);

template <typename Scalar>
struct RecurrentState {
  std::vector<Matrix<Scalar>> h;
  std::vector<Matrix<Scalar>> c;
};

template <typename Scalar>
struct HeadOutputs {
  Matrix<Scalar> policy;  // [A, N]
  Matrix<Scalar> q;       // [K*A, N], head k occupies rows k*A .. k*A+A-1
  Matrix<Scalar> value;   // [1, N]
};

template <typename Scalar>
class Tape {
 public:
  virtual ~Tape() = default;
};

template <typename Scalar>
class ModelContract {
 public:
  virtual ~ModelContract() = default;
  virtual const ModelConfig& config() const = 0;
  virtual Vector<Scalar>& parameters() = 0;
  virtual const Vector<Scalar>& parameters() const = 0;
  virtual RecurrentState<Scalar> initial_state(Eigen::Index batch) const = 0;
  // Dropout is active only when dropout_rng is given. The tape, when
  // requested, keeps what backward() needs.
  virtual HeadOutputs<Scalar> forward(const ModelInput<Scalar>& input, const RecurrentState<Scalar>& state,
                                      RecurrentState<Scalar>* final_state, std::unique_ptr<Tape<Scalar>>* tape,
                                      Rng* dropout_rng = nullptr) const = 0;
  // Gradient of sum(grads .* outputs) with respect to parameters().
  virtual Vector<Scalar> backward(const Tape<Scalar>& tape, const HeadOutputs<Scalar>& grads) const = 0;
  virtual std::unique_ptr<ModelContract> clone() const = 0;
};

// Render -> conv stack (ReLU) -> dense (ReLU) -> [.., onehot(prev action)]
// -> stacked LSTM -> linear heads.
template <typename Scalar>
class RecurrentModel final : public ModelContract<Scalar> {
 public:
  RecurrentModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const override { return cfg_; }
  Vector<Scalar>& parameters() override { return params_; }
  const Vector<Scalar>& parameters() const override { return params_; }
  RecurrentState<Scalar> initial_state(Eigen::Index batch) const override;
  HeadOutputs<Scalar> forward(const ModelInput<Scalar>& input, const RecurrentState<Scalar>& state,
                              RecurrentState<Scalar>* final_state, std::unique_ptr<Tape<Scalar>>* tape,
                              Rng* dropout_rng = nullptr) const override;
  Vector<Scalar> backward(const Tape<Scalar>& tape, const HeadOutputs<Scalar>& grads) const override;
  std::unique_ptr<ModelContract<Scalar>> clone() const override;

  Eigen::Index parameter_count() const noexcept { return params_.size(); }

  struct Block {
    Eigen::Index offset;
    Eigen::Index rows;
    Eigen::Index cols;
  };
  // Named parameter blocks, e.g. "conv0.w", "lstm1.w_hh", "q.b".
  const std::vector<std::pair<std::string, Block>>& layout() const noexcept { return layout_; }
  Eigen::Map<Matrix<Scalar>> block(const std::string& name);

 private:
  struct Offsets {
    std::vector<Block> conv_w, conv_b;
    Block dense_w, dense_b;
    std::vector<Block> w_ih, w_hh, b;
    Block policy_w{}, policy_b{}, q_w{}, q_b{}, value_w{}, value_b{};
  };
  class ForwardTape;

  Block add_block(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Eigen::Map<const Matrix<Scalar>> view(const Block& b) const;

  ModelConfig cfg_;
  std::vector<FeatureShape> shapes_;
  std::vector<std::pair<std::string, Block>> layout_;
  Offsets off_;
  Eigen::Index lstm_input_ = 0;
  Vector<Scalar> params_;
};

}  // namespace ttyrl
