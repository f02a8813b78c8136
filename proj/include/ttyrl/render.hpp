#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ttyrl/catalog.hpp"
#include "ttyrl/loader.hpp"

namespace ttyrl {

inline constexpr int kFontWidth = 4;
inline constexpr int kFontHeight = 6;
inline constexpr int kImageChannels = 3;

// Lit pixel of the embedded font; bytes outside 32..127 are blank.
bool font_pixel(std::uint8_t ch, int row, int col);

struct Rgb {
  float r, g, b;
};

const std::array<Rgb, 16>& default_palette();

struct RenderSpec {
  int glyph_width = kFontWidth;
  int glyph_height = kFontHeight;
  // Cell window centred on the cursor; 0 means the full screen.
  int crop_rows = 0;
  int crop_cols = 0;
  std::array<Rgb, 16> palette = default_palette();
  bool cursor_highlight = true;

  int rows() const noexcept { return crop_rows ? crop_rows : kScreenRows; }
  int cols() const noexcept { return crop_cols ? crop_cols : kScreenCols; }
  int height() const noexcept { return rows() * glyph_height; }
  int width() const noexcept { return cols() * glyph_width; }
  std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(kImageChannels) * static_cast<std::size_t>(height()) *
           static_cast<std::size_t>(width());
  }
};

// Throws InvalidArgument on non-positive glyphs or even crop dims.
void validate(const RenderSpec& spec);

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// [channels, height, width], row-major within a channel plane.
template <typename Scalar>
struct Image {
  int channels = kImageChannels;
  int height = 0;
  int width = 0;
  Vector<Scalar> data;

  Scalar at(int c, int y, int x) const { return data[(c * height + y) * width + x]; }
};

// Paints one screen into `out` (size spec.pixels()).
template <typename Scalar, typename Derived>
void render_screen_into(const std::uint8_t* chars, const std::int8_t* colors, int cursor_row, int cursor_col,
                        const RenderSpec& spec, Eigen::MatrixBase<Derived> const& out_const) {
  auto& out = const_cast<Eigen::MatrixBase<Derived>&>(out_const);
  const int rows = spec.rows();
  const int cols = spec.cols();
  const int gh = spec.glyph_height;
  const int gw = spec.glyph_width;
  const int height = rows * gh;
  const int width = cols * gw;
  const int plane = height * width;
  const int top = spec.crop_rows ? cursor_row - spec.crop_rows / 2 : 0;
  const int left = spec.crop_cols ? cursor_col - spec.crop_cols / 2 : 0;
  out.setZero();

  for (int cr = 0; cr < rows; ++cr) {
    const int sr = top + cr;
    if (sr < 0 || sr >= kScreenRows) continue;
    for (int cc = 0; cc < cols; ++cc) {
      const int sc = left + cc;
      if (sc < 0 || sc >= kScreenCols) continue;
      const int cell = sr * kScreenCols + sc;
      const std::uint8_t ch = chars[cell];
      const Rgb fg = spec.palette[static_cast<std::uint8_t>(colors[cell]) & 15];
      const bool inverted = spec.cursor_highlight && sr == cursor_row && sc == cursor_col;
      for (int py = 0; py < gh; ++py) {
        const int font_row = py * kFontHeight / gh;
        for (int px = 0; px < gw; ++px) {
          const bool lit = font_pixel(ch, font_row, px * kFontWidth / gw);
          // Background is black; inversion swaps glyph and background.
          if (lit == inverted) continue;
          const int offset = (cr * gh + py) * width + cc * gw + px;
          out(offset) = static_cast<Scalar>(fg.r);
          out(plane + offset) = static_cast<Scalar>(fg.g);
          out(2 * plane + offset) = static_cast<Scalar>(fg.b);
        }
      }
    }
  }
}

template <typename Scalar = float>
Image<Scalar> render_screen(const std::uint8_t* chars, const std::int8_t* colors, int cursor_row, int cursor_col,
                            const RenderSpec& spec) {
  validate(spec);
  Image<Scalar> image;
  image.height = spec.height();
  image.width = spec.width();
  image.data.resize(static_cast<Eigen::Index>(spec.pixels()));
  render_screen_into<Scalar>(chars, colors, cursor_row, cursor_col, spec, image.data);
  return image;
}

// One column per observation, ordered [B, L+1] (b-major), each column a
// flattened [channels, height, width] image.
template <typename Scalar = float>
Matrix<Scalar> render_batch(const SequenceBatch& batch, const RenderSpec& spec) {
  validate(spec);
  const std::size_t count = batch.batch_size * batch.obs_len();
  Matrix<Scalar> out(static_cast<Eigen::Index>(spec.pixels()), static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    render_screen_into<Scalar>(batch.tty_chars.data() + i * kScreenCells, batch.tty_colors.data() + i * kScreenCells,
                               batch.tty_cursor[2 * i], batch.tty_cursor[2 * i + 1], spec,
                               out.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image<float>& image);

}  // namespace ttyrl
