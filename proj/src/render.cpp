#include "ttyrl/render.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "ttyrl/errors.hpp"

namespace ttyrl {

namespace {

// 4x6 cells for ASCII 32..127; each row is a nibble, bit 3 = leftmost column.
constexpr std::uint8_t kFont[96][kFontHeight] = {
    {0x0, 0x0, 0x0, 0x0, 0x0, 0x0},  // ' '
    {0x4, 0x4, 0x4, 0x0, 0x4, 0x0},  // '!'
    {0xA, 0xA, 0x0, 0x0, 0x0, 0x0},  // '"'
    {0xA, 0xE, 0xA, 0xE, 0xA, 0x0},  // '#'
    {0x6, 0xC, 0x4, 0x6, 0xC, 0x0},  // '$'
    {0x8, 0x2, 0x4, 0x8, 0x2, 0x0},  // '%'
    {0x4, 0xA, 0x4, 0xA, 0x6, 0x0},  // '&'
    {0x4, 0x4, 0x0, 0x0, 0x0, 0x0},  // "'"
    {0x2, 0x4, 0x4, 0x4, 0x2, 0x0},  // '('
    {0x8, 0x4, 0x4, 0x4, 0x8, 0x0},  // ')'
    {0x0, 0xA, 0x4, 0xA, 0x0, 0x0},  // '*'
    {0x0, 0x4, 0xE, 0x4, 0x0, 0x0},  // '+'
    {0x0, 0x0, 0x0, 0x4, 0x8, 0x0},  // ','
    {0x0, 0x0, 0xE, 0x0, 0x0, 0x0},  // '-'
    {0x0, 0x0, 0x0, 0x0, 0x4, 0x0},  // '.'
    {0x2, 0x2, 0x4, 0x8, 0x8, 0x0},  // '/'
    {0x6, 0xA, 0xA, 0xA, 0xC, 0x0},  // '0'
    {0x4, 0xC, 0x4, 0x4, 0x4, 0x0},  // '1'
    {0xC, 0x2, 0x4, 0x8, 0xE, 0x0},  // '2'
    {0xC, 0x2, 0x4, 0x2, 0xC, 0x0},  // '3'
    {0xA, 0xA, 0xE, 0x2, 0x2, 0x0},  // '4'
    {0xE, 0x8, 0xC, 0x2, 0xC, 0x0},  // '5'
    {0x6, 0x8, 0xE, 0xA, 0xE, 0x0},  // '6'
    {0xE, 0x2, 0x4, 0x8, 0x8, 0x0},  // '7'
    {0xE, 0xA, 0xE, 0xA, 0xE, 0x0},  // '8'
    {0xE, 0xA, 0xE, 0x2, 0xC, 0x0},  // '9'
    {0x0, 0x4, 0x0, 0x4, 0x0, 0x0},  // ':'
    {0x0, 0x4, 0x0, 0x4, 0x8, 0x0},  // ';'
    {0x2, 0x4, 0x8, 0x4, 0x2, 0x0},  // '<'
    {0x0, 0xE, 0x0, 0xE, 0x0, 0x0},  // '='
    {0x8, 0x4, 0x2, 0x4, 0x8, 0x0},  // '>'
    {0xE, 0x2, 0x4, 0x0, 0x4, 0x0},  // '?'
    {0x4, 0xA, 0xE, 0x8, 0x6, 0x0},  // '@'
    {0x4, 0xA, 0xE, 0xA, 0xA, 0x0},  // 'A'
    {0xC, 0xA, 0xC, 0xA, 0xC, 0x0},  // 'B'
    {0x6, 0x8, 0x8, 0x8, 0x6, 0x0},  // 'C'
    {0xC, 0xA, 0xA, 0xA, 0xC, 0x0},  // 'D'
    {0xE, 0x8, 0xE, 0x8, 0xE, 0x0},  // 'E'
    {0xE, 0x8, 0xE, 0x8, 0x8, 0x0},  // 'F'
    {0x6, 0x8, 0xA, 0xA, 0x6, 0x0},  // 'G'
    {0xA, 0xA, 0xE, 0xA, 0xA, 0x0},  // 'H'
    {0xE, 0x4, 0x4, 0x4, 0xE, 0x0},  // 'I'
    {0x2, 0x2, 0x2, 0xA, 0x4, 0x0},  // 'J'
    {0xA, 0xA, 0xC, 0xA, 0xA, 0x0},  // 'K'
    {0x8, 0x8, 0x8, 0x8, 0xE, 0x0},  // 'L'
    {0xA, 0xE, 0xE, 0xA, 0xA, 0x0},  // 'M'
    {0xA, 0xE, 0xE, 0xE, 0xA, 0x0},  // 'N'
    {0x4, 0xA, 0xA, 0xA, 0x4, 0x0},  // 'O'
    {0xC, 0xA, 0xC, 0x8, 0x8, 0x0},  // 'P'
    {0x4, 0xA, 0xA, 0xE, 0x6, 0x0},  // 'Q'
    {0xC, 0xA, 0xE, 0xC, 0xA, 0x0},  // 'R'
    {0x6, 0x8, 0x4, 0x2, 0xC, 0x0},  // 'S'
    {0xE, 0x4, 0x4, 0x4, 0x4, 0x0},  // 'T'
    {0xA, 0xA, 0xA, 0xA, 0x6, 0x0},  // 'U'
    {0xA, 0xA, 0xA, 0x4, 0x4, 0x0},  // 'V'
    {0xA, 0xA, 0xE, 0xE, 0xA, 0x0},  // 'W'
    {0xA, 0xA, 0x4, 0xA, 0xA, 0x0},  // 'X'
    {0xA, 0xA, 0x4, 0x4, 0x4, 0x0},  // 'Y'
    {0xE, 0x2, 0x4, 0x8, 0xE, 0x0},  // 'Z'
    {0xE, 0x8, 0x8, 0x8, 0xE, 0x0},  // '['
    {0x0, 0x8, 0x4, 0x2, 0x0, 0x0},  // '\\'
    {0xE, 0x2, 0x2, 0x2, 0xE, 0x0},  // ']'
    {0x4, 0xA, 0x0, 0x0, 0x0, 0x0},  // '^'
    {0x0, 0x0, 0x0, 0x0, 0xE, 0x0},  // '_'
    {0x8, 0x4, 0x0, 0x0, 0x0, 0x0},  // '`'
    {0x0, 0xC, 0x6, 0xA, 0xE, 0x0},  // 'a'
    {0x8, 0xC, 0xA, 0xA, 0xC, 0x0},  // 'b'
    {0x0, 0x6, 0x8, 0x8, 0x6, 0x0},  // 'c'
    {0x2, 0x6, 0xA, 0xA, 0x6, 0x0},  // 'd'
    {0x0, 0x6, 0xA, 0xC, 0x6, 0x0},  // 'e'
    {0x2, 0x4, 0xE, 0x4, 0x4, 0x0},  // 'f'
    {0x0, 0x6, 0xA, 0x6, 0xC, 0x0},  // 'g'
    {0x8, 0xC, 0xA, 0xA, 0xA, 0x0},  // 'h'
    {0x4, 0x0, 0x4, 0x4, 0x4, 0x0},  // 'i'
    {0x2, 0x0, 0x2, 0xA, 0x4, 0x0},  // 'j'
    {0x8, 0xA, 0xC, 0xC, 0xA, 0x0},  // 'k'
    {0xC, 0x4, 0x4, 0x4, 0xE, 0x0},  // 'l'
    {0x0, 0xE, 0xE, 0xE, 0xA, 0x0},  // 'm'
    {0x0, 0xC, 0xA, 0xA, 0xA, 0x0},  // 'n'
    {0x0, 0x4, 0xA, 0xA, 0x4, 0x0},  // 'o'
    {0x0, 0xC, 0xA, 0xC, 0x8, 0x0},  // 'p'
    {0x0, 0x6, 0xA, 0x6, 0x2, 0x0},  // 'q'
    {0x0, 0x6, 0x8, 0x8, 0x8, 0x0},  // 'r'
    {0x0, 0x6, 0xC, 0x6, 0xC, 0x0},  // 's'
    {0x4, 0xE, 0x4, 0x4, 0x6, 0x0},  // 't'
    {0x0, 0xA, 0xA, 0xA, 0x6, 0x0},  // 'u'
    {0x0, 0xA, 0xA, 0x4, 0x4, 0x0},  // 'v'
    {0x0, 0xA, 0xE, 0xE, 0x4, 0x0},  // 'w'
    {0x0, 0xA, 0x4, 0x4, 0xA, 0x0},  // 'x'
    {0x0, 0xA, 0xA, 0x6, 0xC, 0x0},  // 'y'
    {0x0, 0xE, 0x6, 0xC, 0xE, 0x0},  // 'z'
    {0x6, 0x4, 0xC, 0x4, 0x6, 0x0},  // '{'
    {0x4, 0x4, 0x4, 0x4, 0x4, 0x0},  // '|'
    {0xC, 0x4, 0x6, 0x4, 0xC, 0x0},  // '}'
    {0x0, 0x6, 0xC, 0x0, 0x0, 0x0},  // '~'
    {0xA, 0x4, 0xA, 0x4, 0xA, 0x0},  // '\x7f'
};

}  // namespace

bool font_pixel(std::uint8_t ch, int row, int col) {
  if (ch < 32 || ch > 127 || row < 0 || row >= kFontHeight || col < 0 || col >= kFontWidth) return false;
  return (kFont[ch - 32][row] >> (kFontWidth - 1 - col)) & 1;
}

const std::array<Rgb, 16>& default_palette() {
  static const std::array<Rgb, 16> palette = {{
      {0.00f, 0.00f, 0.00f},  // black
      {0.67f, 0.00f, 0.00f},  // red
      {0.00f, 0.67f, 0.00f},  // green
      {0.67f, 0.33f, 0.00f},  // brown
      {0.00f, 0.00f, 0.67f},  // blue
      {0.67f, 0.00f, 0.67f},  // magenta
      {0.00f, 0.67f, 0.67f},  // cyan
      {0.67f, 0.67f, 0.67f},  // gray
      {0.33f, 0.33f, 0.33f},  // no color
      {1.00f, 0.50f, 0.00f},  // orange
      {0.33f, 1.00f, 0.33f},  // bright green
      {1.00f, 1.00f, 0.33f},  // yellow
      {0.33f, 0.33f, 1.00f},  // bright blue
      {1.00f, 0.33f, 1.00f},  // bright magenta
      {0.33f, 1.00f, 1.00f},  // bright cyan
      {1.00f, 1.00f, 1.00f},  // white
  }};
  return palette;
}

void validate(const RenderSpec& spec) {
  if (spec.glyph_width < 1 || spec.glyph_height < 1) throw Error(ErrorKind::InvalidArgument, "glyph dims must be >= 1");
  if (spec.crop_rows < 0 || spec.crop_cols < 0) throw Error(ErrorKind::InvalidArgument, "crop dims must be >= 0");
  if ((spec.crop_rows != 0 && spec.crop_rows % 2 == 0) || (spec.crop_cols != 0 && spec.crop_cols % 2 == 0)) {
    throw Error(ErrorKind::InvalidArgument, "crop dims must be odd");
  }
}

void write_png(const std::filesystem::path& path, const Image<float>& image) {
  if (image.channels != 3) throw Error(ErrorKind::InvalidArgument, "PNG output needs 3 channels");
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error(ErrorKind::IoError, "cannot create '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IoError, "libpng write failed for '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int plane = image.height * image.width;
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = image.data[c * plane + y * image.width + x];
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ttyrl
