#include "visor/image/codec.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

// jpeglib.h needs size_t and FILE declared first.
#include <jpeglib.h>

#include "visor/common/error.hpp"
#include "visor/image/tiled.hpp"

namespace visor::image {

std::optional<ImageFormat> parse_format(std::string_view name) noexcept {
  if (name == "png") return ImageFormat::png;
  if (name == "jpg" || name == "jpeg") return ImageFormat::jpeg;
  if (name == "tiled" || name == "tdb") return ImageFormat::tiled;
  return std::nullopt;
}

std::string_view format_name(ImageFormat f) noexcept {
  switch (f) {
    case ImageFormat::png: return "png";
    case ImageFormat::jpeg: return "jpg";
    case ImageFormat::tiled: return "tiled";
  }
  return "?";
}

std::optional<ImageFormat> sniff_format(ByteView d) noexcept {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (d.size() >= 8 && std::memcmp(d.data(), png_sig, 8) == 0) return ImageFormat::png;
  if (d.size() >= 3 && d[0] == 0xFF && d[1] == 0xD8 && d[2] == 0xFF) return ImageFormat::jpeg;
  if (d.size() >= 4 && std::memcmp(d.data(), "VDTI", 4) == 0) return ImageFormat::tiled;
  return std::nullopt;
}

// --- PNG (libpng simplified API) -------------------------------------------

Bytes encode_png(const Image& img) {
  validate(img);
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = img.width;
  pi.height = img.height;
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  auto stride = static_cast<png_int_32>(img.row_bytes());
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), stride, nullptr))
    throw Error(Errc::internal, std::string("png encode: ") + pi.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), stride, nullptr))
    throw Error(Errc::internal, std::string("png encode: ") + pi.message);
  out.resize(size);
  return out;
}

Image decode_png(ByteView data) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, data.data(), data.size()))
    throw Error(Errc::decode_error, std::string("png decode: ") + pi.message);
  Image img;
  img.width = pi.width;
  img.height = pi.height;
  img.channels = (pi.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (img.width == 0 || img.height == 0 || img.byte_size() > (std::size_t{1} << 31)) {
    png_image_free(&pi);
    throw Error(Errc::decode_error, "png decode: unsupported dimensions");
  }
  img.pixels.resize(img.byte_size());
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&pi, &background, img.pixels.data(), static_cast<png_int_32>(img.row_bytes()),
                             nullptr))
    throw Error(Errc::decode_error, std::string("png decode: ") + pi.message);
  return img;
}

// --- JPEG (libjpeg) ----------------------------------------------------------
//
// libjpeg reports errors by longjmp; the functions below keep only trivially
// destructible locals alive across setjmp.

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void on_jpeg_message(j_common_ptr, int) {}

// Returns a malloc'd buffer or nullptr with `message` filled in.
unsigned char* jpeg_decode_raw(const unsigned char* data, unsigned long size, unsigned* w, unsigned* h, int* ch,
                               char* message) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  unsigned char* volatile buf = nullptr;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  err.mgr.emit_message = on_jpeg_message;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    std::free(buf);
    return nullptr;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, size);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *w = cinfo.output_width;
  *h = cinfo.output_height;
  *ch = cinfo.output_components;
  std::size_t stride = static_cast<std::size_t>(*w) * static_cast<std::size_t>(*ch);
  buf = static_cast<unsigned char*>(std::malloc(stride * *h));
  if (!buf) {
    std::strncpy(message, "out of memory", JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return nullptr;
  }
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf + stride * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return buf;
}

unsigned char* jpeg_encode_raw(const unsigned char* pixels, unsigned w, unsigned h, int ch, int quality,
                               unsigned long* out_size, char* message) {
  jpeg_compress_struct cinfo;
  JpegError err;
  unsigned char* volatile out = nullptr;
  unsigned long size = 0;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  err.mgr.emit_message = on_jpeg_message;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_compress(&cinfo);
    std::free(out);
    return nullptr;
  }
  jpeg_create_compress(&cinfo);
  unsigned char* dest = nullptr;
  jpeg_mem_dest(&cinfo, &dest, &size);
  cinfo.image_width = w;
  cinfo.image_height = h;
  cinfo.input_components = ch;
  cinfo.in_color_space = ch == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::size_t stride = static_cast<std::size_t>(w) * static_cast<std::size_t>(ch);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto row = const_cast<JSAMPROW>(pixels + stride * cinfo.next_scanline);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  out = dest;
  jpeg_destroy_compress(&cinfo);
  *out_size = size;
  return out;
}

}  // namespace

Bytes encode_jpeg(const Image& img, int quality) {
  validate(img);
  char message[JMSG_LENGTH_MAX] = {};
  unsigned long size = 0;
  unsigned char* buf = jpeg_encode_raw(img.pixels.data(), img.width, img.height, img.channels, quality, &size, message);
  if (!buf) throw Error(Errc::internal, std::string("jpeg encode: ") + message);
  Bytes out(buf, buf + size);
  std::free(buf);
  return out;
}

Image decode_jpeg(ByteView data) {
  char message[JMSG_LENGTH_MAX] = {};
  unsigned w = 0, h = 0;
  int ch = 0;
  unsigned char* buf = jpeg_decode_raw(data.data(), data.size(), &w, &h, &ch, message);
  if (!buf) throw Error(Errc::decode_error, std::string("jpeg decode: ") + message);
  Image img;
  img.width = w;
  img.height = h;
  img.channels = static_cast<std::uint8_t>(ch);
  img.pixels.assign(buf, buf + img.byte_size());
  std::free(buf);
  if (ch != 1 && ch != 3) throw Error(Errc::decode_error, "jpeg decode: unsupported component count");
  return img;
}

// ----------------------------------------------------------------------------

Bytes encode(const Image& img, ImageFormat format, std::uint16_t tile_size) {
  switch (format) {
    case ImageFormat::png: return encode_png(img);
    case ImageFormat::jpeg: return encode_jpeg(img);
    case ImageFormat::tiled: return encode_tiled(img, tile_size);
  }
  throw Error(Errc::unsupported_format, "unknown image format");
}

Image decode(ByteView data) {
  auto f = sniff_format(data);
  if (!f) throw Error(Errc::decode_error, "unrecognized image encoding");
  switch (*f) {
    case ImageFormat::png: return decode_png(data);
    case ImageFormat::jpeg: return decode_jpeg(data);
    case ImageFormat::tiled:
      try {
        return decode_tiled(data);
      } catch (const Error& e) {
        throw Error(Errc::decode_error, e.what());
      }
  }
  throw Error(Errc::decode_error, "unrecognized image encoding");
}

}  // namespace visor::image
