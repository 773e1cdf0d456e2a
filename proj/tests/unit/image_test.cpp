#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/image/codec.hpp"
#include "visor/image/ops.hpp"
#include "visor/image/tiled.hpp"
#include "visor/image/visual_store.hpp"

using namespace visor;
using namespace visor::image;
using visor::testing::TempDir;

namespace {

Image gray(std::uint32_t w, std::uint32_t h, std::vector<std::uint8_t> px) {
  Image img{w, h, 1, std::move(px)};
  validate(img);
  return img;
}

Errc error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::internal;
}

}  // namespace

TEST_CASE("threshold zeroes samples below the cutoff") {
  auto out = threshold(gray(4, 1, {10, 100, 200, 255}), 150);
  CHECK(out.pixels == std::vector<std::uint8_t>{0, 0, 200, 255});
  CHECK(threshold(gray(2, 1, {0, 255}), 0).pixels == std::vector<std::uint8_t>{0, 255});
  CHECK(threshold(gray(2, 1, {254, 255}), 255).pixels == std::vector<std::uint8_t>{0, 255});
}

TEST_CASE("threshold is idempotent") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    auto img = visor::testing::random_image(rng, 16, 16, 1);
    auto t = static_cast<std::uint8_t>(rng() & 0xFF);
    auto once = threshold(img, t);
    CHECK(threshold(once, t) == once);
    CHECK(once == oracle::threshold(img, t));
  }
}

TEST_CASE("resize goldens") {
  // Box average of 0 and 255 is 127.5; half to even gives 128.
  CHECK(resize(gray(2, 2, {0, 255, 0, 255}), 1, 1).pixels == std::vector<std::uint8_t>{128});
  // 1 and 2 average to 1.5 -> 2; 3 and 4 -> 3.5 -> 4.
  CHECK(resize(gray(4, 1, {1, 2, 3, 4}), 2, 1).pixels == std::vector<std::uint8_t>{2, 4});
  // Mean 2.5 rounds to 2.
  CHECK(resize(gray(2, 2, {2, 3, 2, 3}), 1, 1).pixels == std::vector<std::uint8_t>{2});
  // Bilinear upsample with pixel-centre alignment: centres at 0.25 and 0.75
  // of the gap between the two source pixels.
  CHECK(resize(gray(2, 1, {0, 100}), 4, 1).pixels == std::vector<std::uint8_t>{0, 25, 75, 100});
  auto img = visor::testing::gradient_image(7, 5, 3);
  CHECK(resize(img, 7, 5) == img);
}

TEST_CASE("integer downsampling matches the box oracle") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 30; ++i) {
    std::uint32_t fx = 1 + rng() % 4, fy = 1 + rng() % 4, w = 1 + rng() % 20, h = 1 + rng() % 20;
    std::uint8_t ch = rng() % 2 ? 3 : 1;
    auto img = visor::testing::random_image(rng, w * fx, h * fy, ch);
    CHECK(resize(img, w, h) == oracle::box_downsample(img, w, h));
  }
}

TEST_CASE("operation order matters") {
  auto img = visor::testing::gradient_image(64, 64);
  std::vector<TransformOp> a{Threshold{100}, Resize{32, 32}};
  std::vector<TransformOp> b{Resize{32, 32}, Threshold{100}};
  auto ta = apply_ops(img, a), tb = apply_ops(img, b);
  CHECK(ta == oracle::box_downsample(oracle::threshold(img, 100), 32, 32));
  CHECK(tb == oracle::threshold(oracle::box_downsample(img, 32, 32), 100));
  CHECK(ta != tb);
}

TEST_CASE("crop") {
  auto img = visor::testing::gradient_image(9, 6, 3);
  CHECK(crop(img, 0, 0, 9, 6) == img);
  auto first = crop(img, 0, 0, 1, 1);
  CHECK(first.pixels == std::vector<std::uint8_t>{img.pixels[0], img.pixels[1], img.pixels[2]});
  CHECK(crop(img, 2, 1, 5, 4) == oracle::crop(img, 2, 1, 5, 4));
}

TEST_CASE("op validation") {
  CHECK(error_of([] { check_op(Threshold{256}, 4, 4); }) == Errc::invalid_op_params);
  CHECK(error_of([] { check_op(Threshold{-1}, 4, 4); }) == Errc::invalid_op_params);
  CHECK(error_of([] { check_op(Resize{0, 4}, 4, 4); }) == Errc::invalid_target);
  CHECK(error_of([] { check_op(Crop{1, 1, 4, 4}, 4, 4); }) == Errc::out_of_bounds);
  CHECK(error_of([] { check_op(Crop{-1, 0, 1, 1}, 4, 4); }) == Errc::out_of_bounds);
  // The second op is validated against the output of the first.
  std::vector<TransformOp> ops{Resize{2, 2}, Crop{0, 0, 3, 3}};
  CHECK(error_of([&] { apply_ops(visor::testing::gradient_image(8, 8), ops); }) == Errc::out_of_bounds);
}

TEST_CASE("dimension algebra holds for random parameters") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    std::uint32_t w = 1 + rng() % 40, h = 1 + rng() % 40;
    auto img = visor::testing::random_image(rng, w, h, 1);
    std::uint32_t rw = 1 + rng() % 50, rh = 1 + rng() % 50;
    auto r = resize(img, rw, rh);
    CHECK((r.width == rw && r.height == rh && r.pixels.size() == std::size_t{rw} * rh));
    std::uint32_t cx = rng() % w, cy = rng() % h, cw = 1 + rng() % (w - cx), chh = 1 + rng() % (h - cy);
    auto c = crop(img, cx, cy, cw, chh);
    CHECK((c.width == cw && c.height == chh));
  }
}

TEST_CASE("tiled layout") {
  auto four = visor::testing::gradient_image(4, 4);
  auto bytes = encode_tiled(four, 2);
  auto reader = TiledReader::from_bytes(bytes);
  CHECK(reader.header().tile_count() == 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VDTI");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(reader.directory().front().offset == kTiledHeaderSize + 4 * kTileEntrySize);
  CHECK(reader.read_all() == four);

  std::mt19937_64 rng(1);
  auto five = visor::testing::random_image(rng, 5, 5, 1);
  auto r5 = TiledReader::from_bytes(encode_tiled(five, 4));
  CHECK(r5.header().tiles_x() == 2);
  CHECK(r5.header().tiles_y() == 2);
  CHECK(r5.directory()[3].length == 1);  // 1x1 random edge tile, stored raw
  CHECK(r5.read_all() == five);
  CHECK(error_of([&] { encode_tiled(five, 3); }) == Errc::invalid_op_params);
}

TEST_CASE("region reads touch only intersecting tiles") {
  std::mt19937_64 rng(2);
  auto img = visor::testing::random_image(rng, 13, 11, 3);
  auto bytes = encode_tiled(img, 4);
  for (int i = 0; i < 60; ++i) {
    std::uint32_t x = rng() % 13, y = rng() % 11, w = 1 + rng() % (13 - x), h = 1 + rng() % (11 - y);
    auto reader = TiledReader::from_bytes(bytes);
    CHECK(reader.read_region(x, y, w, h) == oracle::crop(img, x, y, w, h));
    CHECK(reader.tiles_read() == oracle::intersecting_tiles(x, y, w, h, 4));
  }
  auto reader = TiledReader::from_bytes(bytes);
  CHECK(error_of([&] { reader.read_region(10, 0, 4, 1); }) == Errc::out_of_bounds);
}

TEST_CASE("corrupt tiled data is rejected") {
  auto bytes = encode_tiled(visor::testing::gradient_image(8, 8), 4);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(error_of([&] { TiledReader::from_bytes(bad); }) == Errc::corrupt_data);
  bad = bytes;
  bad.resize(30);
  CHECK(error_of([&] { TiledReader::from_bytes(bad); }) == Errc::corrupt_data);
  CHECK(error_of([&] { decode(bad); }) == Errc::decode_error);
}

TEST_CASE("png and jpeg round trips") {
  std::mt19937_64 rng(4);
  for (std::uint8_t ch : {1, 3}) {
    auto img = visor::testing::random_image(rng, 31, 17, ch);
    CHECK(decode(encode_png(img)) == img);
    auto j = decode(encode_jpeg(visor::testing::gradient_image(32, 16, ch)));
    CHECK(j.width == 32);
    CHECK(j.height == 16);
    CHECK(j.channels == ch);
  }
  Bytes png = encode_png(visor::testing::gradient_image(8, 8));
  png.resize(png.size() / 2);
  CHECK(error_of([&] { decode(png); }) == Errc::decode_error);
  Bytes jpg = encode_jpeg(visor::testing::gradient_image(8, 8));
  jpg.resize(40);
  CHECK(error_of([&] { decode(jpg); }) == Errc::decode_error);
  CHECK(error_of([] { decode(Bytes{1, 2, 3}); }) == Errc::decode_error);
}

TEST_CASE("visual store") {
  TempDir dir;
  VisualStore store(dir.path(), {.sync = false});
  std::mt19937_64 rng(6);
  auto img = visor::testing::random_image(rng, 40, 30, 1);
  auto rec = store.store_image(img, ImageFormat::tiled, 16);
  CHECK(rec.width == 40);
  CHECK(rec.height == 30);
  CHECK(rec.locator.size() > 33);
  CHECK(rec.locator[32] == '-');
  CHECK(store.contains(rec.locator));
  CHECK(store.load(rec.locator) == img);

  // The same pixels stored twice get distinct locators.
  auto again = store.store_image(img, ImageFormat::tiled, 16);
  CHECK(again.locator != rec.locator);
  CHECK(again.locator.substr(0, 32) == rec.locator.substr(0, 32));

  // No ops and same format: stored bytes verbatim.
  auto raw = store.retrieve_image(rec.locator, {}, ImageFormat::tiled);
  CHECK(raw == read_file(dir.path() / rec.locator));

  std::vector<TransformOp> ops{Crop{5, 5, 10, 10}, Threshold{100}};
  auto before = store.tile_reads();
  RetrievalTiming timing;
  auto out = decode(store.retrieve_image(rec.locator, ops, ImageFormat::png, &timing));
  CHECK(out == oracle::threshold(oracle::crop(img, 5, 5, 10, 10), 100));
  CHECK(store.tile_reads() - before == oracle::intersecting_tiles(5, 5, 10, 10, 16));
  CHECK(timing.retrieval.count() >= 0);

  std::vector<TransformOp> bad{Crop{35, 0, 10, 10}};
  CHECK(error_of([&] { store.retrieve_image(rec.locator, bad, ImageFormat::png); }) == Errc::out_of_bounds);
  CHECK(error_of([&] { store.retrieve_image("nope-1", {}, ImageFormat::png); }) == Errc::unknown_locator);

  auto p = store.store_image(img, ImageFormat::png);
  CHECK(store.describe(p.locator).format == ImageFormat::png);
  store.remove(p.locator);
  CHECK_FALSE(store.contains(p.locator));

  // A reopened store keeps issuing fresh sequence numbers.
  VisualStore reopened(dir.path(), {.sync = false});
  auto next = reopened.store_image(img, ImageFormat::tiled, 16);
  CHECK(next.locator != rec.locator);
  CHECK(next.locator != again.locator);
}
