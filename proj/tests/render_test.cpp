#include <gtest/gtest.h>

#include "support/test_support.hpp"

using namespace rlpm;
using namespace rlpm::testing;

namespace {

// Minimal reference PNM decoder: magic, width, height, maxval, then pixels.
struct Pnm {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::vector<unsigned char> pixels;
};

Pnm decode_pnm(const std::string& bytes) {
  std::istringstream in(bytes);
  Pnm p;
  in >> p.magic >> p.width >> p.height >> p.maxval;
  in.get();  // single whitespace before the raster
  p.pixels.assign(std::istreambuf_iterator<char>(in), {});
  return p;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(render::normalize_relevance(Tensor({3, 3})), Tensor({3, 3}));
  Tensor one({2, 2});
  one[3] = 5.0;
  Tensor n = render::normalize_relevance(one);
  EXPECT_EQ(n[3], 1.0);
  EXPECT_EQ(n.sum(), 1.0);
  RelevanceMap m{Tensor::vector({-4, 2}), 0.0, RuleConfig::lrp0(), 0};
  EXPECT_EQ(render::normalize_relevance(m), Tensor::vector({-1, 0.5}));
}

TEST(Normalize, PreservesSignsAndBounds) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Tensor x = random_tensor({7, 5}, rng, -3, 3);
    x[t % 35] = 0.0;
    Tensor n = render::normalize_relevance(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(std::signbit(n[i]), std::signbit(x[i]));
      EXPECT_EQ(n[i] == 0.0, x[i] == 0.0);
      EXPECT_LE(std::abs(n[i]), 1.0);
    }
    EXPECT_EQ(n.max_abs(), 1.0);
  }
}

TEST(Color, Endpoints) {
  EXPECT_EQ(render::color_for(0.0), (render::Rgb{255, 255, 255}));
  EXPECT_EQ(render::color_for(1.0), (render::Rgb{160, 32, 240}));
  EXPECT_EQ(render::color_for(-1.0), (render::Rgb{0, 0, 255}));
  EXPECT_EQ(render::color_for(2.0), render::color_for(1.0));
  EXPECT_THROW(render::color_for(0.5, {0.0}), InputError);
}

TEST(Color, MonotoneSaturation) {
  for (double gamma : {0.5, 1.0, 2.0}) {
    render::Rgb prev = render::color_for(0.0, {gamma});
    for (int k = 1; k <= 1000; ++k) {
      const render::Rgb c = render::color_for(k / 1000.0, {gamma});
      // Toward (160, 32, 240): every channel moves down, never back up.
      for (int ch = 0; ch < 3; ++ch) EXPECT_LE(c[ch], prev[ch]);
      prev = c;
    }
    prev = render::color_for(0.0, {gamma});
    for (int k = 1; k <= 1000; ++k) {
      const render::Rgb c = render::color_for(-k / 1000.0, {gamma});
      EXPECT_LE(c[0], prev[0]);
      EXPECT_LE(c[1], prev[1]);
      EXPECT_EQ(c[2], 255);
      prev = c;
    }
  }
}

TEST(ToImage, PpmDecodesToExpectedPixels) {
  TempDir dir;
  Tensor v(Shape{2, 3}, std::vector<double>{0, 1, -1, 0.5, -0.5, 0});
  render::to_image(v, {}, dir.file("h.ppm"));
  Pnm p = decode_pnm(slurp(dir.file("h.ppm")));
  EXPECT_EQ(p.magic, "P6");
  EXPECT_EQ(p.width, 3u);
  EXPECT_EQ(p.height, 2u);
  EXPECT_EQ(p.maxval, 255u);
  ASSERT_EQ(p.pixels.size(), 18u);
  EXPECT_EQ((std::vector<unsigned char>(p.pixels.begin(), p.pixels.begin() + 3)), (std::vector<unsigned char>{255, 255, 255}));
  EXPECT_EQ((std::vector<unsigned char>(p.pixels.begin() + 3, p.pixels.begin() + 6)), (std::vector<unsigned char>{160, 32, 240}));
  EXPECT_EQ((std::vector<unsigned char>(p.pixels.begin() + 6, p.pixels.begin() + 9)), (std::vector<unsigned char>{0, 0, 255}));
  // 0.5 toward purple: 255 + (160 - 255) / 2 = 207.5 -> 208
  EXPECT_EQ(p.pixels[9], 208);
  EXPECT_EQ(p.pixels[10], 144);
  EXPECT_EQ(p.pixels[11], 248);
}

TEST(ToImage, PgmAndShapes) {
  TempDir dir;
  Tensor v(Shape{1, 3, 1}, std::vector<double>{-1, 0, 1});
  render::to_image(v, {}, dir.file("g.pgm"), render::ImageMode::Grayscale);
  Pnm p = decode_pnm(slurp(dir.file("g.pgm")));
  EXPECT_EQ(p.magic, "P5");
  EXPECT_EQ(p.width, 3u);
  EXPECT_EQ(p.height, 1u);
  EXPECT_EQ(p.pixels, (std::vector<unsigned char>{0, 128, 255}));
  EXPECT_THROW(render::encode_ppm(Tensor({2, 2, 3})), ShapeError);
  EXPECT_EQ(render::collapse_channels(Tensor(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4})),
            Tensor(Shape{1, 2}, std::vector<double>{3, 7}));
  EXPECT_THROW(render::to_image(v, {}, dir.file("missing/dir/x.ppm")), IoError);
}

TEST(ToImage, ByteIdenticalAcrossRuns) {
  Rng rng(2);
  TempDir dir;
  Tensor v = render::normalize_relevance(random_tensor({16, 16, 1}, rng));
  render::to_image(v, {}, dir.file("a.ppm"));
  render::to_image(v, {}, dir.file("b.ppm"));
  EXPECT_EQ(slurp(dir.file("a.ppm")), slurp(dir.file("b.ppm")));
  EXPECT_EQ(slurp(dir.file("a.ppm")).size(), std::string("P6\n16 16\n255\n").size() + 16 * 16 * 3);
}

TEST(ImageIo, PgmReadScalesByMaxval) {
  TempDir dir;
  spit(dir.file("a.pgm"), "P2\n# comment\n3 2\n4\n0 1 2\n3 4 0\n");
  Tensor a = image_io::read_pgm(dir.file("a.pgm"));
  EXPECT_EQ(a.shape(), (Shape{2, 3, 1}));
  EXPECT_EQ(a[4], 1.0);
  EXPECT_EQ(a[2], 0.5);
  spit(dir.file("b.pgm"), std::string("P5\n2 1\n255\n\x00\xff", 13));
  Tensor b = image_io::read_pgm(dir.file("b.pgm"));
  EXPECT_EQ(b, Tensor(Shape{1, 2, 1}, std::vector<double>{0, 1}));
  spit(dir.file("c.pgm"), "P5\n4 4\n255\n\x01");
  EXPECT_THROW(image_io::read_pgm(dir.file("c.pgm")), InputError);
  spit(dir.file("d.pgm"), "P6\n1 1\n255\nabc");
  EXPECT_THROW(image_io::read_pgm(dir.file("d.pgm")), InputError);
  EXPECT_THROW(image_io::read_pgm(dir.file("none.pgm")), IoError);
}

TEST(ImageIo, PgmWriteReadRoundTrip) {
  TempDir dir;
  Tensor x(Shape{2, 2, 1}, std::vector<double>{0, 1, 0.2, 2.0});
  image_io::write_pgm(x, dir.file("x.pgm"));
  Tensor y = image_io::read_image(dir.file("x.pgm"));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
  EXPECT_EQ(y[2], 51.0 / 255.0);
  EXPECT_EQ(y[3], 1.0);
}

TEST(ImageIo, Raw32RoundTripAndErrors) {
  Rng rng(3);
  TempDir dir;
  Tensor x = random_tensor({3, 4, 2}, rng);
  image_io::write_raw32(x, dir.file("x.raw"));
  Tensor y = image_io::read_image(dir.file("x.raw"));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], static_cast<double>(static_cast<float>(x[i])));
  std::string bytes = slurp(dir.file("x.raw"));
  spit(dir.file("short.raw"), bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(image_io::read_raw32(dir.file("short.raw")), InputError);
  spit(dir.file("tiny.raw"), "abc");
  EXPECT_THROW(image_io::read_raw32(dir.file("tiny.raw")), InputError);
  EXPECT_THROW(image_io::write_raw32(Tensor({3}), dir.file("r.raw")), ShapeError);
}

TEST(ImageIo, RelevanceCsvRoundTrip) {
  Rng rng(4);
  TempDir dir;
  Tensor x = random_tensor({3, 2, 2}, rng);
  image_io::write_relevance_csv(x, dir.file("m.csv"));
  const std::string text = slurp(dir.file("m.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "row,col,channel,value");
  EXPECT_NE(text.find("\n2,1,1,"), std::string::npos);
  EXPECT_EQ(image_io::read_relevance_csv(dir.file("m.csv"), x.shape()), x);  // %.17g is exact

  spit(dir.file("dup.csv"), "row,col,channel,value\n0,0,0,1\n0,0,0,2\n");
  EXPECT_THROW(image_io::read_relevance_csv(dir.file("dup.csv"), {1, 1, 1}), InputError);
  spit(dir.file("miss.csv"), "row,col,channel,value\n0,0,0,1\n");
  EXPECT_THROW(image_io::read_relevance_csv(dir.file("miss.csv"), {1, 2, 1}), InputError);
  spit(dir.file("out.csv"), "row,col,channel,value\n0,5,0,1\n");
  EXPECT_THROW(image_io::read_relevance_csv(dir.file("out.csv"), {1, 1, 1}), InputError);
  spit(dir.file("hdr.csv"), "a,b\n");
  EXPECT_THROW(image_io::read_relevance_csv(dir.file("hdr.csv"), {1, 1, 1}), InputError);
}
