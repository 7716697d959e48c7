#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cddvt/dataio.hpp"
#include "temp_dir.hpp"

using namespace cddvt;

namespace {

double patch_variance(const Image& img, std::size_t y0, std::size_t x0, std::size_t p) {
    double m = 0.0, s = 0.0;
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) m += img.at(y0 + y, x0 + x);
    m /= static_cast<double>(p * p);
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) s += (img.at(y0 + y, x0 + x) - m) * (img.at(y0 + y, x0 + x) - m);
    return s / static_cast<double>(p * p);
}

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

}  // namespace

TEST(Synthetic, AllFlatPatchesAreConstant) {
    const Dataset ds = gen_synthetic(10, 32, 4, {1, 0, 0, 0}, 0);
    ASSERT_EQ(ds.items.size(), 10u);
    for (const LabeledImage& li : ds.items) {
        EXPECT_EQ(li.grid_h, 8u);
        EXPECT_EQ(li.patch_complexity, std::vector<int>(64, 0));
        for (std::size_t py = 0; py < 8; ++py)
            for (std::size_t px = 0; px < 8; ++px)
                for (std::size_t k = 0; k < 16; ++k)
                    EXPECT_EQ(li.image.at(py * 4 + k / 4, px * 4 + k % 4), li.image.at(py * 4, px * 4));
    }
}

TEST(Synthetic, AllNoiseLabelsThree) {
    const Dataset ds = gen_synthetic(4, 16, 4, {0, 0, 0, 1}, 5);
    for (const LabeledImage& li : ds.items) EXPECT_EQ(li.patch_complexity, std::vector<int>(16, 3));
}

TEST(Synthetic, PixelsInUnitRange) {
    const Dataset ds = gen_synthetic(8, 32, 4, {0.25, 0.25, 0.25, 0.25}, 11);
    for (const LabeledImage& li : ds.items)
        for (double v : li.image.pixels) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(Synthetic, Deterministic) {
    const Dataset a = gen_synthetic(6, 32, 4, {0.25, 0.25, 0.25, 0.25}, 42);
    const Dataset b = gen_synthetic(6, 32, 4, {0.25, 0.25, 0.25, 0.25}, 42);
    const Dataset c = gen_synthetic(6, 32, 4, {0.25, 0.25, 0.25, 0.25}, 43);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a.items[i].image, b.items[i].image);
        EXPECT_EQ(a.items[i].patch_complexity, b.items[i].patch_complexity);
    }
    EXPECT_NE(a.items[0].image, c.items[0].image);
}

TEST(Synthetic, ItemIndependentOfCount) {
    const Dataset a = gen_synthetic(3, 16, 4, {0.25, 0.25, 0.25, 0.25}, 9);
    const Dataset b = gen_synthetic(7, 16, 4, {0.25, 0.25, 0.25, 0.25}, 9);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.items[i].image, b.items[i].image);
}

TEST(Synthetic, VarianceGrowsWithComplexity) {
    const Dataset ds = gen_synthetic(40, 32, 4, {0.25, 0.25, 0.25, 0.25}, 3);
    double sum[4] = {}, n[4] = {};
    for (const LabeledImage& li : ds.items)
        for (std::size_t py = 0; py < 8; ++py)
            for (std::size_t px = 0; px < 8; ++px) {
                const int c = li.patch_complexity[py * 8 + px];
                sum[c] += patch_variance(li.image, py * 4, px * 4, 4);
                n[c] += 1;
            }
    for (int c = 0; c < 4; ++c) ASSERT_GT(n[c], 0);
    EXPECT_LT(sum[0] / n[0], sum[1] / n[1]);
    EXPECT_LT(sum[1] / n[1], sum[2] / n[2]);
    EXPECT_LE(sum[2] / n[2], sum[3] / n[3]);
}

TEST(Synthetic, ArgumentErrors) {
    EXPECT_THROW(gen_synthetic(1, 32, 4, {0.5, 0.5, 0.5, 0}, 0), ArgumentError);
    EXPECT_THROW(gen_synthetic(1, 32, 4, {-0.5, 1.5, 0, 0}, 0), ArgumentError);
    EXPECT_THROW(gen_synthetic(1, 30, 4, {1, 0, 0, 0}, 0), ArgumentError);
    EXPECT_THROW(gen_synthetic(1, 32, 0, {1, 0, 0, 0}, 0), ArgumentError);
}

TEST(Split, SizesUnionAndDeterminism) {
    const Dataset ds = gen_synthetic(10, 8, 4, {0.25, 0.25, 0.25, 0.25}, 1);
    const auto [train, val] = split(ds, 0.8, 7);
    EXPECT_EQ(train.items.size(), 8u);
    EXPECT_EQ(val.items.size(), 2u);
    std::set<std::vector<double>> all, parts;
    for (const auto& li : ds.items) all.insert(li.image.pixels);
    for (const auto& li : train.items) parts.insert(li.image.pixels);
    for (const auto& li : val.items) parts.insert(li.image.pixels);
    EXPECT_EQ(all, parts);
    const auto [train2, val2] = split(ds, 0.8, 7);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(val.items[i].image, val2.items[i].image);
}

TEST(Split, FractionBounds) {
    const Dataset ds = gen_synthetic(4, 8, 4, {1, 0, 0, 0}, 1);
    EXPECT_THROW(split(ds, 0.0, 0), ArgumentError);
    EXPECT_THROW(split(ds, 1.0, 0), ArgumentError);
}

TEST(Pnm, ParsesP5) {
    std::string s = "P5\n# comment\n32 32\n255\n";
    for (int i = 0; i < 1024; ++i) s.push_back(static_cast<char>(i % 256));
    const Image img = decode_pnm(bytes_of(s));
    EXPECT_EQ(img.height, 32u);
    EXPECT_EQ(img.width, 32u);
    EXPECT_EQ(img.channels, 1u);
    EXPECT_EQ(img.pixels[0], 0.0);
    EXPECT_EQ(img.pixels[255], 1.0);
    EXPECT_EQ(img.pixels[51], 0.2);
}

TEST(Pnm, SixteenBitSamples) {
    std::string s = "P5 1 1 65535\n";
    s.push_back(0x00);
    s.push_back(static_cast<char>(0x80));
    EXPECT_DOUBLE_EQ(decode_pnm(bytes_of(s)).pixels[0], 0.001953154802777142);
}

TEST(Pnm, ParsesP6Channels) {
    std::string s = "P6 2 1 255\n";
    for (int c : {0, 51, 102, 153, 204, 255}) s.push_back(static_cast<char>(c));
    const Image img = decode_pnm(bytes_of(s));
    EXPECT_EQ(img.channels, 3u);
    EXPECT_EQ(img.pixels[1], 0.2);
    EXPECT_EQ(img.pixels[5], 1.0);
}

TEST(Pnm, RoundTripWithinHalfStep) {
    Rng rng(4);
    for (std::size_t ch : {1u, 3u}) {
        Image img(5, 7, ch);
        for (double& v : img.pixels) v = rng.uniform();
        const Image back = decode_pnm(encode_pnm(img));
        ASSERT_EQ(back.pixels.size(), img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_LE(std::abs(back.pixels[i] - img.pixels[i]), 1.0 / 510.0 + 1e-15);
    }
}

TEST(Pnm, EncoderLayoutIsStable) {
    Image img(1, 2);
    img.pixels = {0.0, 1.0};
    EXPECT_EQ(encode_pnm(img), bytes_of(std::string("P5\n2 1\n255\n") + '\0' + '\xff'));
    EXPECT_THROW(encode_pnm(Image(1, 1, 2)), ArgumentError);
}

TEST(Pnm, MalformedHeaders) {
    try {
        decode_pnm(bytes_of("P7 1 1 255\n"));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset, 0u);
    }
    try {
        decode_pnm(bytes_of("P5 x 1 255\n"));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset, 3u);
        EXPECT_NE(std::string(e.what()).find("width"), std::string::npos);
    }
    EXPECT_THROW(decode_pnm(bytes_of("P5 1 1 0\n\x00")), ParseError);
    EXPECT_THROW(decode_pnm(bytes_of("P5 0 1 255\n")), ParseError);
    EXPECT_THROW(decode_pnm(bytes_of("P5 2 2 255\nab")), ParseError);  // truncated
    EXPECT_THROW(decode_pnm(bytes_of("P5 1 1 100\n\xc8")), ParseError);  // 200 > maxval
}

TEST(Pnm, FileErrors) {
    EXPECT_THROW(load_raster("/nonexistent/dir/x.pgm"), IoError);
    TempDir dir("pnm");
    write_file(dir.file("bad.pgm"), bytes_of("P2 1 1 255\n0"));
    try {
        load_raster(dir.file("bad.pgm"));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.pgm"), std::string::npos);
    }
}

TEST(Manifest, RoundTrip) {
    TempDir dir("manifest");
    const Dataset ds = gen_synthetic(3, 16, 4, {0.25, 0.25, 0.25, 0.25}, 2);
    const Dataset back = load_manifest(write_dataset(ds, dir.file("set")));
    ASSERT_EQ(back.items.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.items[i].grid_h, 4u);
        EXPECT_EQ(back.items[i].grid_w, 4u);
        EXPECT_EQ(back.items[i].patch_complexity, ds.items[i].patch_complexity);
        for (std::size_t k = 0; k < ds.items[i].image.pixels.size(); ++k)
            EXPECT_LE(std::abs(back.items[i].image.pixels[k] - ds.items[i].image.pixels[k]), 1.0 / 510.0 + 1e-15);
    }
    EXPECT_THROW(load_manifest(dir.file("missing.txt")), IoError);
}
