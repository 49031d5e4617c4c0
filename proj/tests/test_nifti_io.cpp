#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "ctscreen/nifti_io.hpp"

using namespace ctscreen;
using namespace ctscreen::nifti;

namespace {

// Hand-assembled header written field by field at the NIfTI-1 byte offsets,
// independent of encode_image.
Bytes manual_header(bool big_endian, std::int16_t datatype, std::int16_t bitpix, std::array<std::int16_t, 4> dims,
                    float slope = 1.0f, float inter = 0.0f) {
  Bytes b(352, 0);
  auto put = [&](std::size_t off, auto v) {
    unsigned char tmp[sizeof(v)];
    std::memcpy(tmp, &v, sizeof(v));
    if (big_endian) std::reverse(tmp, tmp + sizeof(v));
    std::memcpy(b.data() + off, tmp, sizeof(v));
  };
  put(0, std::int32_t{348});
  put(40, dims[0]);
  put(42, dims[1]);
  put(44, dims[2]);
  put(46, dims[3]);
  for (std::size_t i = 4; i < 8; ++i) put(40 + 2 * i, std::int16_t{1});
  put(70, datatype);
  put(72, bitpix);
  for (std::size_t i = 0; i < 8; ++i) put(76 + 4 * i, 1.0f);
  put(108, 352.0f);
  put(112, slope);
  put(116, inter);
  std::memcpy(b.data() + 344, "n+1\0", 4);
  return b;
}

template <typename T>
Grid3<T> random_grid(Shape3 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Grid3<T> g(s);
  for (auto& v : g.data()) {
    if constexpr (std::is_floating_point_v<T>) {
      v = std::uniform_real_distribution<T>(-3000, 3000)(rng);
    } else {
      v = static_cast<T>(rng());
    }
  }
  return g;
}

template <typename T>
void check_round_trip(bool gz) {
  const Grid3<T> g = random_grid<T>({7, 5, 3}, 42 + sizeof(T));
  Bytes bytes = encode_values(g, make_header(g.shape(), datatype_of<T>(), {0.7, 0.7, 5.0}));
  if (gz) bytes = gzip(bytes);
  std::string s(bytes.begin(), bytes.end());
  std::istringstream in(s);
  const NiftiImage img = read_image(in, gz);
  const Grid3<T> back = stored_values<T>(img);
  EXPECT_EQ(back.shape(), g.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), g.data().data(), g.size() * sizeof(T)), 0);
  EXPECT_FLOAT_EQ(static_cast<float>(img.header.spacing().s), 5.0f);
}

}  // namespace

TEST(NiftiHeader, ValidLittleEndian) {
  const Bytes b = manual_header(false, 4, 16, {3, 512, 512, 36});
  const NiftiHeader h = parse_header(b);
  EXPECT_TRUE(h.little_endian);
  EXPECT_EQ(h.shape(), (Shape3{512, 512, 36}));
  EXPECT_EQ(h.datatype(), Datatype::Int16);
  EXPECT_TRUE(h.single_file());
}

TEST(NiftiHeader, ByteSwappedSizeFlipsEndianness) {
  const Bytes b = manual_header(true, 4, 16, {3, 512, 512, 41});
  const NiftiHeader h = parse_header(b);
  EXPECT_FALSE(h.little_endian);
  EXPECT_EQ(h.shape(), (Shape3{512, 512, 41}));
  EXPECT_EQ(h.bitpix, 16);
}

TEST(NiftiHeader, FourDimensionalSingleFrameAccepted) {
  const Bytes b = manual_header(false, 16, 32, {4, 8, 8, 4});
  EXPECT_EQ(parse_header(b).shape(), (Shape3{8, 8, 4}));
}

TEST(NiftiHeader, Errors) {
  Bytes b = manual_header(false, 4, 16, {3, 4, 4, 4});
  auto code_of = [](const Bytes& bytes) {
    try {
      parse_header(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  Bytes short_b(b.begin(), b.begin() + 200);
  EXPECT_EQ(code_of(short_b), ErrorCode::TruncatedHeader);
  Bytes bad_magic = b;
  bad_magic[344] = 'x';
  EXPECT_EQ(code_of(bad_magic), ErrorCode::BadMagic);
  Bytes bad_size = b;
  bad_size[0] = 7;
  EXPECT_EQ(code_of(bad_size), ErrorCode::BadMagic);
  EXPECT_EQ(code_of(manual_header(false, 64, 64, {3, 4, 4, 4})), ErrorCode::UnsupportedDatatype);
  EXPECT_EQ(code_of(manual_header(false, 4, 32, {3, 4, 4, 4})), ErrorCode::UnsupportedDatatype);
}

TEST(NiftiRead, HounsfieldAffine) {
  Bytes b = manual_header(false, 4, 16, {3, 2, 1, 1}, 1.0f, -1024.0f);
  const std::int16_t raw[2] = {0, 1024};
  b.insert(b.end(), reinterpret_cast<const std::uint8_t*>(raw), reinterpret_cast<const std::uint8_t*>(raw) + 4);
  std::istringstream in(std::string(b.begin(), b.end()));
  const Volume v = read_volume(in, false, "study_0001");
  EXPECT_EQ(v.voxels[0], -1024.0f);
  EXPECT_EQ(v.voxels[1], 0.0f);
  EXPECT_EQ(v.source_id, "study_0001");
}

TEST(NiftiRead, ZeroSlopeTreatedAsOne) {
  Bytes b = manual_header(false, 4, 16, {3, 1, 1, 1}, 0.0f, 0.0f);
  const std::int16_t raw = -700;
  b.insert(b.end(), reinterpret_cast<const std::uint8_t*>(&raw), reinterpret_cast<const std::uint8_t*>(&raw) + 2);
  EXPECT_EQ(to_volume(parse_image(b)).voxels[0], -700.0f);
}

TEST(NiftiRead, IdentityAffineLeavesValues) {
  const Grid3<std::int16_t> g = random_grid<std::int16_t>({4, 3, 2}, 5);
  const Volume v = to_volume(parse_image(encode_values(g, make_header(g.shape(), Datatype::Int16))));
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(v.voxels[i], static_cast<float>(g[i]));
}

TEST(NiftiRead, BigEndianDataSwapped) {
  Bytes b = manual_header(true, 4, 16, {3, 2, 1, 1});
  b.insert(b.end(), {0x01, 0x02, 0xff, 0xfe});  // 0x0102, 0xfffe big-endian
  const Volume v = to_volume(parse_image(b));
  EXPECT_EQ(v.voxels[0], 258.0f);
  EXPECT_EQ(v.voxels[1], -2.0f);
}

TEST(NiftiRead, TruncatedDataRejected) {
  Bytes b = manual_header(false, 4, 16, {3, 4, 4, 4});
  b.resize(b.size() + 127);  // one byte short of 4*4*4*2
  try {
    parse_image(b);
    FAIL() << "expected DataLengthMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DataLengthMismatch);
  }
}

TEST(NiftiRead, EveryTruncationErrors) {
  const Grid3<std::int16_t> g = random_grid<std::int16_t>({3, 3, 2}, 9);
  const Bytes full = encode_values(g, make_header(g.shape(), Datatype::Int16));
  for (std::size_t n = 0; n < full.size(); ++n) {
    Bytes part(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(parse_image(part), Error) << "length " << n;
  }
}

TEST(NiftiRead, CorruptGzipReportsDecompressError) {
  Bytes z = gzip(encode_values(random_grid<float>({3, 3, 3}, 1), make_header({3, 3, 3}, Datatype::Float32)));
  z.resize(z.size() / 2);
  std::istringstream in(std::string(z.begin(), z.end()));
  try {
    read_image(in, true);
    FAIL() << "expected DecompressError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DecompressError);
  }
}

TEST(NiftiRoundTrip, AllDatatypesPlainAndGzipped) {
  for (bool gz : {false, true}) {
    check_round_trip<std::uint8_t>(gz);
    check_round_trip<std::int16_t>(gz);
    check_round_trip<std::uint16_t>(gz);
    check_round_trip<std::int32_t>(gz);
    check_round_trip<float>(gz);
  }
}

TEST(NiftiRoundTrip, FileWithSourceId) {
  const auto dir = std::filesystem::temp_directory_path() / "ctscreen_nifti_test";
  std::filesystem::create_directories(dir);
  const Grid3<std::int16_t> g = random_grid<std::int16_t>({6, 6, 4}, 3);
  const auto path = dir / "study_0258.nii.gz";
  write_file_atomic(path, gzip(encode_values(g, make_header(g.shape(), Datatype::Int16))));
  const Volume v = read_volume_file(path);
  EXPECT_EQ(v.source_id, "study_0258");
  EXPECT_EQ(v.shape(), g.shape());
  std::filesystem::remove_all(dir);
}

TEST(NiftiMask, AllZeroMaskHasZeroData) {
  const NiftiHeader templ = make_header({5, 4, 3}, Datatype::Int16, {0.8, 0.8, 8.0});
  const Bytes b = write_mask(Mask({5, 4, 3}), templ);
  ASSERT_EQ(b.size(), 352u + 60u);
  for (std::size_t i = 352; i < b.size(); ++i) EXPECT_EQ(b[i], 0);
  const NiftiHeader h = parse_header(b);
  EXPECT_EQ(h.datatype(), Datatype::UInt8);
  EXPECT_FLOAT_EQ(static_cast<float>(h.spacing().s), 8.0f);
}

TEST(NiftiMask, RoundTrip) {
  Mask m({9, 7, 5}, "m");
  std::mt19937 rng(4);
  for (auto& v : m.bits.data()) v = rng() % 2;
  const Mask back = to_mask(parse_image(write_mask(m, make_header(m.shape(), Datatype::Int16))));
  EXPECT_EQ(back, m);
}

TEST(NiftiMask, ShapeMismatch) {
  try {
    write_mask(Mask({4, 4, 4}), make_header({4, 4, 5}, Datatype::Int16));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(NiftiProperty, AffineStrictlyMonotone) {
  for (float slope : {0.5f, 1.0f, 2.5f}) {
    Grid3<std::int16_t> g({5, 1, 1});
    for (std::size_t i = 0; i < 5; ++i) g[i] = static_cast<std::int16_t>(-2000 + 900 * static_cast<int>(i));
    NiftiHeader h = make_header(g.shape(), Datatype::Int16);
    h.scl_slope = slope;
    h.scl_inter = -1024.0f;
    const Volume v = to_volume(parse_image(encode_values(g, h)));
    for (std::size_t i = 1; i < 5; ++i) EXPECT_LT(v.voxels[i - 1], v.voxels[i]);
  }
}
