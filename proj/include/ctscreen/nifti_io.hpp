#pragma once

// NIfTI-1 reader/writer. Single-file (.nii, .nii.gz) images are read and written;
// the "ni1" header of a header/data pair is recognised by parse_header.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/grid.hpp"
#include "ctscreen/io_util.hpp"

namespace ctscreen::nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kSingleFileOffset = 352;

enum class Datatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  UInt16 = 512,
};

inline int bits_of(Datatype dt) {
  switch (dt) {
    case Datatype::UInt8: return 8;
    case Datatype::Int16:
    case Datatype::UInt16: return 16;
    case Datatype::Int32:
    case Datatype::Float32: return 32;
  }
  return 0;
}

inline bool is_supported(std::int16_t code) {
  switch (static_cast<Datatype>(code)) {
    case Datatype::UInt8:
    case Datatype::Int16:
    case Datatype::Int32:
    case Datatype::Float32:
    case Datatype::UInt16: return true;
  }
  return false;
}

template <typename T>
constexpr Datatype datatype_of();
template <> constexpr Datatype datatype_of<std::uint8_t>() { return Datatype::UInt8; }
template <> constexpr Datatype datatype_of<std::int16_t>() { return Datatype::Int16; }
template <> constexpr Datatype datatype_of<std::uint16_t>() { return Datatype::UInt16; }
template <> constexpr Datatype datatype_of<std::int32_t>() { return Datatype::Int32; }
template <> constexpr Datatype datatype_of<float>() { return Datatype::Float32; }

struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{3, 1, 1, 1, 1, 1, 1, 1};
  std::int16_t datatype_code = static_cast<std::int16_t>(Datatype::Int16);
  std::int16_t bitpix = 16;
  std::array<float, 8> pixdim{1, 1, 1, 1, 1, 1, 1, 1};
  float vox_offset = static_cast<float>(kSingleFileOffset);
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::uint8_t xyzt_units = 2;  // mm
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<float, 6> quatern{};  // b, c, d, qoffset x, y, z
  std::array<std::array<float, 4>, 3> srow{};
  std::array<char, 80> descrip{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool little_endian = true;  // byte order of the parsed source

  Datatype datatype() const { return static_cast<Datatype>(datatype_code); }
  Shape3 shape() const {
    return {static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]), static_cast<std::size_t>(dim[3])};
  }
  Spacing spacing() const { return {pixdim[1], pixdim[2], pixdim[3]}; }
  bool single_file() const { return magic[1] == '+'; }
  std::size_t data_bytes() const { return shape().voxels() * static_cast<std::size_t>(bitpix / 8); }
};

/// Header plus voxel bytes in host byte order.
struct NiftiImage {
  NiftiHeader header;
  Bytes data;
};

inline NiftiHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize)
    fail(ErrorCode::TruncatedHeader, "need 348 header bytes, have " + std::to_string(bytes.size()));

  NiftiHeader h;
  const auto le_size = load_as<std::int32_t>(bytes, 0, true);
  if (le_size == 348) {
    h.little_endian = true;
  } else if (load_as<std::int32_t>(bytes, 0, false) == 348) {
    h.little_endian = false;
  } else {
    fail(ErrorCode::BadMagic, "sizeof_hdr is neither 348 nor byte-swapped 348");
  }
  const bool le = h.little_endian;

  std::memcpy(h.magic.data(), bytes.data() + 344, 4);
  const bool single = std::memcmp(h.magic.data(), "n+1\0", 4) == 0;
  const bool pair = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
  if (!single && !pair) fail(ErrorCode::BadMagic, "magic is not n+1 or ni1");
  if (single && bytes.size() < kSingleFileOffset)
    fail(ErrorCode::TruncatedHeader, "single-file image shorter than 352 bytes");

  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = load_as<std::int16_t>(bytes, 40 + 2 * i, le);
  h.datatype_code = load_as<std::int16_t>(bytes, 70, le);
  h.bitpix = load_as<std::int16_t>(bytes, 72, le);
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = load_as<float>(bytes, 76 + 4 * i, le);
  h.vox_offset = load_as<float>(bytes, 108, le);
  h.scl_slope = load_as<float>(bytes, 112, le);
  h.scl_inter = load_as<float>(bytes, 116, le);
  h.xyzt_units = bytes[123];
  std::memcpy(h.descrip.data(), bytes.data() + 148, 80);
  h.qform_code = load_as<std::int16_t>(bytes, 252, le);
  h.sform_code = load_as<std::int16_t>(bytes, 254, le);
  for (std::size_t i = 0; i < 6; ++i) h.quatern[i] = load_as<float>(bytes, 256 + 4 * i, le);
  for (std::size_t row = 0; row < 3; ++row)
    for (std::size_t i = 0; i < 4; ++i) h.srow[row][i] = load_as<float>(bytes, 280 + 16 * row + 4 * i, le);

  if (h.dim[0] != 3 && h.dim[0] != 4)
    fail(ErrorCode::ShapeMismatch, "dim[0] must be 3 or 4, got " + std::to_string(h.dim[0]));
  for (std::size_t i = 1; i <= 3; ++i)
    if (h.dim[i] < 1) fail(ErrorCode::ShapeMismatch, "dim[" + std::to_string(i) + "] < 1");
  if (h.dim[0] == 4 && h.dim[4] > 1)
    fail(ErrorCode::ShapeMismatch, "4D series with more than one frame are not supported");

  if (!is_supported(h.datatype_code))
    fail(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype_code));
  if (h.bitpix != bits_of(h.datatype()))
    fail(ErrorCode::UnsupportedDatatype, "bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " +
                                             std::to_string(h.datatype_code));
  if (single && (!std::isfinite(h.vox_offset) || h.vox_offset < static_cast<float>(kSingleFileOffset)))
    fail(ErrorCode::DataLengthMismatch, "vox_offset must be >= 352");
  return h;
}

/// Decodes a complete single-file image (already decompressed).
inline NiftiImage parse_image(std::span<const std::uint8_t> bytes) {
  NiftiImage img;
  img.header = parse_header(bytes);
  if (!img.header.single_file())
    fail(ErrorCode::BadMagic, "ni1 header has no embedded data; pass the .img separately");
  const auto offset = static_cast<std::size_t>(img.header.vox_offset);
  const std::size_t n = img.header.data_bytes();
  if (offset > bytes.size() || bytes.size() - offset < n)
    fail(ErrorCode::DataLengthMismatch,
         "expected " + std::to_string(n) + " data bytes at offset " + std::to_string(offset) + ", file has " +
             std::to_string(bytes.size()));
  img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));

  const bool host_le = std::endian::native == std::endian::little;
  const std::size_t width = static_cast<std::size_t>(img.header.bitpix / 8);
  if (img.header.little_endian != host_le && width > 1) {
    for (std::size_t i = 0; i < img.data.size(); i += width)
      std::reverse(img.data.begin() + static_cast<std::ptrdiff_t>(i),
                   img.data.begin() + static_cast<std::ptrdiff_t>(i + width));
  }
  return img;
}

inline NiftiImage read_image(std::istream& stream, bool gzipped) {
  Bytes raw((std::istreambuf_iterator<char>(stream)), std::istreambuf_iterator<char>());
  if (gzipped || looks_gzipped(raw)) raw = gunzip(raw);
  return parse_image(raw);
}

inline NiftiImage read_image_file(const std::filesystem::path& path) {
  Bytes raw = read_file(path);
  if (looks_gzipped(raw)) raw = gunzip(raw);
  return parse_image(raw);
}

/// Raw stored values of type T; the datatype must match exactly.
template <typename T>
Grid3<T> stored_values(const NiftiImage& img) {
  if (img.header.datatype() != datatype_of<T>())
    fail(ErrorCode::UnsupportedDatatype, "stored datatype " + std::to_string(img.header.datatype_code) +
                                             " does not match requested type");
  std::vector<T> values(img.header.shape().voxels());
  std::memcpy(values.data(), img.data.data(), img.data.size());
  return Grid3<T>(img.header.shape(), std::move(values));
}

/// Converts stored values to Hounsfield units with the header affine.
/// A zero slope is treated as 1.
inline Volume to_volume(const NiftiImage& img, std::string source_id = {}) {
  const NiftiHeader& h = img.header;
  const double slope = (h.scl_slope == 0.0f || !std::isfinite(h.scl_slope)) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  const std::size_t n = h.shape().voxels();
  std::vector<float> hu(n);

  auto convert = [&](auto tag) {
    using T = decltype(tag);
    const T* src = reinterpret_cast<const T*>(img.data.data());
    for (std::size_t i = 0; i < n; ++i) {
      T v;
      std::memcpy(&v, src + i, sizeof(T));
      hu[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
    }
  };
  switch (h.datatype()) {
    case Datatype::UInt8: convert(std::uint8_t{}); break;
    case Datatype::Int16: convert(std::int16_t{}); break;
    case Datatype::UInt16: convert(std::uint16_t{}); break;
    case Datatype::Int32: convert(std::int32_t{}); break;
    case Datatype::Float32: convert(float{}); break;
  }
  for (float v : hu)
    if (!std::isfinite(v)) fail(ErrorCode::DataLengthMismatch, "non-finite voxel after HU conversion");
  return Volume{Grid3<float>(h.shape(), std::move(hu)), h.spacing(), std::move(source_id)};
}

inline Volume read_volume(std::istream& stream, bool gzipped, std::string source_id = {}) {
  return to_volume(read_image(stream, gzipped), std::move(source_id));
}

/// Source identifier derived from a file name: "study_0258.nii.gz" -> "study_0258".
inline std::string source_id_of(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".gz"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0)
      return name.substr(0, name.size() - e.size());
  }
  return name;
}

inline Volume read_volume_file(const std::filesystem::path& path) {
  return to_volume(read_image_file(path), source_id_of(path));
}

inline Mask to_mask(const NiftiImage& img, std::string source_id = {}) {
  Volume v = to_volume(img);
  Grid3<std::uint8_t> bits(v.shape());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = v.voxels[i] != 0.0f ? 1 : 0;
  return Mask(std::move(bits), std::move(source_id));
}

inline NiftiHeader make_header(Shape3 shape, Datatype dt, Spacing spacing = {}) {
  NiftiHeader h;
  h.dim = {3, static_cast<std::int16_t>(shape.r), static_cast<std::int16_t>(shape.c),
           static_cast<std::int16_t>(shape.s), 1, 1, 1, 1};
  h.datatype_code = static_cast<std::int16_t>(dt);
  h.bitpix = static_cast<std::int16_t>(bits_of(dt));
  h.pixdim = {1.0f, static_cast<float>(spacing.r), static_cast<float>(spacing.c), static_cast<float>(spacing.s),
              1.0f, 1.0f, 1.0f, 1.0f};
  return h;
}

/// Serializes a single-file little-endian image. `data` is host-order voxel bytes.
inline Bytes encode_image(const NiftiHeader& header, std::span<const std::uint8_t> data) {
  NiftiHeader h = header;
  h.magic = {'n', '+', '1', '\0'};
  h.vox_offset = static_cast<float>(kSingleFileOffset);
  if (data.size() != h.data_bytes())
    fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data.size()) + " != header size " +
                                       std::to_string(h.data_bytes()));

  Bytes out(kSingleFileOffset, 0);
  auto store = [&](std::size_t offset, auto value) {
    if constexpr (std::endian::native != std::endian::little) value = byteswap(value);
    std::memcpy(out.data() + offset, &value, sizeof(value));
  };
  store(0, std::int32_t{348});
  out[38] = 'r';  // "regular"
  for (std::size_t i = 0; i < 8; ++i) store(40 + 2 * i, h.dim[i]);
  store(70, h.datatype_code);
  store(72, h.bitpix);
  for (std::size_t i = 0; i < 8; ++i) store(76 + 4 * i, h.pixdim[i]);
  store(108, h.vox_offset);
  store(112, h.scl_slope);
  store(116, h.scl_inter);
  out[123] = h.xyzt_units;
  std::memcpy(out.data() + 148, h.descrip.data(), 80);
  store(252, h.qform_code);
  store(254, h.sform_code);
  for (std::size_t i = 0; i < 6; ++i) store(256 + 4 * i, h.quatern[i]);
  for (std::size_t row = 0; row < 3; ++row)
    for (std::size_t i = 0; i < 4; ++i) store(280 + 16 * row + 4 * i, h.srow[row][i]);
  std::memcpy(out.data() + 344, h.magic.data(), 4);

  const std::size_t width = static_cast<std::size_t>(h.bitpix / 8);
  out.resize(kSingleFileOffset + data.size());
  if (!data.empty()) std::memcpy(out.data() + kSingleFileOffset, data.data(), data.size());
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = kSingleFileOffset; i < out.size(); i += width)
      std::reverse(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(i + width));
  }
  return out;
}

template <typename T>
Bytes encode_values(const Grid3<T>& values, NiftiHeader header) {
  header.datatype_code = static_cast<std::int16_t>(datatype_of<T>());
  header.bitpix = static_cast<std::int16_t>(8 * sizeof(T));
  const Shape3 s = values.shape();
  header.dim[0] = 3;
  header.dim[1] = static_cast<std::int16_t>(s.r);
  header.dim[2] = static_cast<std::int16_t>(s.c);
  header.dim[3] = static_cast<std::int16_t>(s.s);
  header.dim[4] = 1;
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data().data());
  return encode_image(header, std::span(p, values.size() * sizeof(T)));
}

/// Unsigned 8-bit {0,1} image with geometry copied from `templ`.
inline Bytes write_mask(const Mask& mask, const NiftiHeader& templ) {
  if (mask.shape() != templ.shape())
    fail(ErrorCode::ShapeMismatch, "mask " + mask.shape().str() + " vs template " + templ.shape().str());
  NiftiHeader h = templ;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  Grid3<std::uint8_t> bits(mask.shape());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = mask.bits[i] ? 1 : 0;
  return encode_values(bits, h);
}

}  // namespace ctscreen::nifti
