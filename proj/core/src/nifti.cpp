// NIfTI-1 single-file reader/writer.
//
// The 348-byte header is serialized field by field at the offsets fixed
// by the standard (dim at 40, datatype at 70, bitpix at 72, pixdim at
// 76, vox_offset at 108, scl_slope/scl_inter at 112/116, magic at 344),
// so no struct packing assumptions are made. Reading handles gzip
// streams and byte-swapped (opposite endian) files; writing always
// emits uncompressed little-endian "n+1" images.

#include "glifuse/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace glifuse {

namespace {

constexpr std::size_t kHeaderBytes = 348;
constexpr std::size_t kVoxOffset = 352;

std::uint16_t decode_u16(const unsigned char* p, bool swap) {
  std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  return swap ? static_cast<std::uint16_t>((v >> 8) | (v << 8)) : v;
}

std::uint32_t decode_u32(const unsigned char* p, bool swap) {
  std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                    (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  if (swap) {
    v = ((v >> 24) & 0xffu) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) |
        ((v << 24) & 0xff000000u);
  }
  return v;
}

std::uint64_t decode_u64(const unsigned char* p, bool swap) {
  if (swap) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::int16_t decode_i16(const unsigned char* p, bool swap) {
  return static_cast<std::int16_t>(decode_u16(p, swap));
}

float decode_f32(const unsigned char* p, bool swap) {
  return std::bit_cast<float>(decode_u32(p, swap));
}

void encode_u16(unsigned char* p, std::uint16_t v) {
  p[0] = static_cast<unsigned char>(v & 0xff);
  p[1] = static_cast<unsigned char>(v >> 8);
}

void encode_u32(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

void encode_f32(unsigned char* p, float v) {
  encode_u32(p, std::bit_cast<std::uint32_t>(v));
}

int bitpix_for(std::int16_t datatype) {
  switch (datatype) {
    case kNiftiUint8:
    case kNiftiInt8:
      return 8;
    case kNiftiInt16:
    case kNiftiUint16:
      return 16;
    case kNiftiInt32:
    case kNiftiUint32:
    case kNiftiFloat32:
      return 32;
    case kNiftiFloat64:
      return 64;
    default:
      return 0;
  }
}

bool is_gzip(const std::vector<unsigned char>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path);
  }
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  return bytes;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in,
                                  const std::string& path) {
  z_stream zs{};
  // 15 + 16 selects gzip decoding.
  if (inflateInit2(&zs, 15 + 16) != Z_OK) {
    throw std::runtime_error("zlib init failed for " + path);
  }
  std::vector<unsigned char> out;
  out.reserve(in.size() * 4);
  unsigned char buf[1 << 16];
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("corrupt gzip stream: " + path);
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (rc != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) {
    throw std::runtime_error("truncated gzip stream: " + path);
  }
  return out;
}

struct ParsedHeader {
  NiftiHeader header;
  bool swapped = false;
};

ParsedHeader parse_header(const std::vector<unsigned char>& bytes,
                          const std::string& path) {
  if (bytes.size() < kHeaderBytes) {
    throw std::runtime_error("truncated file (header): " + path);
  }
  const unsigned char* p = bytes.data();
  bool swapped = false;
  std::int32_t sizeof_hdr = static_cast<std::int32_t>(decode_u32(p, false));
  if (sizeof_hdr != 348) {
    sizeof_hdr = static_cast<std::int32_t>(decode_u32(p, true));
    if (sizeof_hdr != 348) {
      throw std::runtime_error("malformed header (sizeof_hdr != 348): " + path);
    }
    swapped = true;
  }

  NiftiHeader h;
  for (int i = 0; i < 8; ++i) {
    h.dim[i] = decode_i16(p + 40 + 2 * i, swapped);
  }
  h.datatype = decode_i16(p + 70, swapped);
  h.bitpix = decode_i16(p + 72, swapped);
  for (int i = 0; i < 8; ++i) {
    h.pixdim[i] = decode_f32(p + 76 + 4 * i, swapped);
  }
  h.vox_offset = decode_f32(p + 108, swapped);
  h.scl_slope = decode_f32(p + 112, swapped);
  h.scl_inter = decode_f32(p + 116, swapped);
  const char* d = reinterpret_cast<const char*>(p + 148);
  h.descrip.assign(d, strnlen(d, 80));
  std::memcpy(h.magic.data(), p + 344, 4);

  if (h.magic[3] != '\0' ||
      (std::memcmp(h.magic.data(), "n+1", 3) != 0 &&
       std::memcmp(h.magic.data(), "ni1", 3) != 0)) {
    throw std::runtime_error("malformed header (bad magic): " + path);
  }
  if (h.dim[0] < 1 || h.dim[0] > 7) {
    throw std::runtime_error("malformed header (dim[0] outside [1,7]): " + path);
  }
  for (int i = 1; i <= h.dim[0]; ++i) {
    if (h.dim[i] < 1) {
      throw std::runtime_error("malformed header (nonpositive extent): " + path);
    }
  }
  if (bitpix_for(h.datatype) == 0) {
    throw std::runtime_error("unknown datatype code " +
                             std::to_string(h.datatype) + ": " + path);
  }
  return {h, swapped};
}

double decode_voxel(const unsigned char* p, std::int16_t datatype, bool swap) {
  switch (datatype) {
    case kNiftiUint8:
      return static_cast<double>(*p);
    case kNiftiInt8:
      return static_cast<double>(static_cast<std::int8_t>(*p));
    case kNiftiInt16:
      return static_cast<double>(decode_i16(p, swap));
    case kNiftiUint16:
      return static_cast<double>(decode_u16(p, swap));
    case kNiftiInt32:
      return static_cast<double>(static_cast<std::int32_t>(decode_u32(p, swap)));
    case kNiftiUint32:
      return static_cast<double>(decode_u32(p, swap));
    case kNiftiFloat32:
      return static_cast<double>(decode_f32(p, swap));
    case kNiftiFloat64:
      return std::bit_cast<double>(decode_u64(p, swap));
    default:
      return 0.0;
  }
}

}  // namespace

std::vector<std::size_t> NiftiHeader::extents() const {
  std::vector<std::size_t> e;
  for (int i = 1; i <= dim[0]; ++i) {
    e.push_back(static_cast<std::size_t>(dim[i]));
  }
  return e;
}

std::size_t NiftiHeader::voxel_count() const {
  std::size_t n = 1;
  for (int i = 1; i <= dim[0]; ++i) {
    n *= static_cast<std::size_t>(dim[i]);
  }
  return n;
}

NiftiHeader make_nifti_header(const std::vector<std::size_t>& extents,
                              std::int16_t datatype,
                              const std::vector<float>& spacing) {
  if (extents.empty() || extents.size() > 7) {
    throw std::invalid_argument("nifti header rank must be in [1,7]");
  }
  if (datatype != kNiftiFloat32 && datatype != kNiftiUint8) {
    throw std::invalid_argument("writable datatypes are float32 and uint8");
  }
  NiftiHeader h;
  h.dim.fill(1);
  h.dim[0] = static_cast<std::int16_t>(extents.size());
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (extents[i] == 0 || extents[i] > 32767) {
      throw std::invalid_argument("nifti extent out of range");
    }
    h.dim[i + 1] = static_cast<std::int16_t>(extents[i]);
  }
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(bitpix_for(datatype));
  h.pixdim.fill(1.0f);
  h.pixdim[0] = 0.0f;
  for (std::size_t i = 0; i < spacing.size() && i < extents.size(); ++i) {
    h.pixdim[i + 1] = spacing[i];
  }
  h.vox_offset = static_cast<float>(kVoxOffset);
  h.scl_slope = 0.0f;
  h.scl_inter = 0.0f;
  return h;
}

NiftiImage read_nifti(const std::string& path) {
  std::vector<unsigned char> bytes = read_file_bytes(path);
  if (is_gzip(bytes)) {
    bytes = gunzip(bytes, path);
  }
  auto [header, swapped] = parse_header(bytes, path);

  const std::size_t count = header.voxel_count();
  const std::size_t voxel_bytes = static_cast<std::size_t>(bitpix_for(header.datatype)) / 8;

  const unsigned char* payload = nullptr;
  std::vector<unsigned char> img_bytes;
  std::size_t payload_avail = 0;
  if (std::memcmp(header.magic.data(), "n+1", 3) == 0) {
    auto offset = static_cast<std::size_t>(header.vox_offset);
    if (header.vox_offset < static_cast<float>(kHeaderBytes)) {
      throw std::runtime_error("malformed header (vox_offset < 348): " + path);
    }
    if (bytes.size() < offset) {
      throw std::runtime_error("truncated file (offset beyond end): " + path);
    }
    payload = bytes.data() + offset;
    payload_avail = bytes.size() - offset;
  } else {
    // "ni1": header/data pair, voxels live in the sibling .img file.
    std::filesystem::path img(path);
    img.replace_extension(".img");
    img_bytes = read_file_bytes(img.string());
    if (is_gzip(img_bytes)) {
      img_bytes = gunzip(img_bytes, img.string());
    }
    auto offset = static_cast<std::size_t>(std::max(0.0f, header.vox_offset));
    if (img_bytes.size() < offset) {
      throw std::runtime_error("truncated file (offset beyond end): " + img.string());
    }
    payload = img_bytes.data() + offset;
    payload_avail = img_bytes.size() - offset;
  }
  if (payload_avail < count * voxel_bytes) {
    throw std::runtime_error("truncated file (voxel payload): " + path);
  }

  // Decode, applying the affine intensity scaling when slope != 0, and
  // reorder from the file layout (first extent fastest) to row-major
  // (last extent fastest).
  const auto ext = header.extents();
  const int rank = header.rank();
  std::vector<std::size_t> mem_stride(rank);
  mem_stride[rank - 1] = 1;
  for (int i = rank - 2; i >= 0; --i) {
    mem_stride[i] = mem_stride[i + 1] * ext[i + 1];
  }
  const bool scale = header.scl_slope != 0.0f;
  std::vector<float> values(count);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t f = 0; f < count; ++f) {
    double v = decode_voxel(payload + f * voxel_bytes, header.datatype, swapped);
    if (scale) {
      v = v * header.scl_slope + header.scl_inter;
    }
    std::size_t m = 0;
    for (int i = 0; i < rank; ++i) {
      m += idx[i] * mem_stride[i];
    }
    values[m] = static_cast<float>(v);
    for (int i = 0; i < rank; ++i) {  // odometer: first axis fastest in file
      if (++idx[i] < ext[i]) break;
      idx[i] = 0;
    }
  }
  return {header, std::move(values)};
}

void write_nifti(const std::string& path, const NiftiHeader& header,
                 const std::vector<float>& values) {
  const std::size_t count = header.voxel_count();
  if (values.size() != count) {
    throw std::invalid_argument("write_nifti: value count " +
                                std::to_string(values.size()) +
                                " does not match header dims (" +
                                std::to_string(count) + ")");
  }
  if (header.datatype != kNiftiFloat32 && header.datatype != kNiftiUint8) {
    throw std::invalid_argument("write_nifti: unsupported datatype for writing");
  }
  const std::size_t voxel_bytes = header.datatype == kNiftiFloat32 ? 4 : 1;

  std::vector<unsigned char> out(kVoxOffset + count * voxel_bytes, 0);
  unsigned char* p = out.data();
  encode_u32(p + 0, 348);
  p[38] = 'r';  // regular, per convention
  for (int i = 0; i < 8; ++i) {
    encode_u16(p + 40 + 2 * i, static_cast<std::uint16_t>(header.dim[i]));
  }
  encode_u16(p + 70, static_cast<std::uint16_t>(header.datatype));
  encode_u16(p + 72, static_cast<std::uint16_t>(header.bitpix));
  for (int i = 0; i < 8; ++i) {
    encode_f32(p + 76 + 4 * i, header.pixdim[i]);
  }
  encode_f32(p + 108, static_cast<float>(kVoxOffset));
  encode_f32(p + 112, header.scl_slope);
  encode_f32(p + 116, header.scl_inter);
  std::size_t dlen = std::min<std::size_t>(header.descrip.size(), 79);
  std::memcpy(p + 148, header.descrip.data(), dlen);
  std::memcpy(p + 344, "n+1\0", 4);

  // Reorder row-major memory layout to the file layout.
  const auto ext = header.extents();
  const int rank = header.rank();
  std::vector<std::size_t> mem_stride(rank);
  mem_stride[rank - 1] = 1;
  for (int i = rank - 2; i >= 0; --i) {
    mem_stride[i] = mem_stride[i + 1] * ext[i + 1];
  }
  unsigned char* payload = p + kVoxOffset;
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t f = 0; f < count; ++f) {
    std::size_t m = 0;
    for (int i = 0; i < rank; ++i) {
      m += idx[i] * mem_stride[i];
    }
    const float v = values[m];
    if (header.datatype == kNiftiFloat32) {
      encode_f32(payload + f * 4, v);
    } else {
      const float r = std::nearbyint(v);
      if (r < 0.0f || r > 255.0f || std::abs(v - r) > 1e-4f) {
        throw std::invalid_argument(
            "write_nifti: uint8 output requires integer values in [0,255]");
      }
      payload[f] = static_cast<unsigned char>(r);
    }
    for (int i = 0; i < rank; ++i) {
      if (++idx[i] < ext[i]) break;
      idx[i] = 0;
    }
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw std::runtime_error("cannot open file for writing: " + path);
  }
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace glifuse
