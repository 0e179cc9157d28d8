#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace glifuse {

// NIfTI-1 datatype codes (subset this project reads; it writes only
// float32 images and uint8 label masks).
enum NiftiDatatype : std::int16_t {
  kNiftiUint8 = 2,
  kNiftiInt16 = 4,
  kNiftiInt32 = 8,
  kNiftiFloat32 = 16,
  kNiftiFloat64 = 64,
  kNiftiInt8 = 256,
  kNiftiUint16 = 512,
  kNiftiUint32 = 768,
};

// The fields of the fixed 348-byte NIfTI-1 header this project uses.
// Serialization is explicit and field-by-field; unused header regions
// are written as zeros.
struct NiftiHeader {
  std::array<std::int16_t, 8> dim{};  // dim[0] = rank, dim[1..7] = extents
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::string descrip;
  std::array<char, 4> magic{{'n', '+', '1', '\0'}};

  int rank() const { return dim[0]; }
  std::vector<std::size_t> extents() const;
  std::size_t voxel_count() const;
};

// A decoded image: scl_slope/scl_inter already applied and voxels
// reordered so that the last extent varies fastest in memory
// (row-major over extents()).
struct NiftiImage {
  NiftiHeader header;
  std::vector<float> values;
};

// Builds a header for a freshly written image. `datatype` must be
// kNiftiFloat32 or kNiftiUint8.
NiftiHeader make_nifti_header(const std::vector<std::size_t>& extents,
                              std::int16_t datatype,
                              const std::vector<float>& spacing = {});

// Reads a .nii file, transparently handling gzip compression (detected
// by the 0x1f8b prefix) and either byte order. For "ni1" magic the
// voxel payload is read from the sibling .img file.
NiftiImage read_nifti(const std::string& path);

// Writes an uncompressed single-file ".nii" image. `values` must hold
// header.voxel_count() voxels in row-major order over extents().
// float32 headers store the values verbatim; uint8 headers require all
// values to be integers in [0, 255].
void write_nifti(const std::string& path, const NiftiHeader& header,
                 const std::vector<float>& values);

}  // namespace glifuse
