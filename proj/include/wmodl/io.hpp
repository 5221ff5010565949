#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wmodl/modl.hpp"
#include "wmodl/volume.hpp"

namespace wmodl {

/// Volume container, little-endian throughout:
///   "WMDL" | u16 version | u16 dtype | u32 ndim | u32 dims[ndim] | u8 domain[ndim] | payload
/// Payload is x-fastest. complex64 stores interleaved (re, im) float32 pairs, so
/// values round-trip exactly when they are representable in single precision.
/// A 4D file holds multi-coil data with the coil axis last.
inline constexpr std::uint16_t kVolumeFormatVersion = 1;

enum class DType : std::uint16_t
{
  Complex64 = 1,
  Real32 = 2,
  Label32 = 3
};

std::size_t dtype_size(DType t);

struct VolumeHeader
{
  std::uint16_t version = kVolumeFormatVersion;
  DType dtype = DType::Complex64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> domains;

  std::size_t header_bytes() const { return 12 + 5 * dims.size(); }
  std::size_t payload_bytes() const;
};

void write_volume(std::filesystem::path const &path, ComplexVolume const &v);
void write_volume(std::filesystem::path const &path, RealVolume const &v);
void write_volume(std::filesystem::path const &path, LabelVolume const &v);
void write_multicoil(std::filesystem::path const &path, MultiCoilData const &b);

VolumeHeader read_volume_header(std::filesystem::path const &path);
ComplexVolume read_complex_volume(std::filesystem::path const &path);
RealVolume read_real_volume(std::filesystem::path const &path);
LabelVolume read_label_volume(std::filesystem::path const &path);
MultiCoilData read_multicoil(std::filesystem::path const &path);

/// Checkpoint container:
///   "WMCK" | u16 version | u32 ncontrasts | u32 n_outer | u32 kernel | f64 leaky slope
///   | per net (image, kspace): u32 layers, per layer u32 out, u32 in, f64 weights, f64 bias
///   | f64 lambda1_raw | f64 lambda2_raw | u32 metadata entries, each u32 len + key, u32 len + value
inline constexpr std::uint16_t kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

void write_checkpoint(std::filesystem::path const &path, ModlParams const &p, CheckpointMeta const &meta = {});
ModlParams read_checkpoint(std::filesystem::path const &path, CheckpointMeta *meta = nullptr);

/// Binary P5 greyscale, min-max windowed to 0..255.
void write_pgm(std::filesystem::path const &path, Eigen::ArrayXXd const &image);

/// Magnitude of the z-slice `iz` as a (ny rows, nx columns) image.
Eigen::ArrayXXd slice_magnitude(ComplexVolume const &v, Index iz);
Eigen::ArrayXXd slice_values(RealVolume const &v, Index iz);

std::vector<std::uint8_t> read_bytes(std::filesystem::path const &path);

} // namespace wmodl
