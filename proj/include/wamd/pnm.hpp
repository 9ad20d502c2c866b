#pragma once

// Netpbm raster I/O: PGM (P5) and PPM (P6), 8- and 16-bit, 16-bit samples
// big-endian. Parse failures report the byte offset.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "wamd/wavelet.hpp"  // Raster

namespace wamd {

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = PGM, 3 = PPM
  int maxval = 255;
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

PnmImage read_pnm(const std::filesystem::path& path);
PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

/// Reads a PGM/PPM into per-channel rasters with values mapped to [0,1].
std::vector<Raster<double>> read_raster(const std::filesystem::path& path);

/// Writes a [0,1] raster as PGM with the given maxval (255 or 65535).
void write_raster(const Raster<double>& raster,
                  const std::filesystem::path& path, int maxval = 255);

}  // namespace wamd
