#pragma once

// Dataset disk layout: <root>/<partition>/<label>/<sample_id>.pgm plus
// manifest.csv with columns sample_id,partition,label,subject_ids,alpha
// (subject ids joined by '+'; alpha empty for bona fides).

#include <filesystem>
#include <string>
#include <vector>

#include "wamd/data.hpp"

namespace wamd {

struct ManifestRow {
  std::string sample_id;
  Partition partition = Partition::train;
  Label label = Label::bona_fide;
  std::vector<std::uint64_t> subject_ids;
  double alpha = 0.0;
};

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

std::vector<ManifestRow> read_manifest(const std::filesystem::path& root);

struct LoadedSample {
  std::string id;
  Partition partition = Partition::train;
  Label label = Label::bona_fide;
  Raster<double> image;
};

/// Reads every manifest row back with its raster.
std::vector<LoadedSample> load_dataset(const std::filesystem::path& root);

}  // namespace wamd
