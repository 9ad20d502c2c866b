#include "wamd/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "wamd/pnm.hpp"

namespace wamd {

namespace {

Partition partition_from(const std::string& s) {
  if (s == "train") return Partition::train;
  if (s == "val") return Partition::val;
  if (s == "test") return Partition::test;
  reject_input("unknown partition '", s, "' in manifest");
}

Label label_from(const std::string& s) {
  if (s == "bona_fide") return Label::bona_fide;
  if (s == "morph") return Label::morph;
  reject_input("unknown label '", s, "' in manifest");
}

std::string join_ids(const std::vector<std::uint64_t>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) os << '+';
    char buf[24];
    std::snprintf(buf, sizeof(buf), "s%04llu",
                  static_cast<unsigned long long>(ids[i]));
    os << buf;
  }
  return os.str();
}

std::vector<std::uint64_t> split_ids(const std::string& s) {
  std::vector<std::uint64_t> ids;
  std::size_t at = 0;
  while (at < s.size()) {
    std::size_t end = s.find('+', at);
    if (end == std::string::npos) end = s.size();
    std::string tok = s.substr(at, end - at);
    if (tok.empty() || tok[0] != 's')
      reject_input("bad subject id token '", tok, "' in manifest");
    ids.push_back(std::stoull(tok.substr(1)));
    at = end + 1;
  }
  return ids;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  for (const char* part : {"train", "val", "test"})
    for (const char* label : {"bona_fide", "morph"})
      fs::create_directories(root / part / label);

  std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
  if (!manifest)
    throw std::runtime_error(msg("cannot write manifest under ",
                                 root.string()));
  manifest << "sample_id,partition,label,subject_ids,alpha\n";
  for (const auto& s : dataset.samples) {
    const auto dir = root / to_string(s.partition) / to_string(s.face.label);
    write_raster(s.face.image, dir / (s.id + ".pgm"));
    manifest << s.id << ',' << to_string(s.partition) << ','
             << to_string(s.face.label) << ',' << join_ids(s.face.subject_ids)
             << ',';
    if (s.face.label == Label::morph) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6g", s.alpha);
      manifest << buf;
    }
    manifest << '\n';
  }
  if (!manifest)
    throw std::runtime_error(msg("manifest write failed under ",
                                 root.string()));
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.csv");
  if (!in)
    throw std::runtime_error(msg("cannot open manifest under ",
                                 root.string()));
  std::vector<ManifestRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 5> field;
    std::size_t at = 0;
    for (int f = 0; f < 5; ++f) {
      std::size_t end = (f == 4) ? line.size() : line.find(',', at);
      if (end == std::string::npos)
        reject_input("manifest row with missing fields: ", line);
      field[f] = line.substr(at, end - at);
      at = end + 1;
    }
    ManifestRow row;
    row.sample_id = field[0];
    row.partition = partition_from(field[1]);
    row.label = label_from(field[2]);
    row.subject_ids = split_ids(field[3]);
    row.alpha = field[4].empty() ? 0.0 : std::stod(field[4]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<LoadedSample> load_dataset(const std::filesystem::path& root) {
  std::vector<LoadedSample> out;
  for (const auto& row : read_manifest(root)) {
    const auto path = root / to_string(row.partition) / to_string(row.label) /
                      (row.sample_id + ".pgm");
    auto channels = read_raster(path);
    LoadedSample s;
    s.id = row.sample_id;
    s.partition = row.partition;
    s.label = row.label;
    s.image = to_grayscale(channels);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace wamd
