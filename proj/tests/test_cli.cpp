// Drives the wamd binary itself (path injected by the build) to pin down the
// command-line contracts: determinism of generated trees and training logs,
// the decompose band files, config handling, and failure exit codes.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wamd/dataset_io.hpp"
#include "wamd/pnm.hpp"
#include "wamd/wavelet.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWorkRoot = fs::temp_directory_path() / "wamd_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(WAMD_BIN) + " " + args + " > " +
                          (kWorkRoot / "out.log").string() + " 2>&1";
  return std::system(cmd.c_str());
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool trees_equal(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  for (const auto& p : rel) {
    if (!fs::exists(b / p)) return false;
    if (slurp(a / p) != slurp(b / p)) return false;
  }
  return true;
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWorkRoot);
    fs::create_directories(kWorkRoot);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("generate twice with one seed produces byte-identical trees") {
  workspace();
  const auto a = kWorkRoot / "gen_a";
  const auto b = kWorkRoot / "gen_b";
  REQUIRE(run("generate --seed 5 --subjects 10 --size 16 --out '" +
              a.string() + "' --verify") == 0);
  REQUIRE(run("generate --seed 5 --subjects 10 --size 16 --out '" +
              b.string() + "'") == 0);
  CHECK(trees_equal(a, b));

  // manifest row count equals the number of sample files
  const auto rows = wamd::read_manifest(a);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().extension() == ".pgm") ++files;
  CHECK(rows.size() == files);
}

TEST_CASE("a missing seed is a hard error") {
  workspace();
  CHECK(run("generate --subjects 10 --out '" +
            (kWorkRoot / "no_seed").string() + "'") != 0);
}

TEST_CASE("config file values apply and flags take precedence") {
  workspace();
  const auto cfg = kWorkRoot / "run.cfg";
  {
    std::ofstream out(cfg);
    out << "# run configuration\n"
        << "seed = 9\n"
        << "subjects = 10\n"
        << "size = 16\n";
  }
  const auto from_file = kWorkRoot / "cfg_file";
  REQUIRE(run("generate --config '" + cfg.string() + "' --out '" +
              from_file.string() + "'") == 0);
  CHECK(wamd::read_manifest(from_file).size() > 0);

  // flag overrides the file's subject count: 12 subjects -> 6/1/... split
  const auto from_flag = kWorkRoot / "cfg_flag";
  REQUIRE(run("generate --config '" + cfg.string() + "' --subjects 12 "
              "--out '" + from_flag.string() + "'") == 0);
  std::set<std::string> subjects;
  for (const auto& row : wamd::read_manifest(from_flag))
    for (auto id : row.subject_ids) subjects.insert(std::to_string(id));
  CHECK(subjects.size() == 12);

  const auto bad = kWorkRoot / "bad.cfg";
  {
    std::ofstream out(bad);
    out << "not_a_key = 1\n";
  }
  CHECK(run("generate --config '" + bad.string() + "' --seed 1 --out '" +
            (kWorkRoot / "bad_out").string() + "'") != 0);
}

TEST_CASE("decompose writes 48 bands that re-read within quantization error") {
  workspace();
  const auto data = kWorkRoot / "gen_a";
  if (!fs::exists(data / "manifest.csv"))
    REQUIRE(run("generate --seed 5 --subjects 10 --size 16 --out '" +
                data.string() + "'") == 0);
  const auto rows = wamd::read_manifest(data);
  const auto image = data / to_string(rows[0].partition) /
                     to_string(rows[0].label) / (rows[0].sample_id + ".pgm");

  const auto bands_dir = kWorkRoot / "bands";
  REQUIRE(run("decompose --seed 1 --image '" + image.string() + "' --out '" +
              bands_dir.string() + "'") == 0);

  std::ifstream manifest(bands_dir / "manifest.txt");
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(manifest, line))
    if (!line.empty()) labels.push_back(line);
  REQUIRE(labels.size() == 48);

  std::ifstream sidecar(bands_dir / "minmax.txt");
  std::map<std::string, std::pair<double, double>> minmax;
  std::string name;
  double lo = 0, hi = 0;
  while (sidecar >> name >> lo >> hi) minmax[name] = {lo, hi};
  REQUIRE(minmax.size() == 48);

  const auto gray = wamd::to_grayscale(wamd::read_raster(image));
  const auto stack = wamd::packet_decompose(gray, wamd::haar());
  for (std::size_t i = 0; i < 48; ++i) {
    CHECK(labels[i] == stack.labels[i]);
    char fname[64];
    std::snprintf(fname, sizeof(fname), "band_%02zu_%s.pgm", i,
                  labels[i].c_str());
    const auto img = wamd::read_pnm(bands_dir / fname);
    REQUIRE(img.maxval == 65535);
    const auto [mn, mx] = minmax[labels[i]];
    const double step = (mx - mn) / 65535.0;
    for (Eigen::Index r = 0; r < stack.bands[i].rows(); ++r)
      for (Eigen::Index c = 0; c < stack.bands[i].cols(); ++c) {
        const double back =
            mn + img.samples[r * stack.bands[i].cols() + c] * step;
        CHECK(std::abs(back - stack.bands[i](r, c)) <=
              0.5 * step + 1e-12);
      }
  }
}

TEST_CASE("decompose maps a constant image to flat mid-gray bands") {
  workspace();
  const auto img_path = kWorkRoot / "flat.pgm";
  wamd::write_raster(wamd::Raster<double>::Constant(16, 16, 0.6), img_path);
  const auto out = kWorkRoot / "flat_bands";
  REQUIRE(run("decompose --seed 1 --image '" + img_path.string() +
              "' --out '" + out.string() + "'") == 0);
  const auto band = wamd::read_pnm(out / "band_00_LH.LL.LL.pgm");
  for (auto v : band.samples) CHECK(v == 32768);
}

TEST_CASE("train runs are byte-identical for one seed") {
  workspace();
  const auto data = kWorkRoot / "train_data";
  REQUIRE(run("generate --seed 3 --subjects 28 --size 16 --out '" +
              data.string() + "'") == 0);
  const auto r1 = kWorkRoot / "run1";
  const auto r2 = kWorkRoot / "run2";
  const std::string train_args =
      "train --seed 3 --data '" + data.string() +
      "' --size 16 --epochs 2 --batch 8";
  REQUIRE(run(train_args + " --out '" + r1.string() + "'") == 0);
  REQUIRE(run(train_args + " --out '" + r2.string() + "'") == 0);
  CHECK(slurp(r1 / "training_log.csv") == slurp(r2 / "training_log.csv"));
  CHECK(slurp(r1 / "model.ckpt") == slurp(r2 / "model.ckpt"));

  // eval emits metrics and DET csv deterministically
  const auto e1 = kWorkRoot / "eval1";
  const auto e2 = kWorkRoot / "eval2";
  const std::string eval_args = "eval --seed 3 --data '" + data.string() +
                                "' --size 16 --checkpoint '" +
                                (r1 / "model.ckpt").string() + "'";
  REQUIRE(run(eval_args + " --out '" + e1.string() + "'") == 0);
  REQUIRE(run(eval_args + " --out '" + e2.string() + "'") == 0);
  CHECK(slurp(e1 / "metrics.csv") == slurp(e2 / "metrics.csv"));
  CHECK(slurp(e1 / "det.csv") == slurp(e2 / "det.csv"));

  std::ifstream metrics(e1 / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  CHECK(header == "deer,bpcer5,bpcer10");
}

TEST_CASE("eval on a missing checkpoint fails with a nonzero exit") {
  workspace();
  CHECK(run("eval --seed 1 --data nowhere --checkpoint missing.ckpt --out '" +
            (kWorkRoot / "e").string() + "'") != 0);
}
