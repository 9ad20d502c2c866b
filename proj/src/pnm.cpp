#include "wamd/pnm.hpp"

#include <cmath>
#include <fstream>

#include "wamd/common.hpp"

namespace wamd {

namespace {

bool is_space(std::uint8_t c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n';
}

class Scanner {
 public:
  explicit Scanner(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  std::uint8_t byte() {
    need(1, "payload byte");
    return bytes_[pos_++];
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        return;
      }
    }
  }

  int number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || bytes_[pos_] < '0' || bytes_[pos_] > '9')
      fail(msg("expected ", what));
    long v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1 << 30) fail(msg(what, " out of range"));
    }
    return static_cast<int>(v);
  }

  void single_space(const char* what) {
    need(1, what);
    if (!is_space(bytes_[pos_])) fail(msg("expected whitespace before ", what));
    ++pos_;
  }

  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) fail(msg("truncated ", what));
  }

  [[noreturn]] void fail(const std::string& reason) const {
    throw std::runtime_error(msg("pnm parse error at byte offset ", pos_, ": ",
                                 reason));
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  Scanner s(bytes);
  s.need(2, "magic");
  const char m0 = static_cast<char>(s.byte());
  const char m1 = static_cast<char>(s.byte());
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    s.fail("magic must be P5 or P6");

  PnmImage img;
  img.channels = (m1 == '5') ? 1 : 3;
  img.width = s.number("width");
  img.height = s.number("height");
  img.maxval = s.number("maxval");
  if (img.width <= 0 || img.height <= 0) s.fail("non-positive dimensions");
  if (img.maxval <= 0 || img.maxval > 65535) s.fail("maxval outside 1..65535");
  s.single_space("payload");

  const std::size_t count = static_cast<std::size_t>(img.width) * img.height *
                            img.channels;
  img.samples.reserve(count);
  const bool wide = img.maxval > 255;
  s.need(count * (wide ? 2 : 1), "payload");
  for (std::size_t i = 0; i < count; ++i) {
    if (wide) {
      const std::uint16_t hi = s.byte();
      const std::uint16_t lo = s.byte();
      img.samples.push_back(static_cast<std::uint16_t>((hi << 8) | lo));
    } else {
      img.samples.push_back(s.byte());
    }
  }
  return img;
}

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(msg("cannot open ", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(msg(path.string(), ": ", e.what()));
  }
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3)
    reject_input("write_pnm supports 1 or 3 channels, got ", image.channels);
  if (image.maxval <= 0 || image.maxval > 65535)
    reject_input("write_pnm maxval outside 1..65535");
  const std::size_t count = static_cast<std::size_t>(image.width) *
                            image.height * image.channels;
  if (image.samples.size() != count)
    reject_input("write_pnm sample count ", image.samples.size(),
                 " does not match dimensions");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(msg("cannot open ", path.string(),
                                         " for writing"));
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n"
      << image.maxval << "\n";
  const bool wide = image.maxval > 255;
  for (std::uint16_t v : image.samples) {
    if (wide) {
      const char hi = static_cast<char>((v >> 8) & 0xFF);
      const char lo = static_cast<char>(v & 0xFF);
      out.write(&hi, 1);
      out.write(&lo, 1);
    } else {
      const char b = static_cast<char>(v & 0xFF);
      out.write(&b, 1);
    }
  }
  if (!out) throw std::runtime_error(msg("write failed: ", path.string()));
}

std::vector<Raster<double>> read_raster(const std::filesystem::path& path) {
  const PnmImage img = read_pnm(path);
  std::vector<Raster<double>> channels;
  channels.reserve(img.channels);
  const auto maxval = static_cast<double>(img.maxval);
  for (int c = 0; c < img.channels; ++c) {
    Raster<double> r(img.height, img.width);
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j)
        r(i, j) = img.samples[(static_cast<std::size_t>(i) * img.width + j) *
                                  img.channels +
                              c] /
                  maxval;
    channels.push_back(std::move(r));
  }
  return channels;
}

void write_raster(const Raster<double>& raster,
                  const std::filesystem::path& path, int maxval) {
  PnmImage img;
  img.width = static_cast<int>(raster.cols());
  img.height = static_cast<int>(raster.rows());
  img.channels = 1;
  img.maxval = maxval;
  img.samples.reserve(static_cast<std::size_t>(img.width) * img.height);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      double v = raster(i, j);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      img.samples.push_back(
          static_cast<std::uint16_t>(std::lround(v * maxval)));
    }
  write_pnm(path, img);
}

}  // namespace wamd
