#include "wamd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "wamd/common.hpp"

namespace wamd {

namespace {

constexpr char kMagic[] = {'M', 'S', 'N', 'T', '1', '\n'};
constexpr std::size_t kMagicLen = sizeof(kMagic);

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

void put_f32le(std::vector<std::uint8_t>& out, float f) {
  put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32le() {
    need(4, "32-bit field");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

  float f32le() { return std::bit_cast<float>(u32le()); }

  std::string str(std::size_t len) {
    need(len, "name bytes");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  void expect_magic() {
    need(kMagicLen, "magic header");
    if (std::memcmp(bytes_.data(), kMagic, kMagicLen) != 0)
      throw std::runtime_error("checkpoint: bad magic header at offset 0");
    pos_ += kMagicLen;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error(msg("checkpoint: truncated ", what,
                                   " at offset ", pos_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(
    const std::vector<NamedArray>& arrays) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  for (const auto& a : arrays) {
    put_u32le(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_u32le(out, static_cast<std::uint32_t>(a.shape.size()));
    std::uint64_t count = 1;
    for (std::uint32_t e : a.shape) {
      put_u32le(out, e);
      count *= e;
    }
    if (count != a.values.size())
      reject_input("checkpoint array '", a.name, "' has ", a.values.size(),
                   " values for ", count, " extents");
    for (float f : a.values) put_f32le(out, f);
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(
    const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_magic();
  std::vector<NamedArray> arrays;
  while (!r.at_end()) {
    NamedArray a;
    const std::uint32_t name_len = r.u32le();
    a.name = r.str(name_len);
    const std::uint32_t dims = r.u32le();
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < dims; ++i) {
      a.shape.push_back(r.u32le());
      count *= a.shape.back();
    }
    a.values.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) a.values.push_back(r.f32le());
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedArray>& arrays) {
  const auto bytes = encode_checkpoint(arrays);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(msg("cannot open ", path.string(),
                                         " for writing"));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(msg("write failed: ", path.string()));
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(msg("cannot open ", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace wamd
