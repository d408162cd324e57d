#include "eifnet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "eifnet/error.hpp"

namespace eifnet {

namespace {

constexpr char kMagic[4] = {'E', 'I', 'F', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("EIFT: truncated ") + what);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(16 + 8 * t.rank() + 4 * t.size());
  put_le<std::uint32_t>(out, kEiftVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor<float> decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("EIFT: bad magic");
  }
  Reader r(bytes);
  r.get_le<std::uint32_t>("magic");
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kEiftVersion) throw FormatError("EIFT: unsupported version " + std::to_string(version));
  const auto rank = r.get_le<std::uint32_t>("rank");
  if (rank > kEiftMaxRank) throw FormatError("EIFT: rank " + std::to_string(rank) + " exceeds limit");
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.get_le<std::uint64_t>("dims");
    if (d == 0) throw FormatError("EIFT: zero extent");
    if (count > std::numeric_limits<std::uint64_t>::max() / d) throw FormatError("EIFT: dim overflow");
    count *= d;
    shape.push_back(static_cast<std::size_t>(d));
  }
  if (count > r.remaining() / 4) throw FormatError("EIFT: truncated payload");
  if (r.remaining() != count * 4) throw FormatError("EIFT: trailing bytes after payload");
  std::vector<float> data(static_cast<std::size_t>(count));
  for (auto& v : data) v = std::bit_cast<float>(r.get_le<std::uint32_t>("payload"));
  return Tensor<float>(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Tensor<float> read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace eifnet
