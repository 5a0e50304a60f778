#include "sst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace sst {
namespace {

constexpr char kMagic[] = "SSTCKPT1";
constexpr std::size_t kMagicLen = 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kMagic, kMagicLen);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(kMagicLen) != std::string(kMagic, kMagicLen)) throw DataError("not an SSTCKPT1 container");
  const std::uint64_t count = in.u64();
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = in.u64();
    std::string name = in.take(name_len);
    const std::uint64_t rank = in.u64();
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(in.u64());
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint records");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

void restore_into(const NamedTensors& from, const NamedTensors& into) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : from) by_name[name] = &t;
  for (const auto& [name, t] : into) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                           ", expected " + shape_str(t.shape()));
    }
    Tensor dst = t;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.data().begin());
  }
}

}  // namespace sst
