#include "mofelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "mofelab/error.hpp"

namespace mofelab {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'F', 'E', 'L', 'A', 'B', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& buf, double v) {
  put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t n) : data_(data), n_(n) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t k) {
    if (pos_ + k > n_) throw DataError("checkpoint: truncated file");
  }
  const unsigned char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const CheckpointEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(ck.entries.size()));
  for (const CheckpointEntry& e : ck.entries) {
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    put_u32(buf, static_cast<std::uint32_t>(e.dims.size()));
    for (std::size_t d : e.dims) put_u64(buf, d);
    put_u64(buf, e.params.size());
    for (double p : e.params) put_f64(buf, p);
  }
  put_u32(buf, static_cast<std::uint32_t>(ck.meta.size()));
  for (std::uint64_t w : ck.meta) put_u64(buf, w);
  put_u64(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4 + 8) {
    throw DataError("checkpoint: truncated file");
  }
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }
  const std::size_t body = buf.size() - 8;
  Reader tail(buf.data() + body, 8);
  if (tail.u64() != fnv1a64(buf.data(), body)) {
    throw DataError("checkpoint: checksum mismatch in " + path.string());
  }

  Reader r(buf.data(), body);
  r.str(sizeof(kMagic));  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t n_entries = r.u32();
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u32());
    const std::uint32_t n_dims = r.u32();
    for (std::uint32_t d = 0; d < n_dims; ++d) {
      e.dims.push_back(static_cast<std::size_t>(r.u64()));
    }
    const std::uint64_t n_params = r.u64();
    if (n_params > std::numeric_limits<std::uint32_t>::max()) {
      throw DataError("checkpoint: implausible parameter count");
    }
    e.params.reserve(n_params);
    for (std::uint64_t p = 0; p < n_params; ++p) e.params.push_back(r.f64());
    ck.entries.push_back(std::move(e));
  }
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) ck.meta.push_back(r.u64());
  if (r.pos() != body) {
    throw DataError("checkpoint: trailing bytes in " + path.string());
  }
  return ck;
}

}  // namespace mofelab
