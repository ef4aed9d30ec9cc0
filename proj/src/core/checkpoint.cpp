// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace fewvlm {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'M', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw CheckpointError("checkpoint: name too long: " + r.name.substr(0, 32));
    if (r.shape.size() > 0xFF) throw CheckpointError("checkpoint: rank too large for " + r.name);
    if (numel_of(r.shape) != r.values.size()) throw CheckpointError("checkpoint: payload/shape mismatch for " + r.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.shape.size()));
    for (std::size_t e : r.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    put<std::uint8_t>(out, r.trainable ? 1 : 0);
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.values.data());
    out.insert(out.end(), p, p + r.values.size() * sizeof(double));
  }
  return out;
}

std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  char magic[8];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("checkpoint: bad magic bytes");
  const auto count = in.get<std::uint32_t>();
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = in.get<std::uint16_t>();
    r.name.resize(len);
    in.read(r.name.data(), len);
    const auto rank = in.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) r.shape.push_back(in.get<std::uint32_t>());
    const auto flag = in.get<std::uint8_t>();
    if (flag > 1) throw CheckpointError("checkpoint: bad trainable flag for " + r.name);
    r.trainable = flag == 1;
    r.values.resize(numel_of(r.shape));
    in.read(r.values.data(), r.values.size() * sizeof(double));
    records.push_back(std::move(r));
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes after last record");
  return records;
}

std::vector<CheckpointRecord> records_of(const ParameterStore& store) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : store)
    out.push_back({p.name, p.value.shape(), p.trainable, {p.value.data().begin(), p.value.data().end()}});
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  const auto bytes = encode_checkpoint(records_of(store));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void apply_records(const std::vector<CheckpointRecord>& records, ParameterStore& store) {
  if (records.size() != store.size())
    throw CheckpointError("checkpoint: " + std::to_string(records.size()) + " records for a store of " +
                          std::to_string(store.size()));
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name.emplace(r.name, &r);
  for (auto& p : store) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing parameter " + p.name);
    const CheckpointRecord& r = *it->second;
    if (r.shape != p.value.shape())
      throw CheckpointError("checkpoint: shape mismatch for " + p.name + ": " + shape_str(r.shape) + " vs " +
                            shape_str(p.value.shape()));
    std::copy(r.values.begin(), r.values.end(), p.value.mutable_data().begin());
    p.trainable = r.trainable;
    p.value.set_requires_grad(r.trainable);
  }
}

void load_checkpoint_into(const std::filesystem::path& path, ParameterStore& store) {
  apply_records(read_checkpoint(path), store);
}

}  // namespace fewvlm
