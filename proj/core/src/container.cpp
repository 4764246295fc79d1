#include "lgom/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "container payload is little-endian; big-endian hosts unsupported");

namespace lgom {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'O', 'M'};
constexpr uint32_t kVersion = 1;
constexpr size_t kAlign = 64;

size_t align_up(size_t n) { return (n + kAlign - 1) & ~(kAlign - 1); }

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  throw std::runtime_error("container: unknown dtype '" + dtype + "'");
}

}  // namespace

int64_t TensorContainer::Entry::count() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

void TensorContainer::add_f32(const std::string& name, std::vector<int64_t> shape,
                              std::vector<float> data) {
  Entry e;
  e.name = name;
  e.dtype = "f32";
  e.shape = std::move(shape);
  e.f32 = std::move(data);
  if (int64_t(e.f32.size()) != e.count())
    throw std::runtime_error("container: shape/data mismatch for '" + name + "'");
  entries.push_back(std::move(e));
}

void TensorContainer::add_i32(const std::string& name, std::vector<int64_t> shape,
                              std::vector<int32_t> data) {
  Entry e;
  e.name = name;
  e.dtype = "i32";
  e.shape = std::move(shape);
  e.i32 = std::move(data);
  if (int64_t(e.i32.size()) != e.count())
    throw std::runtime_error("container: shape/data mismatch for '" + name + "'");
  entries.push_back(std::move(e));
}

void TensorContainer::add_f64_as_f32(const std::string& name,
                                     std::vector<int64_t> shape,
                                     const std::vector<double>& data) {
  std::vector<float> f(data.begin(), data.end());
  add_f32(name, std::move(shape), std::move(f));
}

bool TensorContainer::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const TensorContainer::Entry& TensorContainer::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error("container: missing array '" + name + "'");
}

std::vector<uint8_t> TensorContainer::serialize() const {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : entries) {
    if (e.name.empty()) throw std::runtime_error("container: empty array name");
    manifest.push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}});
  }
  // Duplicate name check.
  for (size_t i = 0; i < entries.size(); ++i)
    for (size_t j = i + 1; j < entries.size(); ++j)
      if (entries[i].name == entries[j].name)
        throw std::runtime_error("container: duplicate array name '" +
                                 entries[i].name + "'");

  const std::string mtext = manifest.dump();
  const size_t header = 4 + 4 + 4 + mtext.size();
  size_t offset = align_up(header);
  std::vector<size_t> starts;
  for (const auto& e : entries) {
    starts.push_back(offset);
    offset = align_up(offset + size_t(e.count()) * dtype_size(e.dtype));
  }

  std::vector<uint8_t> out(offset, 0);
  std::memcpy(out.data(), kMagic, 4);
  const uint32_t version = kVersion;
  std::memcpy(out.data() + 4, &version, 4);
  const uint32_t mlen = uint32_t(mtext.size());
  std::memcpy(out.data() + 8, &mlen, 4);
  std::memcpy(out.data() + 12, mtext.data(), mtext.size());
  for (size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    const void* src = e.dtype == "f32" ? (const void*)e.f32.data()
                                       : (const void*)e.i32.data();
    std::memcpy(out.data() + starts[k], src, size_t(e.count()) * 4);
  }
  return out;
}

TensorContainer TensorContainer::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("container: bad magic");
  uint32_t version = 0, mlen = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&mlen, bytes.data() + 8, 4);
  if (version != kVersion)
    throw std::runtime_error("container: unsupported version " +
                             std::to_string(version));
  if (bytes.size() < 12 + size_t(mlen))
    throw std::runtime_error("container: truncated manifest");
  const nlohmann::json manifest = nlohmann::json::parse(
      std::string(reinterpret_cast<const char*>(bytes.data() + 12), mlen));

  TensorContainer tc;
  size_t offset = align_up(12 + size_t(mlen));
  for (const auto& m : manifest) {
    Entry e;
    e.name = m.at("name").get<std::string>();
    e.dtype = m.at("dtype").get<std::string>();
    e.shape = m.at("shape").get<std::vector<int64_t>>();
    const size_t nbytes = size_t(e.count()) * dtype_size(e.dtype);
    if (bytes.size() < offset + nbytes)
      throw std::runtime_error("container: truncated payload for '" + e.name + "'");
    if (e.dtype == "f32") {
      e.f32.resize(size_t(e.count()));
      std::memcpy(e.f32.data(), bytes.data() + offset, nbytes);
    } else {
      e.i32.resize(size_t(e.count()));
      std::memcpy(e.i32.data(), bytes.data() + offset, nbytes);
    }
    offset = align_up(offset + nbytes);
    tc.entries.push_back(std::move(e));
  }
  return tc;
}

void TensorContainer::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("container: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("container: write failed: " + path);
}

TensorContainer TensorContainer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("container: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace lgom
