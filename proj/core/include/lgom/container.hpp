#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lgom {

/// Binary tensor container shared by checkpoints, mesh dumps and float image
/// sidecars. Layout:
///   magic "LGOM" | version u32 | manifest length u32 | manifest (JSON text)
///   | zero padding to a 64-byte boundary | arrays, each starting 64-byte
///   aligned, little-endian, in manifest order.
/// The manifest is a JSON array of {name, dtype:"f32"|"i32", shape}.
struct TensorContainer {
  struct Entry {
    std::string name;
    std::string dtype;            // "f32" or "i32"
    std::vector<int64_t> shape;
    std::vector<float> f32;       // valid when dtype == "f32"
    std::vector<int32_t> i32;     // valid when dtype == "i32"

    int64_t count() const;
  };

  std::vector<Entry> entries;

  void add_f32(const std::string& name, std::vector<int64_t> shape,
               std::vector<float> data);
  void add_i32(const std::string& name, std::vector<int64_t> shape,
               std::vector<int32_t> data);
  /// Convenience: converts doubles to f32 on the way in.
  void add_f64_as_f32(const std::string& name, std::vector<int64_t> shape,
                      const std::vector<double>& data);

  bool has(const std::string& name) const;
  const Entry& at(const std::string& name) const;

  std::vector<uint8_t> serialize() const;
  static TensorContainer deserialize(const std::vector<uint8_t>& bytes);

  void save(const std::string& path) const;
  static TensorContainer load(const std::string& path);
};

}  // namespace lgom
