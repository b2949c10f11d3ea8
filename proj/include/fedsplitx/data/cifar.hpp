#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/data/dataset.hpp"

namespace fedsplitx::data {

// CIFAR-10 binary layout: per record one label byte then 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, row-major 32x32).
inline constexpr std::size_t cifar_pixels = 3072;
inline constexpr std::size_t cifar_record = cifar_pixels + 1;
inline constexpr std::size_t cifar_classes = 10;

class CifarFormatError : public std::runtime_error {
 public:
  CifarFormatError(std::string path, std::uint64_t offset, const std::string& what)
      : std::runtime_error(path + ": " + what + " at byte offset " + std::to_string(offset)),
        path_(std::move(path)),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

inline Dataset parse_cifar_binary(const std::vector<unsigned char>& bytes, const std::string& source,
                                  std::optional<std::size_t> max_records = std::nullopt) {
  if (bytes.size() % cifar_record != 0) {
    const std::uint64_t whole = bytes.size() / cifar_record * cifar_record;
    throw CifarFormatError(source, whole,
                           "file length " + std::to_string(bytes.size()) + " is not a multiple of " +
                               std::to_string(cifar_record) + "; trailing partial record of " +
                               std::to_string(bytes.size() - whole) + " bytes");
  }
  std::size_t n = bytes.size() / cifar_record;
  if (max_records) n = std::min(n, *max_records);
  Dataset d;
  d.num_classes = cifar_classes;
  d.features = nn::Tensor({n, cifar_pixels});
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * cifar_record;
    const unsigned label = bytes[base];
    if (label >= cifar_classes) {
      throw CifarFormatError(source, base, "label byte " + std::to_string(label) + " outside 0..9");
    }
    d.labels[r] = label;
    auto row = d.features.row(r);
    for (std::size_t p = 0; p < cifar_pixels; ++p) row[p] = static_cast<float>(bytes[base + 1 + p]) / 255.0f;
  }
  return d;
}

inline Dataset load_cifar_binary(const std::filesystem::path& path,
                                 std::optional<std::size_t> max_records = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar_binary(bytes, path.string(), max_records);
}

// Writes raw records (label byte + 3072 pixel bytes each).
struct CifarRecord {
  std::uint8_t label = 0;
  std::vector<std::uint8_t> pixels;  // 3072
};

inline void write_cifar_binary(const std::filesystem::path& path, const std::vector<CifarRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write CIFAR file " + path.string());
  for (const auto& r : records) {
    if (r.pixels.size() != cifar_pixels) {
      throw std::invalid_argument("CIFAR record needs " + std::to_string(cifar_pixels) + " pixels, got " +
                                  std::to_string(r.pixels.size()));
    }
    out.put(static_cast<char>(r.label));
    out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace fedsplitx::data
