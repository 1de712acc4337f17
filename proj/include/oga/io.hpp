#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oga/models.hpp"
#include "oga/tensor.hpp"

namespace oga {

/// Raw tensor file: magic "OGAF", u32 rank, u32 dims (little-endian), then
/// a float32 little-endian row-major payload.
void write_ogaf(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_ogaf(const std::filesystem::path& path);

/// Binary P6 PPM, 8-bit, maxval 255, value = round(clamp(v,0,1)*255).
/// Accepts (H,W,3) color or (H,W) grayscale (replicated to gray RGB).
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Comma-separated, '.' decimal point, header row, LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& cells);

  static std::string num(double v);
  static std::string num(int64_t v);

 private:
  std::ofstream out_;
};

/// Weights directory: manifest.json (arch, seed, image size, tensor names)
/// plus one .ogaf file per weight tensor.
void save_model(const std::filesystem::path& dir, const Model& model);
Model load_model(const std::filesystem::path& dir);

/// Exclusive lock file guarding an output directory; removed on destruction.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  bool held_ = false;
};

}  // namespace oga
