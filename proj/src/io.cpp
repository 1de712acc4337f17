#include "oga/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace oga {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace

void write_ogaf(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write("OGAF", 4);
  put_u32(out, uint32_t(tensor.rank()));
  for (int d : tensor.shape) put_u32(out, uint32_t(d));
  std::vector<unsigned char> buf(tensor.data.size() * 4);
  for (size_t i = 0; i < tensor.data.size(); ++i) {
    float f = float(tensor.data[i]);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
    buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Tensor read_ogaf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "OGAF", 4) != 0) {
    throw std::runtime_error(path.string() + ": not an OGAF tensor file");
  }
  uint32_t rank = get_u32(in);
  if (rank == 0 || rank > 8) {
    throw std::runtime_error(path.string() + ": implausible rank");
  }
  Shape shape;
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = get_u32(in);
    if (d == 0 || d > (1u << 24)) {
      throw std::runtime_error(path.string() + ": implausible dimension");
    }
    shape.push_back(int(d));
    numel *= d;
  }
  std::vector<unsigned char> buf(size_t(numel) * 4);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated payload");
  Tensor t(shape);
  for (int64_t i = 0; i < numel; ++i) {
    uint32_t bits = uint32_t(buf[size_t(i) * 4 + 0]) |
                    (uint32_t(buf[size_t(i) * 4 + 1]) << 8) |
                    (uint32_t(buf[size_t(i) * 4 + 2]) << 16) |
                    (uint32_t(buf[size_t(i) * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    t.data[size_t(i)] = double(f);
  }
  return t;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  int h = 0, w = 0, c = 0;
  if (image.rank() == 3 && image.shape[2] == 3) {
    h = image.shape[0];
    w = image.shape[1];
    c = 3;
  } else if (image.rank() == 2) {
    h = image.shape[0];
    w = image.shape[1];
    c = 1;
  } else {
    throw std::invalid_argument("write_ppm: image must be (H,W,3) or (H,W)");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        double v = c == 3 ? image.at3(y, x, ch) : image.at2(y, x);
        v = std::min(std::max(v, 0.0), 1.0);
        row[size_t(x) * 3 + size_t(ch)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size()));
  }
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open " + path.string());
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

std::string CsvWriter::num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string CsvWriter::num(int64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void save_model(const std::filesystem::path& dir, const Model& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["arch"] = arch_to_string(model.spec.arch);
  manifest["seed"] = model.spec.seed;
  manifest["image_size"] = model.spec.image_size;
  std::vector<std::string> names;
  for (const auto& [name, tensor] : model.weights) {
    names.push_back(name);
    write_ogaf(dir / (name + ".ogaf"), tensor);
  }
  manifest["weights"] = names;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

Model load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw std::runtime_error("missing model manifest: " +
                             (dir / "manifest.json").string());
  }
  nlohmann::json manifest = nlohmann::json::parse(in);
  ModelSpec spec;
  spec.arch = arch_from_string(manifest.at("arch").get<std::string>());
  spec.seed = manifest.at("seed").get<uint64_t>();
  spec.image_size = manifest.at("image_size").get<int>();
  Model model = build_model(spec);  // establishes shapes and weight order
  for (auto& [name, tensor] : model.weights) {
    Tensor loaded = read_ogaf(dir / (name + ".ogaf"));
    if (!shape_eq(loaded.shape, tensor.shape)) {
      throw std::runtime_error("weight shape mismatch for " + name + " in " +
                               dir.string());
    }
    tensor = std::move(loaded);
  }
  return model;
}

DirLock::DirLock(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  lock_path_ = dir / ".lock";
  FILE* f = std::fopen(lock_path_.c_str(), "wx");
  if (f == nullptr) {
    throw std::runtime_error(
        "output directory is locked by another run: " + lock_path_.string());
  }
  std::fclose(f);
  held_ = true;
}

DirLock::~DirLock() {
  if (held_) {
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
  }
}

}  // namespace oga
