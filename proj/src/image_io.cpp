#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fire/io.hpp"
#include "fire/warp.hpp"

namespace fire {

namespace {

unsigned char quantize(float v) {
  const long q = std::lround(double(v) * 255.0);
  return static_cast<unsigned char>(std::min(255L, std::max(0L, q)));
}

void check_plane(const Tensor& values, const char* what) {
  if (values.rank() != 4 || values.dim(0) != 1 || values.dim(1) != 1)
    throw std::invalid_argument(std::string(what) + ": expected a single [1,1,H,W] plane, got " +
                                shape_str(values.shape()));
}

void append_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
  append_u32(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(body.data()),
                          static_cast<uInt>(body.size()));
  append_u32(out, static_cast<uint32_t>(crc));
}

}  // namespace

void write_pgm(const Tensor& values, const std::string& path) {
  check_plane(values, "pgm");
  const int64_t h = values.dim(2), w = values.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) row[static_cast<size_t>(x)] = quantize(values.data()[y * w + x]);
    out.write(reinterpret_cast<const char*>(row.data()), w);
  }
  if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("pgm: " + path + ": not a P5 file");
  int64_t w = 0, h = 0;
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("pgm: " + path + ": unsupported header");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("pgm: " + path + ": truncated payload");
  Tensor out(Shape{1, 1, h, w});
  for (size_t i = 0; i < bytes.size(); ++i) out.data()[i] = float(bytes[i]) / 255.0f;
  return out;
}

void write_png_rgb(int width, int height, const std::vector<unsigned char>& rgb,
                   const std::string& path) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size())
    throw std::invalid_argument("png: pixel buffer size does not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  // filter byte 0 per scanline
  std::vector<unsigned char> raw(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    unsigned char* row = raw.data() + static_cast<size_t>(y) * (1 + static_cast<size_t>(width) * 3);
    row[0] = 0;
    std::memcpy(row + 1, rgb.data() + static_cast<size_t>(y) * width * 3, static_cast<size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed for " + path);
  deflated.resize(bound);

  std::string out;
  out += "\x89PNG\r\n\x1a\n";
  std::string ihdr;
  append_u32(ihdr, static_cast<uint32_t>(width));
  append_u32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", std::string(reinterpret_cast<const char*>(deflated.data()), deflated.size()));
  append_chunk(out, "IEND", "");

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("png: cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("png: write failed for " + path);
}

VolumeRecord resample_isotropic(const VolumeRecord& rec, double target_mm) {
  if (target_mm <= 0.0) throw std::invalid_argument("resample_isotropic: target spacing must be > 0");
  const int dim = rec.image.spatial_rank();
  if (static_cast<int>(rec.voxel_size.size()) != dim)
    throw std::invalid_argument("resample_isotropic: voxel_size rank mismatch");
  for (double v : rec.voxel_size)
    if (v <= 0.0) throw std::invalid_argument("resample_isotropic: nonpositive voxel size");

  const Shape old_spatial = rec.image.spatial_shape();
  Shape new_spatial(old_spatial.size());
  for (int d = 0; d < dim; ++d) {
    new_spatial[static_cast<size_t>(d)] = std::lround(
        double(old_spatial[static_cast<size_t>(d)]) * rec.voxel_size[static_cast<size_t>(d)] / target_mm);
    if (new_spatial[static_cast<size_t>(d)] < 8)
      throw std::invalid_argument("resample_isotropic: resulting extent " +
                                  std::to_string(new_spatial[static_cast<size_t>(d)]) +
                                  " below 8 on axis " + std::to_string(d));
  }

  TapePause pause;
  // sampling grid: physical center of each new voxel mapped into the old
  // volume's normalized coordinates
  Shape gshape{1, dim};
  gshape.insert(gshape.end(), new_spatial.begin(), new_spatial.end());
  Tensor grid(gshape);
  const int64_t vol = shape_numel(new_spatial);
  for (int d = 0; d < dim; ++d) {
    int64_t repeat = 1;
    for (int e = d + 1; e < dim; ++e) repeat *= new_spatial[static_cast<size_t>(e)];
    const int64_t extent = new_spatial[static_cast<size_t>(d)];
    const int64_t old_extent = old_spatial[static_cast<size_t>(d)];
    const double vox = rec.voxel_size[static_cast<size_t>(d)];
    float* ch = grid.data() + int64_t(d) * vol;
    for (int64_t pos = 0; pos < vol; ++pos) {
      const int64_t i = (pos / repeat) % extent;
      const double phys = (double(i) + 0.5) * target_mm;
      ch[pos] = static_cast<float>(2.0 * phys / (vox * double(old_extent)) - 1.0);
    }
  }

  VolumeRecord out;
  out.modality = rec.modality;
  out.voxel_size.assign(static_cast<size_t>(dim), target_mm);
  out.image = grid_sample(rec.image, grid);
  if (rec.labels) {
    LabelVolume lab;
    lab.spatial = new_spatial;
    lab.legend = rec.labels->legend;
    lab.labels.assign(static_cast<size_t>(vol), 0);
    std::vector<int64_t> stride(static_cast<size_t>(dim));
    int64_t acc = 1;
    for (int d = dim - 1; d >= 0; --d) {
      stride[static_cast<size_t>(d)] = acc;
      acc *= old_spatial[static_cast<size_t>(d)];
    }
    for (int64_t pos = 0; pos < vol; ++pos) {
      int64_t src = 0;
      for (int d = 0; d < dim; ++d) {
        const int64_t old_extent = old_spatial[static_cast<size_t>(d)];
        const double coord = grid.data()[int64_t(d) * vol + pos];
        const double pixel = (coord + 1.0) * double(old_extent) / 2.0 - 0.5;
        int64_t idx = std::lround(pixel);
        idx = std::min(std::max<int64_t>(idx, 0), old_extent - 1);
        src += idx * stride[static_cast<size_t>(d)];
      }
      lab.labels[static_cast<size_t>(pos)] = rec.labels->labels[static_cast<size_t>(src)];
    }
    out.labels = std::move(lab);
  }
  return out;
}

}  // namespace fire
