#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fire/io.hpp"

namespace fire {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string header_dict(const Shape& shape) {
  std::ostringstream os;
  os << "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << "), }";
  return os.str();
}

// extracts the value after 'key': in the header dict, trimmed
std::string dict_value(const std::string& header, const std::string& key, const std::string& path) {
  const std::string needle = "'" + key + "':";
  const size_t at = header.find(needle);
  if (at == std::string::npos)
    throw std::runtime_error("npy: " + path + ": header missing key '" + key + "'");
  size_t start = at + needle.size();
  while (start < header.size() && header[start] == ' ') ++start;
  size_t end = start;
  if (header[start] == '\'') {
    end = header.find('\'', start + 1);
    if (end == std::string::npos) throw std::runtime_error("npy: " + path + ": unterminated string");
    return header.substr(start + 1, end - start - 1);
  }
  if (header[start] == '(') {
    end = header.find(')', start);
    if (end == std::string::npos) throw std::runtime_error("npy: " + path + ": unterminated tuple");
    return header.substr(start, end - start + 1);
  }
  while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
  return header.substr(start, end - start);
}

}  // namespace

void write_npy(const Tensor& tensor, const std::string& path) {
  if (!tensor.defined()) throw std::invalid_argument("npy: undefined tensor for " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("npy: cannot write " + path);
  std::string dict = header_dict(tensor.shape());
  // magic(6) + version(2) + header_len(2) + dict + '\n' padded to 64
  const size_t base = 6 + 2 + 2;
  size_t total = base + dict.size() + 1;
  const size_t padded = (total + 63) / 64 * 64;
  dict.append(padded - total, ' ');
  dict.push_back('\n');
  const uint16_t header_len = static_cast<uint16_t>(dict.size());
  out.write(kMagic, 6);
  out.put('\x01');
  out.put('\x00');
  out.put(static_cast<char>(header_len & 0xff));
  out.put(static_cast<char>(header_len >> 8));
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(tensor.data()),
            static_cast<std::streamsize>(sizeof(float) * tensor.numel()));
  if (!out) throw std::runtime_error("npy: write failed for " + path);
}

Tensor read_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("npy: cannot open " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("npy: " + path + ": bad magic");
  const int ver_major = in.get();
  const int ver_minor = in.get();
  if (ver_major != 1 || ver_minor != 0)
    throw std::runtime_error("npy: " + path + ": unsupported format version " + std::to_string(ver_major) +
                             "." + std::to_string(ver_minor));
  const int lo = in.get(), hi = in.get();
  if (lo < 0 || hi < 0) throw std::runtime_error("npy: " + path + ": truncated header");
  const size_t header_len = static_cast<size_t>(lo) | (static_cast<size_t>(hi) << 8);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("npy: " + path + ": truncated header");

  const std::string descr = dict_value(header, "descr", path);
  if (descr != "<f4")
    throw std::runtime_error("npy: " + path + ": unsupported dtype '" + descr + "' (need '<f4')");
  const std::string order = dict_value(header, "fortran_order", path);
  if (order.find("False") == std::string::npos)
    throw std::runtime_error("npy: " + path + ": unsupported fortran order");

  const std::string tuple = dict_value(header, "shape", path);
  Shape shape;
  std::string token;
  for (size_t i = 1; i < tuple.size(); ++i) {  // skip '('
    const char c = tuple[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      token.push_back(c);
    } else if (!token.empty()) {
      shape.push_back(std::stoll(token));
      token.clear();
    }
  }
  if (shape.empty())
    throw std::runtime_error("npy: " + path + ": zero-dimensional array rejected (shape error)");
  for (int64_t d : shape)
    if (d <= 0) throw std::runtime_error("npy: " + path + ": empty array rejected (shape error)");

  const int64_t count = shape_numel(shape);
  std::vector<float> values(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(sizeof(float) * count));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * count))
    throw std::runtime_error("npy: " + path + ": truncated payload");
  return Tensor(shape, std::move(values));
}

}  // namespace fire
