#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "fire/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fire {

DatasetManifest build_manifest(int n_pairs, int train, int val, int test, uint64_t seed) {
  if (train < 0 || val < 0 || test < 0)
    throw std::invalid_argument("build_manifest: negative split count");
  if (train + val + test > n_pairs)
    throw std::invalid_argument("build_manifest: split counts " + std::to_string(train + val + test) +
                                " exceed " + std::to_string(n_pairs) + " subjects");
  std::vector<int> ids(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int i = n_pairs - 1; i > 0; --i)
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(rng.uniform_int(i + 1))]);

  DatasetManifest m;
  m.seed = seed;
  auto assign = [&](int from, int count, const char* split) {
    for (int k = from; k < from + count; ++k) {
      const int id = ids[static_cast<size_t>(k)];
      char name[64];
      std::snprintf(name, sizeof(name), "pair_%04d", id);
      m.pairs.push_back(ManifestEntry{id, std::string(name) + "_A.npy", std::string(name) + "_B.npy",
                                      std::string(name) + "_labels.npy", split});
    }
  };
  assign(0, train, "train");
  assign(train, val, "val");
  assign(train + val, test, "test");
  std::sort(m.pairs.begin(), m.pairs.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["seed"] = m.seed;
  j["size"] = m.size;
  j["complexity"] = m.complexity;
  j["preprocessing"] = {{"intensity_range", {-1.0, 1.0}}};
  json legend;
  for (const auto& [id, name] : m.legend) legend[std::to_string(id)] = name;
  j["legend"] = legend;
  j["pairs"] = json::array();
  for (const ManifestEntry& e : m.pairs)
    j["pairs"].push_back(
        {{"id", e.id}, {"a", e.a}, {"b", e.b}, {"labels", e.labels}, {"split", e.split}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  json j;
  DatasetManifest m;
  try {
    in >> j;
    m.seed = j.at("seed").get<uint64_t>();
    m.size = j.at("size").get<int>();
    m.complexity = j.at("complexity").get<int>();
    for (const auto& [key, value] : j.at("legend").items())
      m.legend[std::stoi(key)] = value.get<std::string>();
    for (const auto& e : j.at("pairs")) {
      m.pairs.push_back(ManifestEntry{e.at("id").get<int>(), e.at("a").get<std::string>(),
                                      e.at("b").get<std::string>(), e.at("labels").get<std::string>(),
                                      e.at("split").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest: malformed " + path + ": " + e.what());
  }
  // splits must stay disjoint by subject
  std::map<int, std::string> seen;
  for (const ManifestEntry& e : m.pairs) {
    auto [it, inserted] = seen.emplace(e.id, e.split);
    if (!inserted)
      throw std::runtime_error("manifest: subject " + std::to_string(e.id) + " listed twice");
  }
  return m;
}

DatasetManifest write_phantom_dataset(const std::string& dir, int pairs, int size, int complexity,
                                      int train, int val, int test, uint64_t seed) {
  fs::create_directories(dir);
  DatasetManifest m = build_manifest(pairs, train, val, test, seed);
  m.size = size;
  m.complexity = complexity;
  Rng root(seed);
  for (const ManifestEntry& e : m.pairs) {
    Rng rng = root.substream(static_cast<uint64_t>(e.id));
    const PhantomPair pair = gen_phantom_pair(rng, size, complexity);
    if (m.legend.empty()) m.legend = pair.labels.legend;
    write_npy(pair.a.image, (fs::path(dir) / e.a).string());
    write_npy(pair.b.image, (fs::path(dir) / e.b).string());
    Tensor lab(Shape{size, size});
    for (int64_t i = 0; i < lab.numel(); ++i)
      lab.data()[i] = static_cast<float>(pair.labels.labels[static_cast<size_t>(i)]);
    write_npy(lab, (fs::path(dir) / e.labels).string());
  }
  save_manifest(m, (fs::path(dir) / "manifest.json").string());
  return m;
}

std::vector<LoadedPair> load_split(const std::string& dir, const DatasetManifest& m,
                                   const std::string& split) {
  std::vector<LoadedPair> out;
  for (const ManifestEntry& e : m.pairs) {
    if (e.split != split) continue;
    LoadedPair pair;
    pair.id = e.id;
    pair.xa = read_npy((fs::path(dir) / e.a).string());
    pair.xb = read_npy((fs::path(dir) / e.b).string());
    if (pair.xa.shape() != pair.xb.shape())
      throw std::runtime_error("dataset: pair " + std::to_string(e.id) + " images disagree on shape");
    const Tensor lab = read_npy((fs::path(dir) / e.labels).string());
    pair.labels.spatial = lab.shape();
    pair.labels.legend = m.legend;
    pair.labels.labels.resize(static_cast<size_t>(lab.numel()));
    for (int64_t i = 0; i < lab.numel(); ++i)
      pair.labels.labels[static_cast<size_t>(i)] = static_cast<int>(std::lround(lab.data()[i]));
    if (shape_numel(pair.labels.spatial) != shape_numel(pair.xa.spatial_shape()))
      throw std::runtime_error("dataset: pair " + std::to_string(e.id) + " labels disagree with image");
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace fire
