#include "vardlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need a swap");

namespace vardlab {

void save_checkpoint(const std::string& base, nlohmann::json manifest,
                     const std::vector<const Param*>& params) {
  nlohmann::json plist = nlohmann::json::array();
  std::size_t total = 0;
  for (const Param* p : params) {
    plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    total += p->value.size();
  }
  manifest["params"] = plist;
  manifest["total_values"] = total;

  std::ofstream mf(base + ".json");
  if (!mf) throw std::runtime_error("cannot write " + base + ".json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(base + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write " + base + ".bin");
  for (const Param* p : params)
    bf.write(reinterpret_cast<const char*>(p->value.data.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
}

nlohmann::json load_checkpoint(const std::string& base,
                               const std::vector<Param*>& params) {
  std::ifstream mf(base + ".json");
  if (!mf) throw std::runtime_error("cannot open checkpoint " + base + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);

  const auto& plist = manifest.at("params");
  if (plist.size() != params.size())
    throw std::runtime_error("checkpoint " + base + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto shape = plist[i].at("shape").get<std::vector<std::size_t>>();
    if (shape != params[i]->value.shape)
      throw std::runtime_error("checkpoint " + base + ": shape mismatch for " +
                               params[i]->name);
  }

  std::ifstream bf(base + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open checkpoint " + base + ".bin");
  for (Param* p : params) {
    bf.read(reinterpret_cast<char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!bf) throw std::runtime_error("checkpoint " + base + ": blob truncated");
    p->zero_grad();
  }
  return manifest;
}

bool checkpoint_exists(const std::string& base) {
  return std::filesystem::exists(base + ".json") &&
         std::filesystem::exists(base + ".bin");
}

}  // namespace vardlab
