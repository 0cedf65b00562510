#include "damo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "damo/hash.hpp"

namespace damo {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string blob_name(std::size_t index) {
  std::string n = std::to_string(index);
  return "tensors/" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n + ".f64";
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const DamoModel& model, const fs::path& dir) {
  fs::create_directories(dir / "tensors");
  nlohmann::json entries = nlohmann::json::array();
  std::size_t index = 0;
  for (const auto& p : model.store().all()) {
    const std::string bytes = tensor_bytes(p.value);
    const std::string file = blob_name(index++);
    write_file(dir / file, bytes);
    entries.push_back({{"name", p.name},
                       {"group", p.group},
                       {"shape", p.value.shape()},
                       {"dtype", "float64"},
                       {"trainable", p.trainable},
                       {"file", file},
                       {"sha256", sha256_hex(bytes.data(), bytes.size())}});
  }
  const nlohmann::json manifest = {{"format_version", kFormatVersion},
                                   {"config", model.config()},
                                   {"seed", model.seed()},
                                   {"parameters", entries}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::unique_ptr<DamoModel> load_checkpoint(const fs::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest.json: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("format_version", 0) != kFormatVersion)
    throw CheckpointError("manifest.json: missing or unsupported format_version");
  std::unique_ptr<DamoModel> model;
  try {
    model = std::make_unique<DamoModel>(manifest.at("config").get<ToyConfig>(), manifest.at("seed").get<std::uint64_t>());
  } catch (const std::exception& e) {
    throw CheckpointError("manifest.json: bad config or seed: " + std::string(e.what()));
  }

  const auto& entries = manifest.at("parameters");
  auto& params = model->store().all();
  if (!entries.is_array()) throw CheckpointError("manifest.json: 'parameters' is not an array");
  for (std::size_t i = 0; i < std::max(params.size(), entries.size()); ++i) {
    if (i >= entries.size()) throw CheckpointError("manifest entry missing for parameter '" + params[i].name + "'");
    const auto& e = entries[i];
    const std::string label = "manifest entry " + std::to_string(i) + " ('" + e.value("name", std::string("?")) + "')";
    if (i >= params.size()) throw CheckpointError(label + ": not a parameter of this model");
    Parameter& p = params[i];
    try {
      if (e.at("name").get<std::string>() != p.name) throw CheckpointError("expected name '" + p.name + "'");
      if (e.at("group").get<std::string>() != p.group) throw CheckpointError("expected group '" + p.group + "'");
      if (e.at("shape").get<Shape>() != p.value.shape())
        throw CheckpointError("expected shape " + shape_str(p.value.shape()));
      if (e.at("dtype").get<std::string>() != "float64") throw CheckpointError("dtype must be float64");
      const std::string bytes = read_file(dir / e.at("file").get<std::string>());
      if (bytes.size() != p.value.size() * 8)
        throw CheckpointError("blob holds " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(p.value.size() * 8));
      if (sha256_hex(bytes.data(), bytes.size()) != e.at("sha256").get<std::string>())
        throw CheckpointError("checksum mismatch");
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        std::uint64_t bits = 0;
        for (std::size_t b = 0; b < 8; ++b)
          bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k * 8 + b])) << (8 * b);
        p.value[k] = std::bit_cast<double>(bits);
      }
      p.trainable = e.at("trainable").get<bool>();
    } catch (const CheckpointError& err) {
      throw CheckpointError(label + ": " + err.what());
    } catch (const nlohmann::json::exception& err) {
      throw CheckpointError(label + ": " + err.what());
    }
  }
  return model;
}

}  // namespace damo
