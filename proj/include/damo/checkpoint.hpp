#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "damo/model.hpp"

namespace damo {

/// Unreadable or inconsistent checkpoint. The message names the first
/// offending manifest entry (or the manifest itself).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `dir/manifest.json` plus one raw little-endian float64 blob per
/// parameter under `dir/tensors/`. Existing files are overwritten.
void save_checkpoint(const DamoModel& model, const std::filesystem::path& dir);

/// Rebuilds the model from its recorded config and seed, then restores every
/// parameter value, group tag and trainable flag.
std::unique_ptr<DamoModel> load_checkpoint(const std::filesystem::path& dir);

}  // namespace damo
