#pragma once

#include <filesystem>
#include <vector>

#include "kinet/config_file.hpp"
#include "kinet/pipeline.hpp"

namespace kinet {

// Channel-mean final-stage activation per branch and segment, min-max scaled
// to 8-bit gray, bilinearly upsampled to frame size. Produces
// 3*n_seg files named actmap_<branch>_seg<i>.png; returns their paths.
std::vector<std::filesystem::path> export_activation_maps(
    const std::filesystem::path& checkpoint_path, const Dataset& dataset,
    const std::string& video_id, const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace kinet
