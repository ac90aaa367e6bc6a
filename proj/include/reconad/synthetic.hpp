#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "reconad/dataset.hpp"

namespace reconad {

/// Ellipse images standing in for plankton cells; NOK samples carry an extra
/// bright blob attached to the cell boundary.
struct SyntheticOptions {
    int ok_count = 500;
    int nok_count = 100;
    int size = 128;
    int blob_min = 8;  // blob diameter range, pixels
    int blob_max = 16;
    std::string species = "Ellipse";
    std::uint64_t seed = 7;
};

std::vector<AnnotatedImage> make_synthetic_dataset(const SyntheticOptions& options);

/// Writes `dir/images/<id>.png` plus `dir/annotations.json` (COCO).
std::filesystem::path write_coco_dataset(std::span<const AnnotatedImage> images,
                                         const std::filesystem::path& dir);

}  // namespace reconad
