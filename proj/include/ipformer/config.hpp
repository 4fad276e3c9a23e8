#pragma once

#include "ipformer/align.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace ipf {

inline constexpr int kDefaultMaxBoxes = 9;
inline constexpr double kDefaultNmsIou = 0.5;

/// Everything a pipeline run needs besides data and parameters.
struct PipelineConfig {
    AlignConfig align;
    int max_boxes = kDefaultMaxBoxes; ///< boxes kept per frame after NMS, 1..64
    double nms_iou = kDefaultNmsIou;
    double sim_threshold = kDefaultSimilarityThreshold;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Key-value text, one `key = value` per line, '#' comments. Keys:
/// d_model d_out x_repeat v_max heads frames_per_slice patch_grid depth
/// hidden_mult norm_eps query_init_std max_boxes nms_iou sim_threshold seed.
/// Unset keys keep their defaults; unknown keys are an error.
PipelineConfig parse_config(std::istream& in);
PipelineConfig read_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const PipelineConfig& config);

} // namespace ipf
