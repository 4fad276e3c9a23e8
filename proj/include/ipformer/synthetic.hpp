#pragma once

// Synthetic multi-shot scenes with planted identities. Every identity has a
// unit-norm signature; the grid cells under each planted box carry
// signature + isotropic Gaussian noise, so pooled features of one identity
// stay near-parallel while signatures of different identities are kept
// nearly orthogonal (|cos| < 0.3 by rejection sampling).

#include "ipformer/boxes.hpp"
#include "ipformer/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <vector>

namespace ipf {

struct SceneSpec {
    int identities = 3;
    int shots = 2;
    int frames = 16;
    double noise = 0.1; ///< per-cell noise norm relative to the unit signature
    std::uint64_t seed = 0;
    Index d_model = 64;
    Index patch_grid = 16;
    int max_per_frame = 4;   ///< cap on identities drawn into one frame
    bool duplicates = true;  ///< add shrunken lower-score proposals for NMS to remove
    double background = 0.5; ///< norm of background cell vectors
};

enum class IdentityRole { recurring, short_frame, unexpected };

const char* role_name(IdentityRole role);

struct Appearance {
    int identity = 0;
    int frame = 0;
};

struct PlantedBox {
    ScoredBox box; ///< frame is the video frame index
    int identity = 0;
    bool duplicate = false;
};

struct SyntheticScene {
    Tensor<double> frames; ///< F x (grid^2 + 1) x D, class token last
    MatrixXr signatures;   ///< identities x D, unit rows
    std::vector<IdentityRole> roles;
    std::vector<PlantedBox> planted;
    std::vector<int> shot_starts; ///< first frame of every shot, starting with 0

    std::vector<ScoredBox> proposals() const;

    /// Identities with a planted box in frames [first, first + count).
    std::set<int> identities_in(int first, int count) const;
};

/// Renders explicit appearances. Throws InputError when a frame needs more
/// boxes than the grid has cells.
SyntheticScene render_scene(const SceneSpec& spec, const std::vector<Appearance>& appearances,
                            std::vector<IdentityRole> roles, std::vector<int> shot_starts = {0});

/// Frames split evenly into shots. With three or more identities the last is
/// a single-frame appearance and the second-to-last fills one random shot.
/// Identity 0 opens every shot; other recurring identities take alternating
/// shots, so they reappear discontinuously once there are three shots.
SyntheticScene generate_scene(const SceneSpec& spec);

/// Writes features.iptf, boxes.txt, labels.txt and shots.txt into `dir`.
void write_scene(const SyntheticScene& scene, const std::filesystem::path& dir);

} // namespace ipf
