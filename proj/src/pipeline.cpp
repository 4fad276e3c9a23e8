#include "ipformer/pipeline.hpp"

namespace ipf {

std::vector<std::vector<ScoredBox>> split_boxes(const std::vector<ScoredBox>& boxes, Index frame_count,
                                                Index frames_per_slice)
{
    if (frames_per_slice < 1) throw InputError("frames_per_slice must be >= 1");
    const Index slices = frame_count / frames_per_slice;
    std::vector<std::vector<ScoredBox>> out(static_cast<std::size_t>(slices));
    for (const auto& b : boxes) {
        if (b.frame < 0 || b.frame >= frame_count) {
            throw InputError("box references frame " + std::to_string(b.frame) + " but the video has " +
                             std::to_string(frame_count) + " frames");
        }
        const Index slice = b.frame / frames_per_slice;
        if (slice >= slices) continue;
        ScoredBox local = b;
        local.frame = static_cast<int>(b.frame % frames_per_slice);
        out[static_cast<std::size_t>(slice)].push_back(local);
    }
    return out;
}

} // namespace ipf
