#pragma once

#include <filesystem>
#include <iosfwd>
#include <set>
#include <vector>

namespace ipf {

/// Per-frame active track IDs from an external tracker.
struct TrajectoryLog {
    struct Frame {
        int index = 0;
        std::set<int> ids;
    };
    std::vector<Frame> frames; ///< strictly increasing frame index
};

/// One line per frame: frame index then space-separated track IDs.
TrajectoryLog parse_trajectory(std::istream& in);
TrajectoryLog read_trajectory(const std::filesystem::path& path);

struct SelectionResult {
    int transitions = 0;
    bool retained = false;
};

inline constexpr int kMinTransitions = 5;

/// A transition is a logged frame whose active-ID set differs from the
/// previous logged frame. Retained iff transitions > min_transitions.
SelectionResult selection_filter(const TrajectoryLog& log, int min_transitions = kMinTransitions);

} // namespace ipf
