#include "ipformer/selection.hpp"

#include "ipformer/common.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace ipf {

TrajectoryLog parse_trajectory(std::istream& in)
{
    TrajectoryLog log;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        TrajectoryLog::Frame frame;
        if (!(ls >> frame.index)) {
            std::string junk;
            std::istringstream probe(line);
            if (probe >> junk) throw InputError("trajectory line " + std::to_string(line_no) + ": bad frame index");
            continue;
        }
        int id = 0;
        while (ls >> id) frame.ids.insert(id);
        if (!ls.eof()) throw InputError("trajectory line " + std::to_string(line_no) + ": bad track id");
        if (!log.frames.empty() && frame.index <= log.frames.back().index) {
            throw InputError("trajectory line " + std::to_string(line_no) + ": frame indices must increase");
        }
        log.frames.push_back(std::move(frame));
    }
    return log;
}

TrajectoryLog read_trajectory(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return parse_trajectory(in);
}

SelectionResult selection_filter(const TrajectoryLog& log, int min_transitions)
{
    SelectionResult r;
    for (std::size_t i = 1; i < log.frames.size(); ++i) {
        if (log.frames[i].ids != log.frames[i - 1].ids) ++r.transitions;
    }
    r.retained = r.transitions > min_transitions;
    return r;
}

} // namespace ipf
