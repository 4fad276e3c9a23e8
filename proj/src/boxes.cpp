#include "ipformer/boxes.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>

namespace ipf {

void validate_box(const ScoredBox& b)
{
    auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    if (!in_unit(b.x1) || !in_unit(b.y1) || !in_unit(b.x2) || !in_unit(b.y2) || b.x1 > b.x2 || b.y1 > b.y2) {
        std::ostringstream os;
        os << "invalid box [" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << "]";
        throw InputError(os.str());
    }
    if (!in_unit(b.score)) throw InputError("box score must lie in [0,1], got " + std::to_string(b.score));
}

double iou(const ScoredBox& a, const ScoredBox& b)
{
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold)
{
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });

    std::vector<ScoredBox> kept;
    for (std::size_t i : order) {
        const auto& cand = boxes[i];
        const bool clear = std::all_of(kept.begin(), kept.end(),
                                       [&](const ScoredBox& k) { return iou(k, cand) <= iou_threshold; });
        if (clear) kept.push_back(cand);
    }
    return kept;
}

std::vector<ScoredBox> retain_top_m(const std::vector<ScoredBox>& boxes, int m)
{
    if (m < 1) throw InputError("retain_top_m: m must be >= 1");
    std::vector<ScoredBox> out = boxes;
    std::stable_sort(out.begin(), out.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    if (out.size() > static_cast<std::size_t>(m)) out.resize(static_cast<std::size_t>(m));
    const int frame = boxes.empty() ? 0 : boxes.front().frame;
    while (out.size() < static_cast<std::size_t>(m)) out.push_back(ScoredBox::padding(frame));
    return out;
}

std::vector<Index> roi_cells(const ScoredBox& box, Index side)
{
    std::vector<Index> cells;
    const double s = static_cast<double>(side);
    for (Index r = 0; r < side; ++r) {
        const double cy = (static_cast<double>(r) + 0.5) / s;
        if (cy < box.y1 || cy > box.y2) continue;
        for (Index c = 0; c < side; ++c) {
            const double cx = (static_cast<double>(c) + 0.5) / s;
            if (cx >= box.x1 && cx <= box.x2) cells.push_back(r * side + c);
        }
    }
    if (cells.empty()) {
        auto cell_of = [&](double v) {
            return std::clamp(static_cast<Index>(std::floor(v * s)), Index{0}, side - 1);
        };
        cells.push_back(cell_of(0.5 * (box.y1 + box.y2)) * side + cell_of(0.5 * (box.x1 + box.x2)));
    }
    return cells;
}

std::vector<ScoredBox> parse_proposals(std::istream& in)
{
    std::vector<ScoredBox> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::string probe;
        if (!(ls >> probe)) continue;
        ls.seekg(0);
        ls.clear();

        ScoredBox b;
        std::string rest;
        if (!(ls >> b.frame >> b.x1 >> b.y1 >> b.x2 >> b.y2 >> b.score) || (ls >> rest)) {
            throw InputError("proposal line " + std::to_string(line_no) +
                             ": expected 'frame x1 y1 x2 y2 score'");
        }
        if (b.frame < 0) throw InputError("proposal line " + std::to_string(line_no) + ": negative frame index");
        try {
            validate_box(b);
        } catch (const InputError& e) {
            throw InputError("proposal line " + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(b);
    }
    return out;
}

std::vector<ScoredBox> read_proposals(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return parse_proposals(in);
}

void write_proposals(std::ostream& out, const std::vector<ScoredBox>& boxes)
{
    out << "# frame x1 y1 x2 y2 score\n" << std::setprecision(17);
    for (const auto& b : boxes) {
        out << b.frame << ' ' << b.x1 << ' ' << b.y1 << ' ' << b.x2 << ' ' << b.y2 << ' ' << b.score << '\n';
    }
}

} // namespace ipf
