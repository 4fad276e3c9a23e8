#include "ipformer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

namespace ipf {
namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Shortest text that reads back to the same double.
std::string real(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    std::istringstream is(text);
    T v{};
    std::string rest;
    if (!(is >> v) || (is >> rest)) throw InputError("config: bad value '" + text + "' for " + key);
    return v;
}

} // namespace

void PipelineConfig::validate() const
{
    align.validate();
    if (max_boxes < 1 || max_boxes > 64) throw InputError("config: max_boxes must lie in 1..64");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw InputError("config: nms_iou must lie in (0, 1]");
    if (!(sim_threshold >= -1.0 && sim_threshold <= 1.0)) throw InputError("config: sim_threshold must lie in [-1, 1]");
}

PipelineConfig parse_config(std::istream& in)
{
    PipelineConfig c;
    auto& a = c.align;
    const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
        {"d_model", [&](auto& k, auto& v) { a.d_model = parse_number<Index>(k, v); }},
        {"d_out", [&](auto& k, auto& v) { a.d_out = parse_number<Index>(k, v); }},
        {"x_repeat", [&](auto& k, auto& v) { a.x_repeat = parse_number<Index>(k, v); }},
        {"v_max", [&](auto& k, auto& v) { a.v_max = parse_number<Index>(k, v); }},
        {"heads", [&](auto& k, auto& v) { a.heads = parse_number<Index>(k, v); }},
        {"frames_per_slice", [&](auto& k, auto& v) { a.frames_per_slice = parse_number<Index>(k, v); }},
        {"patch_grid", [&](auto& k, auto& v) { a.patch_grid = parse_number<Index>(k, v); }},
        {"depth", [&](auto& k, auto& v) { a.depth = parse_number<Index>(k, v); }},
        {"hidden_mult", [&](auto& k, auto& v) { a.hidden_mult = parse_number<Index>(k, v); }},
        {"norm_eps", [&](auto& k, auto& v) { a.norm_eps = parse_number<double>(k, v); }},
        {"query_init_std", [&](auto& k, auto& v) { a.query_init_std = parse_number<double>(k, v); }},
        {"max_boxes", [&](auto& k, auto& v) { c.max_boxes = parse_number<int>(k, v); }},
        {"nms_iou", [&](auto& k, auto& v) { c.nms_iou = parse_number<double>(k, v); }},
        {"sim_threshold", [&](auto& k, auto& v) { c.sim_threshold = parse_number<double>(k, v); }},
        {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
    };

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InputError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->second(key, value);
    }
    c.validate();
    return c;
}

PipelineConfig read_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return parse_config(in);
}

void write_config(std::ostream& out, const PipelineConfig& c)
{
    const auto& a = c.align;
    out << "d_model = " << a.d_model << "\n"
        << "d_out = " << a.d_out << "\n"
        << "x_repeat = " << a.x_repeat << "\n"
        << "v_max = " << a.v_max << "\n"
        << "heads = " << a.heads << "\n"
        << "frames_per_slice = " << a.frames_per_slice << "\n"
        << "patch_grid = " << a.patch_grid << "\n"
        << "depth = " << a.depth << "\n"
        << "hidden_mult = " << a.hidden_mult << "\n"
        << "norm_eps = " << real(a.norm_eps) << "\n"
        << "query_init_std = " << real(a.query_init_std) << "\n"
        << "max_boxes = " << c.max_boxes << "\n"
        << "nms_iou = " << real(c.nms_iou) << "\n"
        << "sim_threshold = " << real(c.sim_threshold) << "\n"
        << "seed = " << c.seed << "\n";
}

} // namespace ipf
