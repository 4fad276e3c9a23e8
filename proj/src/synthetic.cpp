#include "ipformer/synthetic.hpp"

#include "ipformer/tensor_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>

namespace ipf {
namespace {

constexpr double kMaxSignatureCosine = 0.3;

MatrixXr draw_signatures(int count, Index dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXr sig(count, dim);
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            VectorXr v(dim);
            for (Index j = 0; j < dim; ++j) v[j] = normal(rng);
            v.normalize();
            placed = true;
            for (int k = 0; k < i && placed; ++k) {
                if (std::abs(sig.row(k).dot(v)) >= kMaxSignatureCosine) placed = false;
            }
            if (placed) sig.row(i) = v.transpose();
        }
        if (!placed) {
            throw InputError("cannot draw " + std::to_string(count) + " separated signatures in " +
                             std::to_string(dim) + " dimensions");
        }
    }
    return sig;
}

struct CellRect {
    Index r0, c0, h, w;
};

class FrameGrid {
public:
    explicit FrameGrid(Index side) : side_(side), used_(static_cast<std::size_t>(side * side), 0) {}

    bool free(const CellRect& r) const
    {
        for (Index y = r.r0; y < r.r0 + r.h; ++y)
            for (Index x = r.c0; x < r.c0 + r.w; ++x)
                if (used_[static_cast<std::size_t>(y * side_ + x)]) return false;
        return true;
    }

    void take(const CellRect& r)
    {
        for (Index y = r.r0; y < r.r0 + r.h; ++y)
            for (Index x = r.c0; x < r.c0 + r.w; ++x) used_[static_cast<std::size_t>(y * side_ + x)] = 1;
    }

    std::optional<CellRect> place(std::mt19937_64& rng)
    {
        const Index hi = std::clamp<Index>(side_ / 2, 1, 4);
        const Index lo = std::min<Index>(2, hi);
        std::uniform_int_distribution<Index> size(lo, hi);
        for (int attempt = 0; attempt < 200; ++attempt) {
            const Index h = size(rng), w = size(rng);
            std::uniform_int_distribution<Index> row(0, side_ - h), col(0, side_ - w);
            CellRect r{row(rng), col(rng), h, w};
            if (free(r)) return r;
        }
        for (Index i = 0; i < side_ * side_; ++i) {
            CellRect r{i / side_, i % side_, 1, 1};
            if (free(r)) return r;
        }
        return std::nullopt;
    }

private:
    Index side_;
    std::vector<char> used_;
};

ScoredBox rect_box(const CellRect& r, Index side, int frame, double score)
{
    const double s = static_cast<double>(side);
    ScoredBox b;
    b.x1 = static_cast<double>(r.c0) / s;
    b.y1 = static_cast<double>(r.r0) / s;
    b.x2 = static_cast<double>(r.c0 + r.w) / s;
    b.y2 = static_cast<double>(r.r0 + r.h) / s;
    b.score = score;
    b.frame = frame;
    return b;
}

} // namespace

const char* role_name(IdentityRole role)
{
    switch (role) {
    case IdentityRole::recurring: return "recurring";
    case IdentityRole::short_frame: return "short";
    case IdentityRole::unexpected: return "unexpected";
    }
    return "?";
}

std::vector<ScoredBox> SyntheticScene::proposals() const
{
    std::vector<ScoredBox> out;
    out.reserve(planted.size());
    for (const auto& p : planted) out.push_back(p.box);
    return out;
}

std::set<int> SyntheticScene::identities_in(int first, int count) const
{
    std::set<int> ids;
    for (const auto& p : planted) {
        if (p.box.frame >= first && p.box.frame < first + count) ids.insert(p.identity);
    }
    return ids;
}

SyntheticScene render_scene(const SceneSpec& spec, const std::vector<Appearance>& appearances,
                            std::vector<IdentityRole> roles, std::vector<int> shot_starts)
{
    if (spec.identities < 1 || spec.frames < 1 || spec.d_model < 1 || spec.patch_grid < 1) {
        throw InputError("scene: identities, frames, d_model and patch_grid must be positive");
    }
    if (spec.noise < 0 || spec.background < 0) throw InputError("scene: noise and background must be >= 0");
    if (static_cast<int>(roles.size()) != spec.identities) throw InputError("scene: one role per identity required");

    const Index side = spec.patch_grid;
    const Index cells = side * side;
    const Index dim = spec.d_model;
    std::map<int, std::vector<int>> by_frame;
    for (const auto& a : appearances) {
        if (a.identity < 0 || a.identity >= spec.identities || a.frame < 0 || a.frame >= spec.frames) {
            throw InputError("scene: appearance out of range");
        }
        auto& ids = by_frame[a.frame];
        if (std::find(ids.begin(), ids.end(), a.identity) == ids.end()) ids.push_back(a.identity);
    }
    for (const auto& [frame, ids] : by_frame) {
        if (static_cast<Index>(ids.size()) > cells) {
            throw InputError("scene infeasible: frame " + std::to_string(frame) + " needs " +
                             std::to_string(ids.size()) + " boxes but the grid has " + std::to_string(cells) +
                             " cells");
        }
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> score(0.6, 1.0);

    SyntheticScene scene;
    scene.signatures = draw_signatures(spec.identities, dim, rng);
    scene.roles = std::move(roles);
    scene.shot_starts = std::move(shot_starts);

    const double bg_scale = spec.background / std::sqrt(static_cast<double>(dim));
    const double noise_scale = spec.noise / std::sqrt(static_cast<double>(dim));
    scene.frames = Tensor<double>(Shape{spec.frames, cells + 1, dim});
    for (double& v : scene.frames.values()) v = bg_scale * normal(rng);

    for (const auto& [frame, ids] : by_frame) {
        FrameGrid grid(side);
        for (int id : ids) {
            auto rect = grid.place(rng);
            if (!rect) {
                throw InputError("scene infeasible: no free cell left in frame " + std::to_string(frame));
            }
            grid.take(*rect);
            for (Index y = rect->r0; y < rect->r0 + rect->h; ++y) {
                for (Index x = rect->c0; x < rect->c0 + rect->w; ++x) {
                    const Index cell = y * side + x;
                    for (Index d = 0; d < dim; ++d) {
                        scene.frames(frame, cell, d) = scene.signatures(id, d) + noise_scale * normal(rng);
                    }
                }
            }
            const ScoredBox box = rect_box(*rect, side, frame, score(rng));
            scene.planted.push_back({box, id, false});

            // A shrunken copy keeps IoU >= 2/3 with the original, so NMS at
            // the default threshold removes it.
            if (spec.duplicates && (rect->w >= 3 || rect->h >= 3)) {
                CellRect inner = *rect;
                if (inner.w >= 3) --inner.w;
                else --inner.h;
                scene.planted.push_back({rect_box(inner, side, frame, 0.9 * box.score), id, true});
            }
        }
    }
    return scene;
}

SyntheticScene generate_scene(const SceneSpec& spec)
{
    if (spec.shots < 1 || spec.shots > spec.frames) throw InputError("scene: shots must lie in 1..frames");
    if (spec.max_per_frame < 1) throw InputError("scene: max_per_frame must be >= 1");
    if (spec.identities < 1) throw InputError("scene: identities must be >= 1");

    std::mt19937_64 rng(spec.seed ^ 0x5eed5eed5eedULL);
    std::vector<int> starts;
    for (int s = 0; s < spec.shots; ++s) starts.push_back(s * spec.frames / spec.shots);
    auto shot_range = [&](int s) {
        const int b = starts[static_cast<std::size_t>(s)];
        const int e = s + 1 < spec.shots ? starts[static_cast<std::size_t>(s + 1)] : spec.frames;
        return std::pair{b, e};
    };

    const int k = spec.identities;
    std::vector<IdentityRole> roles(static_cast<std::size_t>(k), IdentityRole::recurring);
    if (k >= 2) roles[static_cast<std::size_t>(k - 1)] = IdentityRole::short_frame;
    if (k >= 3) roles[static_cast<std::size_t>(k - 2)] = IdentityRole::unexpected;

    std::vector<std::vector<int>> frame_ids(static_cast<std::size_t>(spec.frames));
    auto add = [&](int frame, int id) {
        auto& ids = frame_ids[static_cast<std::size_t>(frame)];
        if (static_cast<int>(ids.size()) < spec.max_per_frame) ids.push_back(id);
    };

    // Rare roles first so the per-frame cap only ever trims recurring ones.
    std::uniform_int_distribution<int> pick_shot(0, spec.shots - 1);
    std::uniform_int_distribution<int> pick_frame(0, spec.frames - 1);
    std::bernoulli_distribution present(0.85);
    for (int id = k - 1; id >= 0; --id) {
        switch (roles[static_cast<std::size_t>(id)]) {
        case IdentityRole::short_frame: add(pick_frame(rng), id); break;
        case IdentityRole::unexpected: {
            auto [b, e] = shot_range(pick_shot(rng));
            for (int f = b; f < e; ++f) add(f, id);
            break;
        }
        case IdentityRole::recurring: {
            for (int s = 0; s < spec.shots; ++s) {
                if (spec.shots > 1 && id > 0 && (s + id) % 2 != 0) continue;
                auto [b, e] = shot_range(s);
                for (int f = b; f < e; ++f) {
                    if (f == b || present(rng)) add(f, id);
                }
            }
            break;
        }
        }
    }

    std::vector<Appearance> appearances;
    for (int f = 0; f < spec.frames; ++f) {
        for (int id : frame_ids[static_cast<std::size_t>(f)]) appearances.push_back({id, f});
    }
    return render_scene(spec, appearances, std::move(roles), std::move(starts));
}

void write_scene(const SyntheticScene& scene, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    io::write_tensor_file(dir / "features.iptf", scene.frames.cast<float>());

    std::ofstream boxes(dir / "boxes.txt");
    std::ofstream labels(dir / "labels.txt");
    std::ofstream shots(dir / "shots.txt");
    if (!boxes || !labels || !shots) throw InputError("cannot write scene files into " + dir.string());
    write_proposals(boxes, scene.proposals());

    labels << "# frame x1 y1 x2 y2 score identity role duplicate\n" << std::setprecision(17);
    for (const auto& p : scene.planted) {
        const auto& b = p.box;
        labels << b.frame << ' ' << b.x1 << ' ' << b.y1 << ' ' << b.x2 << ' ' << b.y2 << ' ' << b.score << ' '
               << p.identity << ' ' << role_name(scene.roles[static_cast<std::size_t>(p.identity)]) << ' '
               << (p.duplicate ? 1 : 0) << '\n';
    }
    shots << "# first frame of each shot\n";
    for (int s : scene.shot_starts) shots << s << '\n';
}

} // namespace ipf
