#include "ipformer/harness.hpp"

#include "ipformer/pipeline.hpp"
#include "ipformer/synthetic.hpp"

#include <random>

namespace ipf {
namespace {

MatrixXr random_matrix(Index rows, Index cols, std::mt19937_64& rng, double std = 1.0)
{
    std::normal_distribution<double> normal(0.0, std);
    MatrixXr m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

/// Checks d(loss)/d(param) for every parameter, one at a time.
void check_parameters(const std::string& label, const AlignParams<double>& params, const AlignConfig& cfg,
                      const MatrixXr& keys, const MatrixXr& anchors, const MatrixXr* target,
                      std::vector<GradCheckEntry>& out)
{
    const auto names = params.named();
    for (std::size_t slot = 0; slot < names.size(); ++slot) {
        auto loss = [&](ad::Var<double> probe) {
            auto& tape = probe.tape();
            auto vars = bind(tape, params).all();
            vars[slot] = probe;
            auto y = align_forward(tape.leaf(keys), tape.leaf(anchors), ParamVars<double>::from_list(vars), cfg);
            return target ? ad::mean_squared_error(y, *target) : ad::sum(y);
        };
        const double err = ad::grad_check<double>(loss, *names[slot].second, kGradCheckStep);
        out.push_back({label + "/" + names[slot].first, err, kAlignGradTolerance});
    }
}

void check_ops(std::mt19937_64& rng, std::vector<GradCheckEntry>& out)
{
    const MatrixXr x = random_matrix(3, 4, rng);
    const MatrixXr w = random_matrix(4, 3, rng);
    const MatrixXr left = random_matrix(3, 3, rng);
    const MatrixXr row = random_matrix(1, 4, rng);
    const MatrixXr other = random_matrix(3, 4, rng);
    const MatrixXr target34 = random_matrix(3, 4, rng);
    const MatrixXr target43 = random_matrix(4, 3, rng);
    const MatrixXr target33 = random_matrix(3, 3, rng);
    // A squared error against a random target weighs every output entry
    // differently, so no op gets a trivially constant loss.
    auto loss = [&](ad::Var<double> y) {
        const MatrixXr& t = y.rows() == 4 ? target43 : (y.cols() == 3 ? target33 : target34);
        return ad::mean_squared_error(y, t);
    };
    auto check = [&](const std::string& name, auto&& f) {
        out.push_back({"op/" + name, ad::grad_check<double>(f, x, kGradCheckStep), kOpGradTolerance});
    };

    check("matmul_left", [&](auto v) { return loss(ad::matmul(v, v.tape().leaf(w))); });
    check("matmul_right", [&](auto v) { return loss(ad::matmul(v.tape().leaf(left), v)); });
    check("add", [&](auto v) { return loss(v + v.tape().leaf(other)); });
    check("sub", [&](auto v) { return loss(v.tape().leaf(other) - v); });
    check("add_row", [&](auto v) { return loss(ad::add_row(v, v.tape().leaf(row))); });
    check("scale", [&](auto v) { return loss(ad::scale(v, 0.37)); });
    check("transpose", [&](auto v) { return loss(ad::transpose(v)); });
    check("softmax_rows", [&](auto v) { return loss(ad::softmax_rows(v)); });
    check("gelu", [&](auto v) { return loss(ad::gelu(v)); });
    check("layer_norm_rows", [&](auto v) { return loss(ad::layer_norm_rows(v, 1e-5)); });
    check("columns_concat", [&](auto v) {
        std::vector<ad::Var<double>> parts{ad::columns(v, 2, 2), ad::columns(v, 0, 2)};
        return loss(ad::concat_columns<double>(parts));
    });
    check("sum", [&](auto v) { return ad::sum(v); });
    check("composition", [&](auto v) {
        auto h = ad::gelu(ad::matmul(ad::layer_norm_rows(v, 1e-5), v.tape().leaf(w)));
        return loss(ad::softmax_rows(h));
    });
}

} // namespace

PipelineConfig micro_config()
{
    PipelineConfig c;
    c.align.d_model = 8;
    c.align.heads = 2;
    c.align.frames_per_slice = 2;
    c.align.patch_grid = 2;
    c.align.x_repeat = 1;
    c.align.v_max = 2;
    c.align.query_init_std = 0.5;
    return c;
}

std::vector<GradCheckEntry> run_gradchecks(bool micro_only, std::uint64_t seed)
{
    std::vector<GradCheckEntry> out;
    std::mt19937_64 rng(seed);

    const auto cfg = micro_config().align;
    const auto params = AlignParams<double>::init(cfg, seed);
    const Index key_rows = cfg.frames_per_slice * cfg.tokens_per_frame();
    const MatrixXr keys = random_matrix(key_rows, cfg.d_model, rng);
    const MatrixXr anchors = random_matrix(cfg.query_count(), cfg.d_model, rng, 0.5);
    const MatrixXr target = random_matrix(cfg.query_count(), cfg.output_dim(), rng);

    check_parameters("sum", params, cfg, keys, anchors, nullptr, out);
    check_parameters("reconstruction", params, cfg, keys, anchors, &target, out);
    if (!micro_only) check_ops(rng, out);
    return out;
}

PipelineConfig toy_config()
{
    PipelineConfig c;
    c.align.d_model = 16;
    c.align.heads = 2;
    c.align.patch_grid = 4;
    c.align.v_max = 8;
    return c;
}

ToyFitResult toy_fit(int steps, double lr, std::uint64_t seed)
{
    if (steps < 0) throw InputError("toy_fit: steps must be >= 0");
    if (!(lr > 0.0)) throw InputError("toy_fit: lr must be positive");
    const auto cfg = toy_config();

    SceneSpec spec;
    spec.identities = 3;
    spec.shots = 2;
    spec.frames = static_cast<int>(cfg.align.frames_per_slice);
    spec.d_model = cfg.align.d_model;
    spec.patch_grid = cfg.align.patch_grid;
    spec.max_per_frame = 3;
    spec.seed = 7;
    const auto scene = generate_scene(spec);
    const Tensor<double>& slice = scene.frames;

    const auto built = build_instance_prompts(slice, scene.proposals(), cfg);
    const MatrixXr anchors = assemble_anchors(frame_tokens(slice, cfg.align.x_repeat), built.prompts).matrix();
    const MatrixXr keys = flatten_slice(slice);

    ToyFitResult result;
    result.params = AlignParams<double>::init(cfg.align, seed);
    for (int step = 0; step <= steps; ++step) {
        ad::Tape<double> tape;
        const auto vars = bind(tape, result.params);
        auto y = align_forward(tape.leaf(keys), tape.leaf(anchors), vars, cfg.align);
        auto loss = ad::mean_squared_error(y, anchors);
        result.history.push_back(loss.value()(0, 0));
        if (step == steps) break;
        tape.backward(loss);
        const auto all = vars.all();
        auto slots = result.params.named();
        for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].second -= lr * all[i].grad();
    }
    result.initial_loss = result.history.front();
    result.final_loss = result.history.back();
    return result;
}

} // namespace ipf
