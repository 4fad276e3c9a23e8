// Command-line front end: pipeline runs, synthetic scenes, token budgets,
// gradient checks, toy-fit, trajectory filtering and benchmark scoring.

#include "ipformer/align.hpp"
#include "ipformer/config.hpp"
#include "ipformer/harness.hpp"
#include "ipformer/pipeline.hpp"
#include "ipformer/scoring.hpp"
#include "ipformer/selection.hpp"
#include "ipformer/synthetic.hpp"
#include "ipformer/tensor_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitTolerance = 4;

constexpr const char* kExitCodes = R"(Exit codes:
  0  success
  2  input error (unreadable file, malformed record, config violation, bad arguments)
  3  numeric failure (non-finite values during a computation)
  4  tolerance failure (a gradient check exceeded its tolerance)
Environment:
  IPF_THREADS  caps the worker pool used by `run`)";

ipf::Tensor<double> load_video(const std::filesystem::path& path)
{
    auto records = ipf::io::read_tensor_records(path);
    if (records.size() == 1 && records.front().rank() == 3) return records.front().cast<double>();
    std::vector<ipf::Tensor<double>> frames;
    for (const auto& r : records) {
        if (r.rank() != 2) {
            throw ipf::InputError("features must be one F x tokens x D tensor or a sequence of tokens x D frames");
        }
        frames.push_back(r.cast<double>());
    }
    return ipf::stack_frames(frames);
}

template <typename Scalar>
int run_command(const ipf::PipelineConfig& cfg, const ipf::Tensor<double>& video,
                const std::vector<ipf::ScoredBox>& boxes, const std::optional<std::filesystem::path>& params_path,
                const std::filesystem::path& out_path)
{
    const auto& a = cfg.align;
    ipf::AlignParams<Scalar> params =
        params_path ? ipf::from_checkpoint<Scalar>(ipf::io::load_checkpoint(*params_path), a)
                    : ipf::AlignParams<double>::init(a, cfg.seed).template cast<Scalar>();

    const auto stream = ipf::slice_frames(video.cast<Scalar>(), a.frames_per_slice);
    const auto per_slice = ipf::split_boxes(boxes, stream.frame_count, a.frames_per_slice);
    const auto results = ipf::run_pipeline(stream, per_slice, params, cfg);
    ipf::io::write_tensor_file(out_path, ipf::concat_tokens(results).template cast<float>());

    std::ostringstream report;
    report << "frames=" << stream.frame_count << "\n"
           << "slices=" << stream.slice_count() << "\n"
           << "tokens=" << stream.slice_count() * a.query_count() << "\n"
           << "token_dim=" << a.output_dim() << "\n";
    for (const auto& r : results) {
        report << "slice " << r.aligned.slice_index << ": instances=" << r.instances
               << " valid_prompts=" << r.valid_prompts << "\n";
    }
    std::cout << report.str();
    std::ofstream(out_path.string() + ".report.txt") << report.str();
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Instance-prompt visual token compression for multi-shot video"};
    app.footer(kExitCodes);
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run the slice pipeline over a feature file");
    std::string features, boxes_file, config_file, params_file, out_file, precision = "f64";
    run->add_option("--features", features, "IPTF features (F x tokens x D, or one tokens x D record per frame)")->required();
    run->add_option("--boxes", boxes_file, "Proposal text: frame x1 y1 x2 y2 score per line")->required();
    run->add_option("--config", config_file, "Key-value config file (defaults when omitted)");
    run->add_option("--params", params_file, "Parameter checkpoint (seeded init when omitted)");
    run->add_option("--out", out_file, "Output IPTF tensor T x queries x d_out")->required();
    run->add_option("--precision", precision, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic multi-shot scene");
    ipf::SceneSpec spec;
    std::string out_dir;
    synth->add_option("--identities", spec.identities, "Number of planted identities")->capture_default_str();
    synth->add_option("--shots", spec.shots, "Number of shots")->capture_default_str();
    synth->add_option("--frames", spec.frames, "Number of frames")->capture_default_str();
    synth->add_option("--noise", spec.noise, "Relative per-cell noise")->capture_default_str();
    synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
    synth->add_option("--d-model", spec.d_model, "Feature dimension")->capture_default_str();
    synth->add_option("--grid", spec.patch_grid, "Patch grid side")->capture_default_str();
    synth->add_option("--max-per-frame", spec.max_per_frame, "Identities per frame cap")->capture_default_str();
    synth->add_option("--out-dir", out_dir, "Output directory")->required();

    // tokenstats
    auto* stats = app.add_subcommand("tokenstats", "Compressed vs full-projection token counts");
    long stat_frames = 8;
    ipf::AlignConfig stat_cfg;
    stats->add_option("--frames", stat_frames, "Sampled frames")->required();
    stats->add_option("--x", stat_cfg.x_repeat, "Frame token repeat X")->capture_default_str();
    stats->add_option("--v", stat_cfg.v_max, "Instance prompt count V")->capture_default_str();

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    bool micro = false;
    std::uint64_t grad_seed = 1;
    bool verbose = false;
    grad->add_flag("--micro", micro, "Only the micro alignment-block configuration");
    grad->add_option("--seed", grad_seed, "Random seed")->capture_default_str();
    grad->add_flag("--verbose", verbose, "Print every check");

    // toyfit
    auto* toy = app.add_subcommand("toyfit", "Reconstruction toy-fit by gradient descent");
    int steps = 200;
    double lr = 0.5;
    std::uint64_t toy_seed = 0;
    std::string toy_out;
    toy->add_option("--steps", steps, "Gradient steps")->capture_default_str();
    toy->add_option("--lr", lr, "Learning rate")->capture_default_str();
    toy->add_option("--seed", toy_seed, "Parameter init seed")->capture_default_str();
    toy->add_option("--out", toy_out, "Save trained parameters as a checkpoint");

    // filter
    auto* filter = app.add_subcommand("filter", "Trajectory-based video selection");
    std::string trajectory;
    filter->add_option("--trajectory", trajectory, "Lines of: frame_index track_id...")->required();

    // score
    auto* scorer = app.add_subcommand("score", "Per-category multiple-choice accuracy");
    std::string answers, predictions;
    scorer->add_option("--answers", answers, "Lines of: question_id category option")->required();
    scorer->add_option("--predictions", predictions, "Lines of: question_id [category] option")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*run) {
            ipf::PipelineConfig cfg = config_file.empty() ? ipf::PipelineConfig{} : ipf::read_config(config_file);
            cfg.validate();
            const auto video = load_video(features);
            const auto boxes = ipf::read_proposals(boxes_file);
            std::optional<std::filesystem::path> params;
            if (!params_file.empty()) params = params_file;
            return precision == "f32" ? run_command<float>(cfg, video, boxes, params, out_file)
                                      : run_command<double>(cfg, video, boxes, params, out_file);
        }
        if (*synth) {
            const auto scene = ipf::generate_scene(spec);
            ipf::write_scene(scene, out_dir);
            ipf::PipelineConfig cfg;
            cfg.align.d_model = spec.d_model;
            cfg.align.patch_grid = spec.patch_grid;
            cfg.align.heads = spec.d_model % 8 == 0 ? 8 : 1;
            std::ofstream config_out(std::filesystem::path(out_dir) / "config.txt");
            ipf::write_config(config_out, cfg);
            std::cout << "frames=" << spec.frames << " identities=" << spec.identities
                      << " boxes=" << scene.planted.size() << " out_dir=" << out_dir << "\n";
            return kExitOk;
        }
        if (*stats) {
            stat_cfg.validate();
            const auto b = ipf::token_budget(stat_cfg, stat_frames);
            std::printf("compressed=%ld full=%ld ratio=%.4f\n", static_cast<long>(b.compressed),
                        static_cast<long>(b.full), b.ratio());
            std::printf("slices=%ld per_slice=%ld decomposition=%ld*%ld+%ld\n", static_cast<long>(b.slices),
                        static_cast<long>(stat_cfg.query_count()), static_cast<long>(stat_cfg.frames_per_slice),
                        static_cast<long>(2 * stat_cfg.x_repeat), static_cast<long>(stat_cfg.v_max));
            return kExitOk;
        }
        if (*grad) {
            const auto results = ipf::run_gradchecks(micro, grad_seed);
            double worst = 0.0;
            int failed = 0;
            for (const auto& r : results) {
                worst = std::max(worst, r.error);
                if (!r.passed()) ++failed;
                if (verbose || !r.passed()) {
                    std::printf("%-32s error=%.3e tol=%.0e %s\n", r.name.c_str(), r.error, r.tolerance,
                                r.passed() ? "ok" : "FAIL");
                }
            }
            std::printf("checks=%zu failed=%d max_error=%.3e\n", results.size(), failed, worst);
            return failed ? kExitTolerance : kExitOk;
        }
        if (*toy) {
            const auto r = ipf::toy_fit(steps, lr, toy_seed);
            std::printf("initial_loss=%.6f final_loss=%.6f reduction=%.4f\n", r.initial_loss, r.final_loss,
                        1.0 - r.final_loss / r.initial_loss);
            if (!toy_out.empty()) ipf::io::save_checkpoint(toy_out, ipf::to_checkpoint(r.params));
            return kExitOk;
        }
        if (*filter) {
            const auto r = ipf::selection_filter(ipf::read_trajectory(trajectory));
            std::printf("transitions=%d %s\n", r.transitions, r.retained ? "retained" : "rejected");
            return kExitOk;
        }
        if (*scorer) {
            const auto records = ipf::read_scored_records(answers, predictions);
            const auto s = ipf::score(records);
            std::cout << ipf::format_table(s) << '\n' << ipf::format_key_values(s);
            return kExitOk;
        }
    } catch (const ipf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const ipf::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitOk;
}
