#include "ipformer/pipeline.hpp"
#include "ipformer/synthetic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ipf;

namespace {

PipelineConfig small_pipeline()
{
    PipelineConfig cfg;
    cfg.align.d_model = 16;
    cfg.align.heads = 4;
    cfg.align.patch_grid = 4;
    return cfg;
}

Tensor<double> video(Index frames, const PipelineConfig& cfg, unsigned seed)
{
    std::mt19937_64 rng(seed);
    return test::random_tensor({frames, cfg.align.tokens_per_frame(), cfg.align.d_model}, rng);
}

} // namespace

TEST(SliceFrames, FloorSlicing)
{
    const auto cfg = small_pipeline();
    const auto v16 = video(16, cfg, 1);
    const auto s16 = slice_frames(v16);
    EXPECT_EQ(s16.slice_count(), 2);
    EXPECT_EQ(s16.slices[1], v16.range(8, 8));

    const auto v20 = video(20, cfg, 2);
    const auto s20 = slice_frames(v20);
    EXPECT_EQ(s20.slice_count(), 2);
    EXPECT_EQ(s20.frame_count, 20);
    EXPECT_EQ(s20.slices[1], v20.range(8, 8));

    const auto v8 = video(8, cfg, 3);
    const auto s8 = slice_frames(v8);
    ASSERT_EQ(s8.slice_count(), 1);
    EXPECT_EQ(s8.slices[0], v8);

    EXPECT_THROW(slice_frames(video(7, cfg, 4)), InputError);
}

TEST(StackFrames, BuildsVideoTensor)
{
    std::mt19937_64 rng(5);
    std::vector<Tensor<double>> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(test::random_tensor({5, 2}, rng));
    const auto v = stack_frames(frames);
    EXPECT_EQ(v.shape(), (Shape{3, 5, 2}));
    EXPECT_EQ(v.at(2), frames[2]);
    frames.push_back(test::random_tensor({4, 2}, rng));
    EXPECT_THROW(stack_frames(frames), DimensionError);
    EXPECT_THROW(stack_frames(std::vector<Tensor<double>>{}), InputError);
}

TEST(SplitBoxes, LocalFramesAndDroppedTail)
{
    ScoredBox a{0, 0, 0.5, 0.5, 0.9, 3, false};
    ScoredBox b{0, 0, 0.5, 0.5, 0.8, 11, false};
    ScoredBox tail{0, 0, 0.5, 0.5, 0.7, 17, false};
    const auto split = split_boxes({a, b, tail}, 20, 8);
    ASSERT_EQ(split.size(), 2u);
    ASSERT_EQ(split[0].size(), 1u);
    ASSERT_EQ(split[1].size(), 1u);
    EXPECT_EQ(split[1][0].frame, 3);
    ScoredBox bad = a;
    bad.frame = 20;
    EXPECT_THROW(split_boxes({bad}, 20, 8), InputError);
}

TEST(RunPipeline, SixteenFramesGiveThreeHundredTwentyRows)
{
    PipelineConfig cfg;
    cfg.align.d_model = 32;
    const auto stream = slice_frames(video(16, cfg, 6));
    const auto params = AlignParams<double>::init(cfg.align, 0);
    const auto tokens = concat_tokens(run_pipeline(stream, {}, params, cfg));
    EXPECT_EQ(tokens.shape(), (Shape{2, 160, 32}));
    EXPECT_EQ(tokens.extent(0) * tokens.extent(1), 320);
}

TEST(RunPipeline, EmptyBoxesLeavePromptsZero)
{
    const auto cfg = small_pipeline();
    const auto stream = slice_frames(video(24, cfg, 7));
    const auto params = AlignParams<double>::init(cfg.align, 0);
    const auto results = run_pipeline(stream, {}, params, cfg);
    ASSERT_EQ(results.size(), 3u);
    for (const auto& r : results) {
        EXPECT_EQ(r.valid_prompts, 0);
        EXPECT_EQ(r.instances, 0);
        EXPECT_EQ(r.aligned.tokens.rows(), 160);
    }
    const auto built = build_instance_prompts(stream.slices[0], {}, cfg);
    EXPECT_TRUE(built.prompts.tokens.isZero(0.0));
}

TEST(RunPipeline, ShapeLawAcrossConfigs)
{
    for (Index x : {1, 3}) {
        for (Index v : {4, 8}) {
            auto cfg = small_pipeline();
            cfg.align.x_repeat = x;
            cfg.align.v_max = v;
            const auto params = AlignParams<double>::init(cfg.align, 0);
            for (Index f : {8, 13, 24}) {
                const auto out = concat_tokens(run_pipeline(slice_frames(video(f, cfg, 8)), {}, params, cfg));
                EXPECT_EQ(out.extent(0) * out.extent(1), (f / 8) * (16 * x + v));
            }
        }
    }
}

TEST(RunPipeline, PromptsCountIdentitiesPerSlice)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneSpec spec;
        spec.identities = 3;
        spec.shots = 2;
        spec.frames = 16;
        spec.d_model = 32;
        spec.patch_grid = 8;
        spec.seed = seed;
        const auto scene = generate_scene(spec);
        PipelineConfig cfg;
        cfg.align.d_model = 32;
        cfg.align.patch_grid = 8;
        const auto stream = slice_frames(scene.frames);
        const auto params = AlignParams<double>::init(cfg.align, 0);
        const auto results = run_pipeline(stream, split_boxes(scene.proposals(), 16, 8), params, cfg);
        for (Index t = 0; t < 2; ++t) {
            const auto present = scene.identities_in(static_cast<int>(t * 8), 8);
            EXPECT_EQ(results[t].valid_prompts, static_cast<Index>(present.size())) << "seed " << seed << " slice " << t;
        }
    }
}

TEST(RunPipeline, ThreeIdentitiesTogetherGiveThreePrompts)
{
    SceneSpec spec;
    spec.identities = 3;
    spec.frames = 16;
    spec.d_model = 32;
    spec.patch_grid = 8;
    std::vector<Appearance> app;
    for (int f = 0; f < 16; ++f) {
        app.push_back({0, f});
        if (f % 8 < 3) app.push_back({1, f});
        if (f % 8 == 5) app.push_back({2, f});
    }
    const auto scene = render_scene(spec, app,
                                    {IdentityRole::recurring, IdentityRole::recurring, IdentityRole::short_frame},
                                    {0, 8});
    PipelineConfig cfg;
    cfg.align.d_model = 32;
    cfg.align.patch_grid = 8;
    const auto results = run_pipeline(slice_frames(scene.frames), split_boxes(scene.proposals(), 16, 8),
                                      AlignParams<double>::init(cfg.align, 0), cfg);
    for (const auto& r : results) EXPECT_EQ(r.valid_prompts, 3);
}

TEST(RunPipeline, DeterministicAcrossThreadCounts)
{
    const auto cfg = small_pipeline();
    SceneSpec spec;
    spec.frames = 32;
    spec.d_model = 16;
    spec.patch_grid = 4;
    spec.max_per_frame = 3;
    spec.seed = 3;
    const auto scene = generate_scene(spec);
    const auto stream = slice_frames(scene.frames);
    const auto boxes = split_boxes(scene.proposals(), 32, 8);
    const auto params = AlignParams<double>::init(cfg.align, 1);
    const auto serial = concat_tokens(run_pipeline(stream, boxes, params, cfg, 1));
    EXPECT_EQ(concat_tokens(run_pipeline(stream, boxes, params, cfg, 4)), serial);
    EXPECT_EQ(concat_tokens(run_pipeline(stream, boxes, params, cfg, 4)), serial);

    // Each slice alone, visited back to front, reproduces its row block.
    for (Index t = stream.slice_count(); t-- > 0;) {
        const auto r = process_slice(stream.slices[t], boxes[t], params, cfg, t);
        EXPECT_EQ(Tensor<double>::from_matrix(r.aligned.tokens), serial.at(t));
    }
}

TEST(RunPipeline, ErrorsNameTheSlice)
{
    const auto cfg = small_pipeline();
    auto v = video(16, cfg, 9);
    v(10, 0, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto params = AlignParams<double>::init(cfg.align, 0);
    try {
        run_pipeline(slice_frames(v), {}, params, cfg, 2);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("slice 1: ", 0), 0u) << e.what();
    }
}

TEST(RunPipeline, RejectsMismatchedInputs)
{
    const auto cfg = small_pipeline();
    const auto params = AlignParams<double>::init(cfg.align, 0);
    auto other = cfg;
    other.align.patch_grid = 3;
    EXPECT_THROW(run_pipeline(slice_frames(video(8, other, 1)), {}, params, cfg), DimensionError);
    EXPECT_THROW(run_pipeline(slice_frames(video(16, cfg, 1)), {{}}, params, cfg), InputError);
}

TEST(RunPipeline, FloatPrecisionRuns)
{
    const auto cfg = small_pipeline();
    const auto stream = slice_frames(video(16, cfg, 10).cast<float>());
    const auto params = AlignParams<double>::init(cfg.align, 0).cast<float>();
    const auto out = concat_tokens(run_pipeline(stream, {}, params, cfg));
    EXPECT_EQ(out.shape(), (Shape{2, 160, 16}));
    EXPECT_TRUE(out.all_finite());
}
