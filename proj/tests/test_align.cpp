#include "ipformer/align.hpp"
#include "ipformer/harness.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ipf;

namespace {

AlignConfig small_config()
{
    AlignConfig c;
    c.d_model = 8;
    c.heads = 2;
    c.frames_per_slice = 2;
    c.patch_grid = 2;
    c.x_repeat = 1;
    c.v_max = 2;
    c.query_init_std = 0.5;
    return c;
}

// Loop-level forward pass written from the block definition.
oracle::Grid reference_forward(const oracle::Grid& keys, const oracle::Grid& anchors, const AlignParams<double>& p,
                               const AlignConfig& c)
{
    auto to_grid = [](const MatrixXr& m) {
        oracle::Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
        for (Index i = 0; i < m.rows(); ++i)
            for (Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
        return g;
    };
    const std::size_t q = anchors.size(), d = anchors.front().size(), dh = d / c.heads;
    oracle::Grid hidden = to_grid(p.base_queries);
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < d; ++j) hidden[i][j] += anchors[i][j];

    for (const auto& layer : p.layers) {
        oracle::Grid normed = hidden;
        for (auto& row : normed) {
            double mean = 0, var = 0;
            for (double v : row) mean += v;
            mean /= d;
            for (double v : row) var += (v - mean) * (v - mean);
            var /= d;
            for (double& v : row) v = (v - mean) / std::sqrt(var + c.norm_eps);
        }
        const auto qm = oracle::matmul(normed, to_grid(layer.wq));
        const auto km = oracle::matmul(keys, to_grid(layer.wk));
        const auto vm = oracle::matmul(keys, to_grid(layer.wv));
        oracle::Grid merged(q, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < static_cast<std::size_t>(c.heads); ++h) {
            for (std::size_t i = 0; i < q; ++i) {
                std::vector<double> logits(keys.size());
                double top = -1e300;
                for (std::size_t k = 0; k < keys.size(); ++k) {
                    double s = 0;
                    for (std::size_t t = 0; t < dh; ++t) s += qm[i][h * dh + t] * km[k][h * dh + t];
                    logits[k] = s / std::sqrt(static_cast<double>(dh));
                    top = std::max(top, logits[k]);
                }
                double z = 0;
                for (double& l : logits) z += (l = std::exp(l - top));
                for (std::size_t k = 0; k < keys.size(); ++k)
                    for (std::size_t t = 0; t < dh; ++t) merged[i][h * dh + t] += logits[k] / z * vm[k][h * dh + t];
            }
        }
        const auto proj = oracle::matmul(merged, to_grid(layer.wo));
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j < d; ++j) hidden[i][j] += proj[i][j];
    }
    auto act = oracle::matmul(hidden, to_grid(p.w1));
    for (auto& row : act)
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double x = row[j] + p.b1(0, static_cast<Index>(j));
            row[j] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        }
    auto out = oracle::matmul(act, to_grid(p.w2));
    for (auto& row : out)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += p.b2(0, static_cast<Index>(j));
    return out;
}

double max_diff(const MatrixXr& a, const oracle::Grid& b)
{
    double worst = 0;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
    return worst;
}

} // namespace

TEST(AlignConfig, QueryCountLaw)
{
    AlignConfig c;
    EXPECT_EQ(c.query_count(), 160);
    EXPECT_EQ(c.anchor_rows(), 80);
    EXPECT_EQ(c.tokens_per_frame(), 257);
    for (Index x : {1, 2, 5, 7})
        for (Index v : {1, 8, 80}) {
            c.x_repeat = x;
            c.v_max = v;
            EXPECT_EQ(c.query_count(), 8 * 2 * x + v);
        }
}

TEST(AlignConfig, Validation)
{
    AlignConfig c;
    c.heads = 3;
    EXPECT_THROW(c.validate(), InputError);
    c = AlignConfig{};
    c.x_repeat = 0;
    EXPECT_THROW(c.validate(), InputError);
    EXPECT_NO_THROW(AlignConfig{}.validate());
}

TEST(TokenBudget, CountsAtEightSixteenFortyEight)
{
    const AlignConfig c;
    auto b = token_budget(c, 8);
    EXPECT_EQ(b.compressed, 160);
    EXPECT_EQ(b.full, 2056);
    EXPECT_LT(b.ratio(), 0.10);
    EXPECT_EQ(token_budget(c, 16).compressed, 320);
    EXPECT_EQ(token_budget(c, 48).compressed, 960);
    EXPECT_EQ(token_budget(c, 20).slices, 2);
    EXPECT_THROW(token_budget(c, 7), InputError);
}

TEST(FrameTokens, DefaultRepeatGivesEightyRows)
{
    std::mt19937_64 rng(1);
    const auto ft = frame_tokens(test::random_tensor({8, 17, 4}, rng), 5);
    EXPECT_EQ(ft.shape(), (Shape{8, 10, 4}));
}

TEST(FrameTokens, ConstantFeatures)
{
    const auto ft = frame_tokens(Tensor<double>::constant({2, 5, 3}, 1.75), 3);
    for (double v : ft.values()) EXPECT_EQ(v, 1.75);
}

TEST(FrameTokens, ClassTokenThenPatchMean)
{
    std::mt19937_64 rng(2);
    const Index patches = 16, dim = 6;
    const auto slice = test::random_tensor({8, patches + 1, dim}, rng);
    const auto ft = frame_tokens(slice, 5);
    for (Index f = 0; f < 8; ++f) {
        const auto frame = slice.at(f);
        oracle::Grid rows;
        for (Index p = 0; p < patches; ++p) {
            rows.emplace_back();
            for (Index d = 0; d < dim; ++d) rows.back().push_back(frame(p, d));
        }
        const auto mean = oracle::column_mean(rows);
        for (Index d = 0; d < dim; ++d) {
            for (Index r = 0; r < 5; ++r) EXPECT_EQ(ft(f, r, d), frame(patches, d));
            for (Index r = 5; r < 10; ++r) EXPECT_NEAR(ft(f, r, d), mean[d], 1e-12);
        }
    }
}

TEST(Anchors, FrameRowsPrecedePrompts)
{
    std::mt19937_64 rng(3);
    const auto ft = test::random_tensor({8, 10, 4}, rng);
    InstancePromptSet<double> prompts;
    prompts.tokens = test::random_matrix(80, 4, rng);
    const auto a = assemble_anchors(ft, prompts);
    ASSERT_EQ(a.shape(), (Shape{160, 4}));
    for (Index f = 0; f < 8; ++f)
        for (Index r = 0; r < 10; ++r)
            for (Index d = 0; d < 4; ++d) EXPECT_EQ(a(f * 10 + r, d), ft(f, r, d));
    EXPECT_EQ(MatrixXr(a.matrix().bottomRows(80)), prompts.tokens);
}

TEST(Anchors, EmptyPromptsLeaveZeroTail)
{
    std::mt19937_64 rng(4);
    const auto prompts = build_prompt_set<double>({}, 80, 4);
    const auto a = assemble_anchors(test::random_tensor({8, 10, 4}, rng), prompts);
    EXPECT_TRUE(a.matrix().bottomRows(80).isZero(0.0));
}

TEST(Params, InitIsSeededAndShaped)
{
    const auto c = small_config();
    const auto a = AlignParams<double>::init(c, 9), b = AlignParams<double>::init(c, 9);
    const auto d = AlignParams<double>::init(c, 10);
    EXPECT_EQ(a.base_queries, b.base_queries);
    EXPECT_NE(a.base_queries, d.base_queries);
    EXPECT_NO_THROW(a.validate(c));
    EXPECT_TRUE(a.b1.isZero(0.0));
    auto bad = a;
    bad.w2(0, 0) = std::nan("");
    EXPECT_THROW(bad.validate(c), Error);
}

TEST(AlignForward, MatchesLoopReference)
{
    std::mt19937_64 rng(5);
    for (Index depth : {1, 2}) {
        for (Index d_out : {0, 5}) {
            auto c = small_config();
            c.depth = depth;
            c.d_out = d_out;
            const auto params = AlignParams<double>::init(c, 3);
            const auto slice = test::random_tensor({2, 5, 8}, rng);
            const auto anchors = test::random_tensor({6, 8}, rng);
            const auto out = align_forward(slice, anchors, params, c);
            ASSERT_EQ(out.tokens.rows(), 6);
            ASSERT_EQ(out.tokens.cols(), c.output_dim());
            const auto ref =
                reference_forward(test::to_grid(Tensor<double>::from_matrix(flatten_slice(slice))),
                                  test::to_grid(anchors), params, c);
            EXPECT_LT(max_diff(out.tokens, ref), 1e-12);
        }
    }
}

TEST(AlignForward, ZeroAnchorsEqualBareQueries)
{
    std::mt19937_64 rng(6);
    const auto c = small_config();
    const auto params = AlignParams<double>::init(c, 4);
    const auto slice = test::random_tensor({2, 5, 8}, rng);
    const auto out = align_forward(slice, Tensor<double>(Shape{6, 8}), params, c);
    const oracle::Grid zeros(6, std::vector<double>(8, 0.0));
    const auto ref = reference_forward(test::to_grid(Tensor<double>::from_matrix(flatten_slice(slice))), zeros, params, c);
    EXPECT_LT(max_diff(out.tokens, ref), 1e-12);
}

TEST(AlignForward, IdenticalKeysGiveValueRow)
{
    AlignConfig c;
    c.d_model = 16;
    c.heads = 4;
    auto params = AlignParams<double>::init(c, 1);
    const MatrixXr eye = MatrixXr::Identity(16, 16);
    params.layers[0] = {eye, eye, eye, eye};

    std::mt19937_64 rng(7);
    const RowVector<double> v = test::random_matrix(1, 16, rng);
    Tensor<double> slice(Shape{8, 257, 16});
    for (Index r = 0; r < 8 * 257; ++r) slice.flat().segment(r * 16, 16) = v.transpose();
    ASSERT_EQ(flatten_slice(slice).rows(), 2056);

    AlignTrace<double> trace;
    align_forward(slice, test::random_tensor({160, 16}, rng), params, c, 0, &trace);
    ASSERT_EQ(trace.head_outputs.size(), 1u);
    const MatrixXr attended = trace.head_outputs[0] * params.layers[0].wo;
    for (Index i = 0; i < 160; ++i) EXPECT_LT((attended.row(i) - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AlignForward, AttentionRowsSumToOne)
{
    std::mt19937_64 rng(8);
    auto c = small_config();
    c.depth = 2;
    for (int rep = 0; rep < 20; ++rep) {
        const auto params = AlignParams<double>::init(c, rep);
        AlignTrace<double> trace;
        align_forward(test::random_tensor({2, 5, 8}, rng, 3.0), test::random_tensor({6, 8}, rng), params, c, 0, &trace);
        ASSERT_EQ(trace.attention.size(), 2u);
        for (const auto& layer : trace.attention) {
            ASSERT_EQ(layer.size(), 2u);
            for (const auto& w : layer) {
                EXPECT_EQ(w.cols(), 10);
                EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
                EXPECT_GE(w.minCoeff(), 0.0);
            }
        }
    }
}

TEST(AlignForward, InjectionCommutesWithBaseQueries)
{
    std::mt19937_64 rng(9);
    const auto c = small_config();
    for (int rep = 0; rep < 20; ++rep) {
        auto params = AlignParams<double>::init(c, rep);
        const auto slice = test::random_tensor({2, 5, 8}, rng);
        const auto a1 = test::random_tensor({6, 8}, rng), a2 = test::random_tensor({6, 8}, rng);
        Tensor<double> sum = a1;
        sum.flat() += a2.flat();
        const auto lhs = align_forward(slice, sum, params, c);
        params.base_queries += a1.matrix();
        const auto rhs = align_forward(slice, a2, params, c);
        EXPECT_LT((lhs.tokens - rhs.tokens).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(AlignForward, Deterministic)
{
    std::mt19937_64 rng(10);
    const auto c = small_config();
    const auto params = AlignParams<double>::init(c, 1);
    const auto slice = test::random_tensor({2, 5, 8}, rng);
    const auto anchors = test::random_tensor({6, 8}, rng);
    EXPECT_EQ(align_forward(slice, anchors, params, c).tokens, align_forward(slice, anchors, params, c).tokens);
}

TEST(AlignForward, RejectsBadInput)
{
    std::mt19937_64 rng(11);
    const auto c = small_config();
    const auto params = AlignParams<double>::init(c, 1);
    auto slice = test::random_tensor({2, 5, 8}, rng);
    EXPECT_THROW(align_forward(slice, test::random_tensor({5, 8}, rng), params, c), DimensionError);
    EXPECT_THROW(align_forward(test::random_tensor({2, 5, 6}, rng), test::random_tensor({6, 8}, rng), params, c),
                 DimensionError);
    slice(0, 0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(align_forward(slice, test::random_tensor({6, 8}, rng), params, c), NumericError);
}

TEST(AlignForward, OverflowReportsLayer)
{
    std::mt19937_64 rng(12);
    const auto c = small_config();
    auto params = AlignParams<double>::init(c, 1);
    params.w2.setConstant(1e308);
    params.b1.setConstant(10.0);
    try {
        align_forward(test::random_tensor({2, 5, 8}, rng), test::random_tensor({6, 8}, rng), params, c);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("mlp layer 2"), std::string::npos) << e.what();
    }
}

TEST(AlignForward, FloatPathTracksDouble)
{
    std::mt19937_64 rng(13);
    AlignConfig c;
    c.d_model = 16;
    c.heads = 4;
    c.patch_grid = 4;
    const auto params = AlignParams<double>::init(c, 2);
    const auto slice = test::random_tensor({8, 17, 16}, rng);
    const auto anchors = test::random_tensor({160, 16}, rng);
    const auto d = align_forward(slice, anchors, params, c);
    const auto f = align_forward(slice.cast<float>(), anchors.cast<float>(), params.cast<float>(), c);
    EXPECT_LT((d.tokens - f.tokens.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(GradCheck, MicroBlockBelowTolerance)
{
    const auto results = run_gradchecks(true, 1);
    EXPECT_EQ(results.size(), 18u);
    for (const auto& r : results) EXPECT_LT(r.error, 1e-4) << r.name;
}

TEST(ToyFit, HalvesReconstructionLoss)
{
    const auto r = toy_fit(200, 0.5, 0);
    EXPECT_EQ(r.history.size(), 201u);
    EXPECT_LE(r.final_loss, 0.5 * r.initial_loss);
    EXPECT_THROW(toy_fit(10, 0.0, 0), InputError);
}
