#pragma once

// Vision alignment block: per-frame anchor tokens, anchor injection into the
// learnable queries, multi-head cross-attention over the slice tokens and a
// two-layer GELU projection.

#include "ipformer/autodiff.hpp"
#include "ipformer/grouping.hpp"
#include "ipformer/tensor.hpp"
#include "ipformer/tensor_io.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ipf {

struct AlignConfig {
    Index d_model = 64;
    Index d_out = 0; ///< 0 means d_model
    Index x_repeat = 5;
    Index v_max = 80;
    Index heads = 8;
    Index frames_per_slice = 8;
    Index patch_grid = 16; ///< patches per frame = patch_grid^2, plus one class token
    Index depth = 1;       ///< stacked cross-attention blocks
    Index hidden_mult = 4;
    double norm_eps = 1e-5;
    double query_init_std = 0.02;

    Index patches_per_frame() const { return patch_grid * patch_grid; }
    Index tokens_per_frame() const { return patches_per_frame() + 1; }
    Index anchor_rows() const { return frames_per_slice * 2 * x_repeat; }
    Index query_count() const { return anchor_rows() + v_max; }
    Index output_dim() const { return d_out > 0 ? d_out : d_model; }
    Index hidden_dim() const { return hidden_mult * d_model; }
    Index head_dim() const { return d_model / heads; }

    /// Throws InputError on inconsistent fields.
    void validate() const
    {
        auto require = [](bool ok, const char* msg) {
            if (!ok) throw InputError(std::string("config: ") + msg);
        };
        require(d_model >= 1, "d_model must be >= 1");
        require(d_out >= 0, "d_out must be >= 0");
        require(heads >= 1, "heads must be >= 1");
        require(d_model % heads == 0, "d_model must be divisible by heads");
        require(x_repeat >= 1, "x_repeat must be >= 1");
        require(v_max >= 1, "v_max must be >= 1");
        require(frames_per_slice >= 1, "frames_per_slice must be >= 1");
        require(patch_grid >= 1, "patch_grid must be >= 1");
        require(depth >= 1, "depth must be >= 1");
        require(hidden_mult >= 1, "hidden_mult must be >= 1");
        require(norm_eps > 0, "norm_eps must be positive");
        require(query_init_std >= 0, "query_init_std must be >= 0");
    }
};

struct TokenBudget {
    Index slices = 0;
    Index compressed = 0; ///< slices x query_count
    Index full = 0;       ///< slices x frames_per_slice x tokens_per_frame
    double ratio() const { return static_cast<double>(compressed) / static_cast<double>(full); }
};

inline TokenBudget token_budget(const AlignConfig& config, Index n_frames)
{
    if (n_frames < config.frames_per_slice) {
        throw InputError("token_budget: need at least " + std::to_string(config.frames_per_slice) +
                         " frames, got " + std::to_string(n_frames));
    }
    TokenBudget b;
    b.slices = n_frames / config.frames_per_slice;
    b.compressed = b.slices * config.query_count();
    b.full = b.slices * config.frames_per_slice * config.tokens_per_frame();
    return b;
}

template <typename Scalar>
struct AttentionWeights {
    RowMatrix<Scalar> wq, wk, wv, wo;
};

template <typename Scalar>
struct AlignParams {
    using Matrix = RowMatrix<Scalar>;

    Matrix base_queries; ///< query_count x D
    std::vector<AttentionWeights<Scalar>> layers;
    Matrix w1, b1; ///< D x H, 1 x H
    Matrix w2, b2; ///< H x d_out, 1 x d_out

    /// Seeded init: queries ~ N(0, query_init_std), projections ~ N(0, 1/fan_in), zero biases.
    static AlignParams init(const AlignConfig& c, std::uint64_t seed)
    {
        c.validate();
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        auto gaussian = [&](Index r, Index cols, double std) {
            Matrix m(r, cols);
            for (Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(std * normal(rng));
            return m;
        };
        const double attn_std = 1.0 / std::sqrt(double(c.d_model));
        AlignParams p;
        p.base_queries = gaussian(c.query_count(), c.d_model, c.query_init_std);
        for (Index l = 0; l < c.depth; ++l) {
            AttentionWeights<Scalar> a;
            a.wq = gaussian(c.d_model, c.d_model, attn_std);
            a.wk = gaussian(c.d_model, c.d_model, attn_std);
            a.wv = gaussian(c.d_model, c.d_model, attn_std);
            a.wo = gaussian(c.d_model, c.d_model, attn_std);
            p.layers.push_back(std::move(a));
        }
        p.w1 = gaussian(c.d_model, c.hidden_dim(), attn_std);
        p.b1 = Matrix::Zero(1, c.hidden_dim());
        p.w2 = gaussian(c.hidden_dim(), c.output_dim(), 1.0 / std::sqrt(double(c.hidden_dim())));
        p.b2 = Matrix::Zero(1, c.output_dim());
        return p;
    }

    /// Every parameter matrix with a stable name, in checkpoint order.
    std::vector<std::pair<std::string, Matrix*>> named()
    {
        std::vector<std::pair<std::string, Matrix*>> out{{"base_queries", &base_queries}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            out.emplace_back(pre + "wq", &layers[l].wq);
            out.emplace_back(pre + "wk", &layers[l].wk);
            out.emplace_back(pre + "wv", &layers[l].wv);
            out.emplace_back(pre + "wo", &layers[l].wo);
        }
        out.emplace_back("mlp.w1", &w1);
        out.emplace_back("mlp.b1", &b1);
        out.emplace_back("mlp.w2", &w2);
        out.emplace_back("mlp.b2", &b2);
        return out;
    }

    std::vector<std::pair<std::string, const Matrix*>> named() const
    {
        auto mut = const_cast<AlignParams*>(this)->named();
        return {mut.begin(), mut.end()};
    }

    /// Throws DimensionError when a shape disagrees with `c`.
    void validate(const AlignConfig& c) const
    {
        auto expect = [](const Matrix& m, Index r, Index cols, const std::string& name) {
            if (m.rows() != r || m.cols() != cols) {
                throw DimensionError("parameter " + name + " is " + std::to_string(m.rows()) + "x" +
                                     std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                                     std::to_string(cols));
            }
        };
        if (static_cast<Index>(layers.size()) != c.depth) {
            throw DimensionError("parameter depth " + std::to_string(layers.size()) + " != config depth " +
                                 std::to_string(c.depth));
        }
        const Index d = c.d_model;
        expect(base_queries, c.query_count(), d, "base_queries");
        for (const auto& l : layers) {
            expect(l.wq, d, d, "wq");
            expect(l.wk, d, d, "wk");
            expect(l.wv, d, d, "wv");
            expect(l.wo, d, d, "wo");
        }
        expect(w1, d, c.hidden_dim(), "mlp.w1");
        expect(b1, 1, c.hidden_dim(), "mlp.b1");
        expect(w2, c.hidden_dim(), c.output_dim(), "mlp.w2");
        expect(b2, 1, c.output_dim(), "mlp.b2");
        for (const auto& [name, m] : named()) {
            if (!m->allFinite()) throw NumericError("parameter " + name + " has non-finite values");
        }
    }

    template <typename Other>
    AlignParams<Other> cast() const
    {
        AlignParams<Other> p;
        p.base_queries = base_queries.template cast<Other>();
        for (const auto& l : layers) {
            p.layers.push_back({l.wq.template cast<Other>(), l.wk.template cast<Other>(),
                                l.wv.template cast<Other>(), l.wo.template cast<Other>()});
        }
        p.w1 = w1.template cast<Other>();
        p.b1 = b1.template cast<Other>();
        p.w2 = w2.template cast<Other>();
        p.b2 = b2.template cast<Other>();
        return p;
    }
};

template <typename Scalar>
std::vector<io::NamedTensor> to_checkpoint(const AlignParams<Scalar>& p)
{
    std::vector<io::NamedTensor> out;
    for (const auto& [name, m] : p.named()) {
        out.push_back({name, Tensor<float>::from_matrix(m->template cast<float>())});
    }
    return out;
}

template <typename Scalar>
AlignParams<Scalar> from_checkpoint(const std::vector<io::NamedTensor>& tensors, const AlignConfig& c)
{
    AlignParams<Scalar> p;
    p.layers.resize(static_cast<std::size_t>(c.depth));
    auto slots = p.named();
    if (slots.size() != tensors.size()) {
        throw InputError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, config expects " +
                         std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].first != tensors[i].name) {
            throw InputError("checkpoint tensor " + std::to_string(i) + " is '" + tensors[i].name +
                             "', expected '" + slots[i].first + "'");
        }
        if (tensors[i].tensor.rank() != 2) throw InputError("checkpoint tensor '" + tensors[i].name + "' is not 2-D");
        *slots[i].second = tensors[i].tensor.matrix().template cast<Scalar>();
    }
    p.validate(c);
    return p;
}

// ---------------------------------------------------------------------------
// Anchors

/// Slice tensor F x (P+1) x D, class token last. Returns F x 2X x D: per
/// frame X copies of the class token then X copies of the patch mean.
template <typename Scalar>
Tensor<Scalar> frame_tokens(const Tensor<Scalar>& slice, Index x_repeat)
{
    if (slice.rank() != 3 || slice.shape()[1] < 2) {
        throw DimensionError("frame_tokens expects frames x tokens x D, got " + shape_string(slice.shape()));
    }
    if (x_repeat < 1) throw InputError("frame_tokens: x_repeat must be >= 1");
    const Index frames = slice.shape()[0], tokens = slice.shape()[1], dim = slice.shape()[2];
    const Index patches = tokens - 1;
    Tensor<Scalar> out(Shape{frames, 2 * x_repeat, dim});
    for (Index f = 0; f < frames; ++f) {
        Eigen::Map<const RowMatrix<Scalar>> frame(slice.flat().data() + f * tokens * dim, tokens, dim);
        const RowVector<Scalar> cls = frame.row(patches);
        const RowVector<Scalar> global = frame.topRows(patches).colwise().mean();
        Eigen::Map<RowMatrix<Scalar>> block(out.flat().data() + f * 2 * x_repeat * dim, 2 * x_repeat, dim);
        block.topRows(x_repeat).rowwise() = cls;
        block.bottomRows(x_repeat).rowwise() = global;
    }
    return out;
}

/// Flattened frame tokens followed by the prompt rows.
template <typename Scalar>
Tensor<Scalar> assemble_anchors(const Tensor<Scalar>& ft, const InstancePromptSet<Scalar>& prompts)
{
    if (ft.rank() != 3) throw DimensionError("assemble_anchors: frame tokens must be rank 3");
    const Index rows = ft.shape()[0] * ft.shape()[1];
    const Index dim = ft.shape()[2];
    if (prompts.tokens.cols() != dim) {
        throw DimensionError("assemble_anchors: frame tokens " + shape_string(ft.shape()) + " vs prompts " +
                             std::to_string(prompts.tokens.rows()) + "x" + std::to_string(prompts.tokens.cols()));
    }
    Tensor<Scalar> out(Shape{rows + prompts.tokens.rows(), dim});
    auto m = out.matrix();
    m.topRows(rows) = Eigen::Map<const RowMatrix<Scalar>>(ft.flat().data(), rows, dim);
    m.bottomRows(prompts.tokens.rows()) = prompts.tokens;
    return out;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename Scalar>
struct AlignedSliceTokens {
    RowMatrix<Scalar> tokens; ///< query_count x d_out
    Index slice_index = 0;
};

/// Optional capture of intermediate attention state.
template <typename Scalar>
struct AlignTrace {
    /// [layer][head] -> query_count x key_count weights.
    std::vector<std::vector<RowMatrix<Scalar>>> attention;
    /// [layer] -> concatenated per-head attention output before Wo.
    std::vector<RowMatrix<Scalar>> head_outputs;
};

/// Parameters bound as tape leaves.
template <typename Scalar>
struct ParamVars {
    ad::Var<Scalar> base_queries;
    std::vector<std::array<ad::Var<Scalar>, 4>> layers; ///< wq, wk, wv, wo
    ad::Var<Scalar> w1, b1, w2, b2;

    /// In AlignParams::named() order.
    std::vector<ad::Var<Scalar>> all() const
    {
        std::vector<ad::Var<Scalar>> out{base_queries};
        for (const auto& l : layers) out.insert(out.end(), l.begin(), l.end());
        out.insert(out.end(), {w1, b1, w2, b2});
        return out;
    }

    static ParamVars from_list(const std::vector<ad::Var<Scalar>>& v)
    {
        ParamVars p;
        if (v.size() < 5 || (v.size() - 5) % 4 != 0) throw Error("ParamVars: malformed variable list");
        std::size_t i = 0;
        p.base_queries = v[i++];
        for (std::size_t l = 0; l < (v.size() - 5) / 4; ++l, i += 4) p.layers.push_back({v[i], v[i + 1], v[i + 2], v[i + 3]});
        p.w1 = v[i++];
        p.b1 = v[i++];
        p.w2 = v[i++];
        p.b2 = v[i++];
        return p;
    }
};

template <typename Scalar>
ParamVars<Scalar> bind(ad::Tape<Scalar>& tape, const AlignParams<Scalar>& p)
{
    std::vector<ad::Var<Scalar>> vars;
    for (const auto& [name, m] : p.named()) vars.push_back(tape.leaf(*m));
    return ParamVars<Scalar>::from_list(vars);
}

namespace detail {

template <typename Scalar>
void require_finite(const ad::Var<Scalar>& v, const char* layer)
{
    if (!v.value().allFinite()) throw NumericError(std::string("non-finite values after ") + layer);
}

} // namespace detail

/// Recorded forward pass. `keys` holds the flattened slice tokens
/// (frames * tokens) x D; `anchors` is query_count x D.
template <typename Scalar>
ad::Var<Scalar> align_forward(const ad::Var<Scalar>& keys, const ad::Var<Scalar>& anchors,
                              const ParamVars<Scalar>& p, const AlignConfig& c, AlignTrace<Scalar>* trace = nullptr)
{
    if (keys.cols() != c.d_model || anchors.cols() != c.d_model || anchors.rows() != p.base_queries.rows()) {
        throw DimensionError("align_forward: keys " + std::to_string(keys.rows()) + "x" + std::to_string(keys.cols()) +
                             ", anchors " + std::to_string(anchors.rows()) + "x" + std::to_string(anchors.cols()) +
                             ", base_queries " + std::to_string(p.base_queries.rows()) + "x" +
                             std::to_string(p.base_queries.cols()));
    }
    const Index dh = c.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

    auto hidden = p.base_queries + anchors;
    for (const auto& [wq, wk, wv, wo] : p.layers) {
        auto normed = ad::layer_norm_rows(hidden, Scalar(c.norm_eps));
        auto q = ad::matmul(normed, wq);
        auto k = ad::matmul(keys, wk);
        auto v = ad::matmul(keys, wv);
        std::vector<ad::Var<Scalar>> heads;
        std::vector<RowMatrix<Scalar>> weights;
        for (Index h = 0; h < c.heads; ++h) {
            auto qh = ad::columns(q, h * dh, dh);
            auto kh = ad::columns(k, h * dh, dh);
            auto vh = ad::columns(v, h * dh, dh);
            auto attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
            detail::require_finite(attn, "attention softmax");
            if (trace) weights.push_back(attn.value());
            heads.push_back(ad::matmul(attn, vh));
        }
        auto merged = ad::concat_columns<Scalar>(heads);
        if (trace) {
            trace->attention.push_back(std::move(weights));
            trace->head_outputs.push_back(merged.value());
        }
        hidden = hidden + ad::matmul(merged, wo);
        detail::require_finite(hidden, "attention output projection");
    }
    auto mlp_hidden = ad::gelu(ad::add_row(ad::matmul(hidden, p.w1), p.b1));
    detail::require_finite(mlp_hidden, "mlp layer 1");
    auto out = ad::add_row(ad::matmul(mlp_hidden, p.w2), p.b2);
    detail::require_finite(out, "mlp layer 2");
    return out;
}

/// Flattens a frames x tokens x D slice into (frames * tokens) x D.
template <typename Scalar>
RowMatrix<Scalar> flatten_slice(const Tensor<Scalar>& slice)
{
    if (slice.rank() != 3) throw DimensionError("slice must be rank 3, got " + shape_string(slice.shape()));
    return Eigen::Map<const RowMatrix<Scalar>>(slice.flat().data(), slice.shape()[0] * slice.shape()[1],
                                               slice.shape()[2]);
}

template <typename Scalar>
AlignedSliceTokens<Scalar> align_forward(const Tensor<Scalar>& slice, const Tensor<Scalar>& anchors,
                                         const AlignParams<Scalar>& params, const AlignConfig& c,
                                         Index slice_index = 0, AlignTrace<Scalar>* trace = nullptr)
{
    if (slice.rank() != 3 || slice.shape()[2] != c.d_model) {
        throw DimensionError("align_forward: slice " + shape_string(slice.shape()) + " incompatible with d_model " +
                             std::to_string(c.d_model));
    }
    if (!slice.all_finite() || !anchors.all_finite()) throw NumericError("align_forward: non-finite input");
    ad::Tape<Scalar> tape;
    auto keys = tape.leaf(flatten_slice(slice));
    auto anchor_var = tape.leaf(RowMatrix<Scalar>(anchors.matrix()));
    auto out = align_forward(keys, anchor_var, bind(tape, params), c, trace);
    return {out.value(), slice_index};
}

} // namespace ipf
