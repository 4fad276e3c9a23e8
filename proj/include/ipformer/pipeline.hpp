#pragma once

// Slice orchestration: non-overlapping 8-frame windows, per-slice instance
// prompt generation and alignment, results gathered in slice order.

#include "ipformer/align.hpp"
#include "ipformer/boxes.hpp"
#include "ipformer/config.hpp"
#include "ipformer/grouping.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ipf {

template <typename Scalar>
struct SliceStream {
    std::vector<Tensor<Scalar>> slices; ///< each frames_per_slice x tokens x D
    Index frame_count = 0;

    Index slice_count() const { return static_cast<Index>(slices.size()); }
};

/// Cuts an F x tokens x D video into floor(F / frames_per_slice) disjoint
/// windows; trailing frames are dropped.
template <typename Scalar>
SliceStream<Scalar> slice_frames(const Tensor<Scalar>& frames, Index frames_per_slice = 8)
{
    if (frames.rank() != 3) throw DimensionError("slice_frames expects F x tokens x D, got " + shape_string(frames.shape()));
    const Index f = frames.shape()[0];
    if (f < frames_per_slice) {
        throw InputError("need at least " + std::to_string(frames_per_slice) + " frames, got " + std::to_string(f));
    }
    SliceStream<Scalar> s;
    s.frame_count = f;
    for (Index t = 0; t < f / frames_per_slice; ++t) s.slices.push_back(frames.range(t * frames_per_slice, frames_per_slice));
    return s;
}

/// Stacks per-frame tokens x D tensors into one video tensor.
template <typename Scalar>
Tensor<Scalar> stack_frames(const std::vector<Tensor<Scalar>>& frames)
{
    if (frames.empty()) throw InputError("no frames");
    const Shape& fs = frames.front().shape();
    if (fs.size() != 2) throw DimensionError("frame tensors must be tokens x D, got " + shape_string(fs));
    Tensor<Scalar> out(Shape{static_cast<Index>(frames.size()), fs[0], fs[1]});
    const Index stride = fs[0] * fs[1];
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].shape() != fs) throw DimensionError("frame " + std::to_string(i) + " has shape " + shape_string(frames[i].shape()));
        out.flat().segment(static_cast<Index>(i) * stride, stride) = frames[i].flat();
    }
    return out;
}

/// Distributes boxes carrying video frame indices into per-slice lists with
/// slice-local frame indices. Boxes on dropped trailing frames are ignored.
std::vector<std::vector<ScoredBox>> split_boxes(const std::vector<ScoredBox>& boxes, Index frame_count,
                                                Index frames_per_slice);

template <typename Scalar>
struct PromptBuild {
    std::vector<InstanceFeature<Scalar>> instances; ///< canonical order, padding included
    std::vector<InstanceGroup<Scalar>> groups;
    InstancePromptSet<Scalar> prompts;
};

/// Per frame: NMS, top-M retention, RoI pooling over the patch tokens; then
/// canonical ordering, grouping and prompt padding for the whole slice.
/// `boxes` use slice-local frame indices.
template <typename Scalar>
PromptBuild<Scalar> build_instance_prompts(const Tensor<Scalar>& slice, const std::vector<ScoredBox>& boxes,
                                           const PipelineConfig& cfg)
{
    if (slice.rank() != 3) throw DimensionError("slice must be rank 3, got " + shape_string(slice.shape()));
    const Index frames = slice.shape()[0];
    const Index patches = slice.shape()[1] - 1;
    const Index dim = slice.shape()[2];

    std::vector<std::vector<ScoredBox>> per_frame(static_cast<std::size_t>(frames));
    for (const auto& b : boxes) {
        if (b.frame < 0 || b.frame >= frames) {
            throw InputError("box frame index " + std::to_string(b.frame) + " outside slice of " +
                             std::to_string(frames) + " frames");
        }
        per_frame[static_cast<std::size_t>(b.frame)].push_back(b);
    }

    PromptBuild<Scalar> out;
    for (Index f = 0; f < frames; ++f) {
        const Tensor<Scalar> patch_map = slice.at(f).range(0, patches);
        auto kept = retain_top_m(nms(per_frame[static_cast<std::size_t>(f)], cfg.nms_iou), cfg.max_boxes);
        for (auto& b : kept) {
            b.frame = static_cast<int>(f);
            out.instances.push_back(roi_pool(patch_map, b));
        }
    }
    canonical_order(out.instances);
    out.groups = group_instances(out.instances, cfg.sim_threshold);
    out.prompts = build_prompt_set(out.groups, cfg.align.v_max, dim, cfg.sim_threshold);
    return out;
}

template <typename Scalar>
struct SliceResult {
    AlignedSliceTokens<Scalar> aligned;
    Index valid_prompts = 0;
    Index instances = 0; ///< valid instances after NMS and top-M
};

template <typename Scalar>
SliceResult<Scalar> process_slice(const Tensor<Scalar>& slice, const std::vector<ScoredBox>& boxes,
                                  const AlignParams<Scalar>& params, const PipelineConfig& cfg, Index slice_index)
{
    const auto& a = cfg.align;
    if (slice.rank() != 3 || slice.shape()[0] != a.frames_per_slice || slice.shape()[1] != a.tokens_per_frame() ||
        slice.shape()[2] != a.d_model) {
        throw DimensionError("slice shape " + shape_string(slice.shape()) + " does not match config " +
                             shape_string({a.frames_per_slice, a.tokens_per_frame(), a.d_model}));
    }
    auto built = build_instance_prompts(slice, boxes, cfg);
    const auto anchors = assemble_anchors(frame_tokens(slice, a.x_repeat), built.prompts);
    SliceResult<Scalar> r;
    r.aligned = align_forward(slice, anchors, params, a, slice_index);
    r.valid_prompts = built.prompts.valid_count;
    r.instances = static_cast<Index>(
        std::count_if(built.instances.begin(), built.instances.end(), [](const auto& i) { return i.valid; }));
    return r;
}

/// Worker count from IPF_THREADS, else the hardware concurrency.
inline unsigned pipeline_threads()
{
    if (const char* env = std::getenv("IPF_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

template <typename E>
[[noreturn]] void rethrow_annotated(const E& e, Index slice)
{
    throw E("slice " + std::to_string(slice) + ": " + e.what());
}

} // namespace detail

/// Processes every slice on a worker pool; results come back in slice order
/// and module errors are annotated with the failing slice index.
template <typename Scalar>
std::vector<SliceResult<Scalar>> run_pipeline(const SliceStream<Scalar>& stream,
                                              const std::vector<std::vector<ScoredBox>>& boxes_per_slice,
                                              const AlignParams<Scalar>& params, const PipelineConfig& cfg,
                                              unsigned threads = 0)
{
    cfg.validate();
    params.validate(cfg.align);
    const std::size_t n = stream.slices.size();
    if (!boxes_per_slice.empty() && boxes_per_slice.size() != n) {
        throw InputError("got box lists for " + std::to_string(boxes_per_slice.size()) + " slices, stream has " +
                         std::to_string(n));
    }
    const std::vector<ScoredBox> no_boxes;
    std::vector<SliceResult<Scalar>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                const auto& boxes = boxes_per_slice.empty() ? no_boxes : boxes_per_slice[i];
                results[i] = process_slice(stream.slices[i], boxes, params, cfg, static_cast<Index>(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    if (threads == 0) threads = pipeline_threads();
    const auto pool_size = std::min<std::size_t>(threads, n);
    if (pool_size <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < pool_size; ++t) pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i]) continue;
        const auto slice = static_cast<Index>(i);
        try {
            std::rethrow_exception(errors[i]);
        } catch (const DimensionError& e) {
            detail::rethrow_annotated(e, slice);
        } catch (const NumericError& e) {
            detail::rethrow_annotated(e, slice);
        } catch (const InputError& e) {
            detail::rethrow_annotated(e, slice);
        } catch (const Error& e) {
            detail::rethrow_annotated(e, slice);
        }
    }
    return results;
}

/// All slices' tokens stacked as T x query_count x d_out.
template <typename Scalar>
Tensor<Scalar> concat_tokens(const std::vector<SliceResult<Scalar>>& results)
{
    if (results.empty()) throw InputError("no slices");
    const auto& first = results.front().aligned.tokens;
    Tensor<Scalar> out(Shape{static_cast<Index>(results.size()), first.rows(), first.cols()});
    const Index stride = first.size();
    for (std::size_t i = 0; i < results.size(); ++i) {
        out.flat().segment(static_cast<Index>(i) * stride, stride) =
            Eigen::Map<const Vector<Scalar>>(results[i].aligned.tokens.data(), stride);
    }
    return out;
}

} // namespace ipf
