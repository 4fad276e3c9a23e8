#include "ipformer/config.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace ipf;

namespace {

PipelineConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in);
}

} // namespace

TEST(Config, DefaultsMatchDocumentedValues)
{
    const PipelineConfig c;
    EXPECT_EQ(c.max_boxes, 9);
    EXPECT_EQ(c.nms_iou, 0.5);
    EXPECT_EQ(c.sim_threshold, 0.9);
    EXPECT_EQ(c.align.x_repeat, 5);
    EXPECT_EQ(c.align.v_max, 80);
    EXPECT_EQ(c.align.heads, 8);
    EXPECT_EQ(c.align.norm_eps, 1e-5);
    EXPECT_EQ(c.align.query_init_std, 0.02);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesKeysAndComments)
{
    const auto c = parse("# comment\n d_model = 32 \nheads=4\nnms_iou = 0.3 # inline\n\nseed = 12\n");
    EXPECT_EQ(c.align.d_model, 32);
    EXPECT_EQ(c.align.heads, 4);
    EXPECT_EQ(c.nms_iou, 0.3);
    EXPECT_EQ(c.seed, 12u);
}

TEST(Config, WriteThenParseRoundTrips)
{
    PipelineConfig c;
    c.align.d_model = 48;
    c.align.heads = 6;
    c.align.depth = 3;
    c.align.norm_eps = 3.7e-6;
    c.sim_threshold = 0.87;
    c.max_boxes = 12;
    std::ostringstream out;
    write_config(out, c);
    const auto back = parse(out.str());
    EXPECT_EQ(back.align.d_model, 48);
    EXPECT_EQ(back.align.depth, 3);
    EXPECT_EQ(back.align.norm_eps, 3.7e-6);
    EXPECT_EQ(back.sim_threshold, 0.87);
    EXPECT_EQ(back.max_boxes, 12);
}

TEST(Config, RejectsViolations)
{
    EXPECT_THROW(parse("unknown_key = 1\n"), InputError);
    EXPECT_THROW(parse("d_model 32\n"), InputError);
    EXPECT_THROW(parse("d_model = abc\n"), InputError);
    EXPECT_THROW(parse("d_model = 30\n"), InputError); // not divisible by 8 heads
    EXPECT_THROW(parse("max_boxes = 0\n"), InputError);
    EXPECT_THROW(parse("max_boxes = 65\n"), InputError);
    EXPECT_THROW(parse("nms_iou = 0\n"), InputError);
    EXPECT_THROW(parse("sim_threshold = 1.5\n"), InputError);
    EXPECT_THROW(read_config("/nonexistent/config.txt"), InputError);
}
