// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <limits>

#include "trainlab/plot.hpp"

namespace trainlab {
namespace {

RunLog toy_log(double scale) {
  RunLog log;
  for (int i = 0; i < 20; ++i) {
    StepRecord r;
    r.step = i;
    r.loss = scale * (5.0 - 0.1 * i);
    r.grad_norm = 1.0 + 0.05 * i;
    log.steps.push_back(r);
  }
  return log;
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(RenderSvg, EmbedsDataHash) {
  const LineChart c = runlog_chart({{"dssn", toy_log(1.0)}, {"pre_ln", toy_log(1.1)}}, "loss");
  const std::string svg = render_svg(c);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg_data_hash(svg), chart_data_hash(c));
  EXPECT_NE(svg.find("dssn"), std::string::npos);
  EXPECT_EQ(render_svg(c), svg);
  const LineChart other = runlog_chart({{"dssn", toy_log(1.0)}, {"pre_ln", toy_log(1.2)}}, "loss");
  EXPECT_NE(chart_data_hash(other), chart_data_hash(c));
}

TEST(RenderSvg, NonFinitePointsBreakTheLine) {
  LineChart c;
  c.title = "a<b";
  c.series.push_back({"s", {0, 1, 2, 3, 4}, {1, 2, std::numeric_limits<double>::quiet_NaN(), 3, 4}});
  const std::string svg = render_svg(c);
  std::size_t lines = 0;
  for (auto at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
}

TEST(RenderSvg, Errors) {
  LineChart c;
  c.series.push_back({"s", {0, 1}, {1}});
  EXPECT_THROW(render_svg(c), ArgumentError);
  c.series[0] = {"s", {0}, {std::numeric_limits<double>::infinity()}};
  EXPECT_THROW(render_svg(c), ArgumentError);
  c.log_y = true;
  c.series[0] = {"s", {0, 1}, {0.0, -1.0}};
  EXPECT_THROW(render_svg(c), ArgumentError);
  EXPECT_THROW(runlog_chart({}, "lr"), ArgumentError);
}

TEST(StatsChart, SeriesPerSite) {
  StatsTable t;
  for (std::size_t l = 0; l < 3; ++l) {
    t.rows.push_back({l, "post_attn", "mean", 0.1 * (l + 1), 8});
    t.rows.push_back({l, "post_attn", "std", 0.0, 8});
    t.rows.push_back({l, "post_mlp", "mean", 0.2 * (l + 1), 8});
  }
  const LineChart c = stats_chart(t, "mean", "gamma");
  ASSERT_EQ(c.series.size(), 2u);
  EXPECT_EQ(c.series[1].name, "post_mlp");
  EXPECT_EQ(c.series[1].ys, (std::vector<double>{0.2, 0.4, 0.6000000000000001}));
  EXPECT_EQ(stats_metrics(t), (std::vector<std::string>{"mean", "std"}));
  EXPECT_THROW(stats_chart(t, "top1_abs", "x"), ArgumentError);
}

TEST(TimelineSvg, OneRectPerBusyEvent) {
  const PipelineSpec spec = PipelineSpec::uniform(4, 2, 4, 1, 2);
  const ScheduleTimeline tl = simulate_schedule(spec);
  const std::string svg = render_timeline_svg(tl, "interleaved");
  std::size_t rects = 0;
  for (auto at = svg.find("<rect x="); at != std::string::npos; at = svg.find("<rect x=", at + 1)) ++rects;
  EXPECT_EQ(rects, 2u * 4 * 2 * 4);
  EXPECT_EQ(svg_data_hash(svg), timeline_data_hash(tl));
}

}  // namespace
}  // namespace trainlab
