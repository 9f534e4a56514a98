#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "spdconv/builders.hpp"
#include "spdconv/rewrite.hpp"

using namespace spdconv;

TEST_CASE("rewrite_spd: graph with no strided ops is returned unchanged") {
  const char* text = R"(
in = input(c=3, h=8, w=8)
c1 = conv(out=4, k=3, stride=1, pad=1) <- in
out = output() <- c1
)";
  Graph g = parse_graph(text);
  auto [rewritten, report] = rewrite_spd(g);
  CHECK(report.replaced_convs.empty());
  CHECK(report.removed_pools.empty());
  CHECK(report.replaced_pools.empty());
  CHECK(rewritten.nodes.size() == g.nodes.size());
  CHECK(graphs_isomorphic(rewritten, g));
}

TEST_CASE("rewrite_spd replaces a strided conv with spd + stride-1 conv") {
  const char* text = R"(
in = input(c=3, h=16, w=16)
c1 = conv(out=8, k=3, stride=2, pad=1, bias=0) <- in
bn = batchnorm() <- c1
act = activation(kind=relu) <- bn
out = output() <- act
)";
  auto [rewritten, report] = rewrite_spd(parse_graph(text));
  REQUIRE(report.replaced_convs.size() == 1);
  CHECK(report.replaced_convs[0].first == "c1");
  CHECK(report.replaced_convs[0].second == 2);
  const Node& spd = rewritten.at("c1_spd");
  CHECK(spd.attr_int("scale") == 2);
  const Node& conv = rewritten.at("c1");
  CHECK(conv.attr_int("stride", 1) == 1);
  CHECK(conv.inputs == std::vector<std::string>{"c1_spd"});
  // downsampling function preserved
  CHECK(*rewritten.at("c1").out_shape == Shape3{8, 8, 8});
  // every introduced spd is immediately followed by its stride-1 conv
  auto consumers = rewritten.consumers();
  for (const auto& n : rewritten.nodes) {
    if (n.op != OpKind::spd) continue;
    REQUIRE(consumers[n.id].size() == 1);
    const Node& c = rewritten.at(consumers[n.id][0]);
    CHECK(c.op == OpKind::conv);
    CHECK(c.attr_int("stride", 1) == 1);
  }
}

TEST_CASE("rewrite_spd errors list every offending node") {
  const char* text = R"(
in = input(c=3, h=10, w=10)
c1 = conv(out=8, k=3, stride=2, pad=1) <- in
c2 = conv(out=8, k=4, stride=2, pad=1) <- c1
out = output() <- c2
)";
  // c1: 10 not divisible by 2 is fine (10/2=5)... c2's input is 5x5, odd,
  // and its kernel is even: both problems must be reported
  CHECK_THROWS_WITH_AS(rewrite_spd(parse_graph(text)),
                       doctest::Contains("c2"), GraphError);
}

TEST_CASE("rewrite_spd on resnet18: 4 replacements + 1 removal, isomorphic "
          "to the built SPD variant") {
  Graph base = build_resnet18(200, 1.0, 64);
  auto [rewritten, report] =
      rewrite_spd(base, RewriteOptions{PoolMode::remove});
  CHECK(report.replaced_convs.size() == 4);
  CHECK(report.removed_pools.size() == 1);
  CHECK(report.replaced_pools.empty());
  Graph built = build_resnet18_spd(200, 1.0, 64);
  CHECK(graphs_isomorphic(rewritten, built));
  // the original graph was not modified
  CHECK(base.at("conv1").attr_int("stride", 1) == 2);
}

TEST_CASE("rewrite_spd on resnet50 mirrors the builder too") {
  Graph base = build_resnet50(10, 1.0, 32);
  auto [rewritten, report] =
      rewrite_spd(base, RewriteOptions{PoolMode::remove});
  CHECK(report.replaced_convs.size() == 4);
  CHECK(report.removed_pools.size() == 1);
  CHECK(graphs_isomorphic(rewritten, build_resnet50_spd(10, 1.0, 32)));
}

TEST_CASE("rewrite_spd on the yolov5 skeleton: exactly 7 replacements, neck "
          "concats flagged") {
  Graph skel = build_yolov5_skeleton({1.0, 1.0});
  auto [rewritten, report] = rewrite_spd(skel);
  CHECK(report.replaced_convs.size() == 7);
  CHECK(report.removed_pools.empty());
  // the two neck strided convs feed concats; the report surfaces them
  REQUIRE(report.concat_adjacent.size() == 2);
  CHECK(report.concat_adjacent[0] == "neck_down1");
  CHECK(report.concat_adjacent[1] == "neck_down2");
}

TEST_CASE("rewrite_spd is idempotent") {
  Graph base = build_resnet18(10, 0.5, 32);
  auto [once, r1] = rewrite_spd(base, RewriteOptions{PoolMode::remove});
  auto [twice, r2] = rewrite_spd(once, RewriteOptions{PoolMode::remove});
  CHECK(r2.replaced_convs.empty());
  CHECK(r2.removed_pools.empty());
  CHECK(graphs_isomorphic(once, twice));
  CHECK(serialize_graph(once) == serialize_graph(twice));
}

TEST_CASE("rewrite_spd pool replace mode inserts spd + channel-keeping conv") {
  const char* text = R"(
in = input(c=6, h=16, w=16)
p = maxpool(k=2, stride=2) <- in
out = output() <- p
)";
  auto [rewritten, report] =
      rewrite_spd(parse_graph(text), RewriteOptions{PoolMode::replace});
  REQUIRE(report.replaced_pools.size() == 1);
  const Node& conv = rewritten.at("p_conv");
  CHECK(conv.attr_int("out") == 6);
  CHECK(conv.attr_int("stride", 1) == 1);
  CHECK(*rewritten.at("p_conv").out_shape == Shape3{6, 8, 8});
}

TEST_CASE("rewrite report serializes to json") {
  Graph base = build_resnet18(10, 1.0, 64);
  auto [rewritten, report] =
      rewrite_spd(base, RewriteOptions{PoolMode::remove});
  auto j = nlohmann::json::parse(rewrite_report_json(report));
  CHECK(j["replaced_convs"].size() == 4);
  CHECK(j["removed_pools"].size() == 1);
  CHECK(j["param_count_before"].get<std::int64_t>() == count_params(base));
}

TEST_CASE("graphs_isomorphic is name-blind but attribute-sensitive") {
  const char* a = R"(
in = input(c=3, h=8, w=8)
alpha = conv(out=4, k=3, pad=1) <- in
out = output() <- alpha
)";
  const char* b = R"(
in = input(c=3, h=8, w=8)
beta = conv(out=4, k=3, pad=1) <- in
out = output() <- beta
)";
  const char* c = R"(
in = input(c=3, h=8, w=8)
gamma = conv(out=8, k=3, pad=1) <- in
out = output() <- gamma
)";
  CHECK(graphs_isomorphic(parse_graph(a), parse_graph(b)));
  CHECK_FALSE(graphs_isomorphic(parse_graph(a), parse_graph(c)));
}

TEST_CASE("width rounding rule: nearest multiple of 8, ties up") {
  CHECK(round_to_multiple_of_8(64 * 0.25) == 16);
  CHECK(round_to_multiple_of_8(64 * 0.75) == 48);
  CHECK(round_to_multiple_of_8(64 * 0.50) == 32);
  CHECK(round_to_multiple_of_8(1024 * 0.25) == 256);
  CHECK(round_to_multiple_of_8(12.0) == 16);  // tie 12 -> 16 (up)
  CHECK(round_to_multiple_of_8(11.9) == 8);
  CHECK(round_to_multiple_of_8(2.0) == 8);  // clamped to the minimum width
}

TEST_CASE("depth rule: literal ceiling") {
  CHECK(scale_depth(9, 0.33) == 3);   // ceil(2.97)
  CHECK(scale_depth(9, 0.67) == 7);   // ceil(6.03), the documented choice
  CHECK(scale_depth(9, 1.0) == 9);
  CHECK(scale_depth(3, 0.33) == 1);   // ceil(0.99)
  CHECK(scale_depth(6, 0.5) == 3);    // exact product stays exact
  CHECK(scale_depth(3, 2.0) == 6);
}

TEST_CASE("scale_model: identity factors leave the graph unchanged") {
  Graph base = build_yolov5_skeleton({1.0, 1.0});
  Graph scaled = scale_model(base, {1.0, 1.0});
  CHECK(serialize_graph(scaled) == serialize_graph(infer_shapes(base)));
}

TEST_CASE("scale_model: width factors scale conv channels monotonically") {
  Graph base = build_yolov5_skeleton({1.0, 1.0});
  const double widths[4] = {0.25, 0.50, 0.75, 1.0};
  std::vector<Graph> variants;
  for (double w : widths) variants.push_back(scale_model(base, {1.0, w}));
  CHECK(variants[3].at("stem").attr_int("out") == 64);
  CHECK(variants[0].at("stem").attr_int("out") == 16);
  CHECK(variants[0].at("down5").attr_int("out") == 256);
  for (const auto& n : base.nodes) {
    if (n.op != OpKind::conv) continue;
    for (int i = 0; i + 1 < 4; ++i)
      CHECK(variants[i].at(n.id).attr_int("out") <=
            variants[i + 1].at(n.id).attr_int("out"));
  }
}

TEST_CASE("scale_model: depth scaling shrinks and grows repeat groups") {
  Graph base = build_yolov5_skeleton({1.0, 1.0});
  auto count_units = [](const Graph& g, const std::string& group) {
    std::int64_t max_unit = -1;
    for (const auto& n : g.nodes)
      if (n.has_attr("group") && n.attr_string("group") == group)
        max_unit = std::max(max_unit, n.attr_int("unit"));
    return int(max_unit + 1);
  };
  CHECK(count_units(base, "c3_p4") == 9);

  Graph nano = scale_model(base, {0.33, 0.25});
  CHECK(count_units(nano, "c3_p4") == 3);
  CHECK(count_units(nano, "c3_p3") == 2);
  CHECK(count_units(nano, "c3_p2") == 1);

  Graph medium = scale_model(base, {0.67, 0.75});
  CHECK(count_units(medium, "c3_p4") == 7);  // the paper's ceiling formula

  Graph grown = scale_model(base, {2.0, 1.0});
  CHECK(count_units(grown, "c3_p5") == 6);
  // grown graph still validates end to end (infer_shapes ran inside)
  CHECK(grown.at("out").out_shape.has_value());
}

TEST_CASE("scaled skeletons keep the 7-replacement structure") {
  for (auto [d, w] : {std::pair{0.33, 0.25}, {0.33, 0.50}, {0.67, 0.75}}) {
    Graph g = build_yolov5_skeleton({d, w});
    auto [rewritten, report] = rewrite_spd(g);
    CHECK(report.replaced_convs.size() == 7);
  }
}
