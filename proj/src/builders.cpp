#include "spdconv/builders.hpp"

#include <cmath>
#include <map>
#include <set>

namespace spdconv {

int round_to_multiple_of_8(double x) {
  int r = 8 * static_cast<int>(std::floor(x / 8.0 + 0.5));
  return std::max(8, r);
}

int scale_depth(int n_d, double factor) {
  return std::max(1, static_cast<int>(std::ceil(n_d * factor - 1e-9)));
}

namespace {

/// Incremental graph assembly: appends nodes, tracks the running tail.
struct GraphBuilder {
  Graph g;
  std::string tail;

  std::string node(std::string id, OpKind op,
                   std::map<std::string, AttrValue> attrs,
                   std::vector<std::string> inputs) {
    Node n;
    n.id = std::move(id);
    n.op = op;
    n.attrs = {attrs.begin(), attrs.end()};
    n.inputs = std::move(inputs);
    g.nodes.push_back(std::move(n));
    tail = g.nodes.back().id;
    return tail;
  }

  std::string input(int c, int h, int w) {
    g.input_shape = Shape3{c, h, w};
    return node("in", OpKind::input,
                {{"c", std::int64_t(c)}, {"h", std::int64_t(h)},
                 {"w", std::int64_t(w)}},
                {});
  }

  /// conv + batchnorm + activation, returning the activation's id.
  std::string conv_bn_act(const std::string& name, const std::string& from,
                          int out, int k, int stride, int pad,
                          const std::string& act,
                          std::map<std::string, AttrValue> extra = {}) {
    std::map<std::string, AttrValue> attrs = {{"out", std::int64_t(out)},
                                              {"k", std::int64_t(k)},
                                              {"stride", std::int64_t(stride)},
                                              {"pad", std::int64_t(pad)},
                                              {"bias", std::int64_t(0)}};
    attrs.insert(extra.begin(), extra.end());
    node(name, OpKind::conv, attrs, {from});
    node(name + "_bn", OpKind::batchnorm, extra, {name});
    std::map<std::string, AttrValue> act_attrs = {{"kind", act}};
    act_attrs.insert(extra.begin(), extra.end());
    return node(name + "_act", OpKind::activation, act_attrs, {name + "_bn"});
  }

  std::string spd(const std::string& name, const std::string& from,
                  int scale) {
    return node(name, OpKind::spd, {{"scale", std::int64_t(scale)}}, {from});
  }

  void head(const std::string& from, int num_classes) {
    node("gap", OpKind::global_avg_pool, {}, {from});
    node("fc", OpKind::linear,
         {{"out", std::int64_t(num_classes)}, {"bias", std::int64_t(1)}},
         {"gap"});
    node("prob", OpKind::softmax, {}, {"fc"});
    node("out", OpKind::output, {}, {"prob"});
  }
};

/// Basic residual block (two 3x3 convs), identity shortcut.
std::string basic_block(GraphBuilder& b, const std::string& name,
                        const std::string& from, int channels) {
  std::string mid = b.conv_bn_act(name + "_conv1", from, channels, 3, 1, 1,
                                  "relu");
  b.node(name + "_conv2", OpKind::conv,
         {{"out", std::int64_t(channels)}, {"k", std::int64_t(3)},
          {"stride", std::int64_t(1)}, {"pad", std::int64_t(1)},
          {"bias", std::int64_t(0)}},
         {mid});
  b.node(name + "_bn2", OpKind::batchnorm, {}, {name + "_conv2"});
  b.node(name + "_add", OpKind::add, {}, {from, name + "_bn2"});
  return b.node(name + "_out", OpKind::activation, {{"kind", "relu"}},
                {name + "_add"});
}

/// Stage-entry block: two 3x3 convs, the first carrying the stage stride
/// (or preceded by spd at stride 1). No shortcut: a residual add across the
/// downsample would need a strided shortcut conv, and the whole point here
/// is that the four strided convs stay the only ones.
std::string entry_block(GraphBuilder& b, const std::string& name,
                        const std::string& from, int channels, bool use_spd) {
  std::string x = from;
  int stride = 2;
  if (use_spd) {
    x = b.spd(name + "_spd", x, 2);
    stride = 1;
  }
  x = b.conv_bn_act(name + "_conv1", x, channels, 3, stride, 1, "relu");
  return b.conv_bn_act(name + "_conv2", x, channels, 3, 1, 1, "relu");
}

/// Bottleneck residual block (1x1 -> 3x3 -> 1x1 x4), identity shortcut.
std::string bottleneck_block(GraphBuilder& b, const std::string& name,
                             const std::string& from, int mid) {
  std::string x = b.conv_bn_act(name + "_conv1", from, mid, 1, 1, 0, "relu");
  x = b.conv_bn_act(name + "_conv2", x, mid, 3, 1, 1, "relu");
  b.node(name + "_conv3", OpKind::conv,
         {{"out", std::int64_t(4 * mid)}, {"k", std::int64_t(1)},
          {"stride", std::int64_t(1)}, {"pad", std::int64_t(0)},
          {"bias", std::int64_t(0)}},
         {x});
  b.node(name + "_bn3", OpKind::batchnorm, {}, {name + "_conv3"});
  b.node(name + "_add", OpKind::add, {}, {from, name + "_bn3"});
  return b.node(name + "_out", OpKind::activation, {{"kind", "relu"}},
                {name + "_add"});
}

/// Bottleneck stage entry. The stage stride sits on the leading 1x1
/// (ResNet-v1 style) so the SPD lands at the stage boundary. Stage 2's
/// entry has stride 1 and keeps a residual add through a 1x1 projection
/// (channel change only); deeper entries are plain.
std::string bottleneck_entry(GraphBuilder& b, const std::string& name,
                             const std::string& from, int mid, bool strided,
                             bool use_spd) {
  std::string x = from;
  int stride = 1;
  if (strided) {
    if (use_spd) {
      x = b.spd(name + "_spd", x, 2);
    } else {
      stride = 2;
    }
  }
  std::string y = b.conv_bn_act(name + "_conv1", x, mid, 1, stride, 0, "relu");
  y = b.conv_bn_act(name + "_conv2", y, mid, 3, 1, 1, "relu");
  b.node(name + "_conv3", OpKind::conv,
         {{"out", std::int64_t(4 * mid)}, {"k", std::int64_t(1)},
          {"stride", std::int64_t(1)}, {"pad", std::int64_t(0)},
          {"bias", std::int64_t(0)}},
         {y});
  b.node(name + "_bn3", OpKind::batchnorm, {}, {name + "_conv3"});
  if (!strided) {
    // projection shortcut, stride 1
    b.node(name + "_proj", OpKind::conv,
           {{"out", std::int64_t(4 * mid)}, {"k", std::int64_t(1)},
            {"stride", std::int64_t(1)}, {"pad", std::int64_t(0)},
            {"bias", std::int64_t(0)}},
           {from});
    b.node(name + "_proj_bn", OpKind::batchnorm, {}, {name + "_proj"});
    b.node(name + "_add", OpKind::add, {}, {name + "_proj_bn", name + "_bn3"});
    return b.node(name + "_out", OpKind::activation, {{"kind", "relu"}},
                  {name + "_add"});
  }
  return b.node(name + "_out", OpKind::activation, {{"kind", "relu"}},
                {name + "_bn3"});
}

Graph build_resnet18_impl(int num_classes, double width, int input_hw,
                          bool use_spd) {
  if (num_classes < 2) throw GraphError("num_classes must be >= 2");
  if (width <= 0) throw GraphError("width multiplier must be > 0");
  const int c1 = round_to_multiple_of_8(64 * width);
  const int c2 = round_to_multiple_of_8(128 * width);
  const int c3 = round_to_multiple_of_8(256 * width);
  const int c4 = round_to_multiple_of_8(512 * width);

  GraphBuilder b;
  std::string x = b.input(3, input_hw, input_hw);
  if (use_spd) {
    x = b.spd("spd1", x, 2);
    x = b.conv_bn_act("conv1", x, c1, 3, 1, 1, "relu");
  } else {
    x = b.conv_bn_act("conv1", x, c1, 3, 2, 1, "relu");
    x = b.node("pool1", OpKind::maxpool,
               {{"k", std::int64_t(2)}, {"stride", std::int64_t(2)}}, {x});
  }
  x = basic_block(b, "s2b1", x, c1);
  x = basic_block(b, "s2b2", x, c1);
  x = entry_block(b, "s3b1", x, c2, use_spd);
  x = basic_block(b, "s3b2", x, c2);
  x = entry_block(b, "s4b1", x, c3, use_spd);
  x = basic_block(b, "s4b2", x, c3);
  x = entry_block(b, "s5b1", x, c4, use_spd);
  x = basic_block(b, "s5b2", x, c4);
  b.head(x, num_classes);
  validate_graph(b.g);
  return b.g;
}

Graph build_resnet50_impl(int num_classes, double width, int input_hw,
                          bool use_spd) {
  if (num_classes < 2) throw GraphError("num_classes must be >= 2");
  if (width <= 0) throw GraphError("width multiplier must be > 0");
  const int mids[4] = {round_to_multiple_of_8(64 * width),
                       round_to_multiple_of_8(128 * width),
                       round_to_multiple_of_8(256 * width),
                       round_to_multiple_of_8(512 * width)};
  const int repeats[4] = {3, 4, 6, 3};

  GraphBuilder b;
  std::string x = b.input(3, input_hw, input_hw);
  if (use_spd) {
    x = b.spd("spd1", x, 2);
    x = b.conv_bn_act("conv1", x, mids[0], 3, 1, 1, "relu");
  } else {
    x = b.conv_bn_act("conv1", x, mids[0], 3, 2, 1, "relu");
    x = b.node("pool1", OpKind::maxpool,
               {{"k", std::int64_t(2)}, {"stride", std::int64_t(2)}}, {x});
  }
  for (int stage = 0; stage < 4; ++stage) {
    std::string sname = "s" + std::to_string(stage + 2);
    x = bottleneck_entry(b, sname + "b1", x, mids[stage], stage > 0, use_spd);
    for (int r = 1; r < repeats[stage]; ++r)
      x = bottleneck_block(b, sname + "b" + std::to_string(r + 1), x,
                           mids[stage]);
  }
  b.head(x, num_classes);
  validate_graph(b.g);
  return b.g;
}

/// One simplified C3 box: `units` repeated [conv3x3 -> bn -> silu -> add]
/// residual units tagged with group/unit for depth scaling.
std::string c3_box(GraphBuilder& b, const std::string& group,
                   const std::string& from, int channels, int units) {
  std::string x = from;
  for (int u = 0; u < units; ++u) {
    std::map<std::string, AttrValue> tag = {{"group", group},
                                            {"unit", std::int64_t(u)}};
    std::string base = group + "_u" + std::to_string(u);
    std::string y = b.conv_bn_act(base + "_conv", x, channels, 3, 1, 1, "silu",
                                  tag);
    std::map<std::string, AttrValue> add_tag = tag;
    b.node(base + "_add", OpKind::add, add_tag, {x, y});
    x = base + "_add";
  }
  return x;
}

Graph build_yolov5_base() {
  GraphBuilder b;
  std::string x = b.input(3, 640, 640);
  x = b.conv_bn_act("stem", x, 64, 3, 2, 1, "silu");      // /2
  x = b.conv_bn_act("down2", x, 128, 3, 2, 1, "silu");    // /4
  x = c3_box(b, "c3_p2", x, 128, 3);
  x = b.conv_bn_act("down3", x, 256, 3, 2, 1, "silu");    // /8
  std::string p3 = c3_box(b, "c3_p3", x, 256, 6);
  x = b.conv_bn_act("down4", p3, 512, 3, 2, 1, "silu");   // /16
  std::string p4 = c3_box(b, "c3_p4", x, 512, 9);
  x = b.conv_bn_act("down5", p4, 1024, 3, 2, 1, "silu");  // /32
  x = c3_box(b, "c3_p5", x, 1024, 3);
  // SPP box stand-in: 1x1 squeeze + 3x3 restore
  x = b.conv_bn_act("spp_squeeze", x, 512, 1, 1, 0, "silu");
  std::string p5 = b.conv_bn_act("spp_out", x, 1024, 3, 1, 1, "silu");

  // neck: lateral 1x1s off the pyramid, then the bottom-up path whose two
  // strided convs each feed a concat (the positions the rewrite flags)
  std::string lat5 = b.conv_bn_act("lat5", p5, 512, 1, 1, 0, "silu");
  std::string n1 = c3_box(b, "c3_n1", p4, 512, 3);
  std::string lat4 = b.conv_bn_act("lat4", n1, 256, 1, 1, 0, "silu");
  std::string p3_out = c3_box(b, "c3_n2", p3, 256, 3);
  std::string d1 = b.conv_bn_act("neck_down1", p3_out, 256, 3, 2, 1, "silu");
  std::string cat1 = b.node("cat1", OpKind::concat, {}, {d1, lat4});
  std::string p4_out = c3_box(b, "c3_n3", cat1, 512, 3);
  std::string d2 = b.conv_bn_act("neck_down2", p4_out, 512, 3, 2, 1, "silu");
  std::string cat2 = b.node("cat2", OpKind::concat, {}, {d2, lat5});
  std::string p5_out = c3_box(b, "c3_n4", cat2, 1024, 3);
  b.node("out", OpKind::output, {}, {p3_out, p4_out, p5_out});
  validate_graph(b.g);
  return b.g;
}

struct RepeatGroup {
  std::vector<std::vector<std::size_t>> units;  // node indices per unit
};

std::map<std::string, RepeatGroup> collect_groups(const Graph& g) {
  std::map<std::string, RepeatGroup> groups;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (!n.has_attr("group")) continue;
    if (!n.has_attr("unit"))
      throw GraphError("node '" + n.id + "': group without unit index");
    auto& grp = groups[n.attr_string("group")];
    std::size_t u = static_cast<std::size_t>(n.attr_int("unit"));
    if (grp.units.size() <= u) grp.units.resize(u + 1);
    grp.units[u].push_back(i);
  }
  for (const auto& [name, grp] : groups)
    for (std::size_t u = 0; u < grp.units.size(); ++u)
      if (grp.units[u].empty())
        throw GraphError("repeat group '" + name + "' is missing unit " +
                         std::to_string(u));
  return groups;
}

}  // namespace

Graph build_resnet18(int num_classes, double width, int input_hw) {
  return build_resnet18_impl(num_classes, width, input_hw, false);
}
Graph build_resnet18_spd(int num_classes, double width, int input_hw) {
  return build_resnet18_impl(num_classes, width, input_hw, true);
}
Graph build_resnet50(int num_classes, double width, int input_hw) {
  return build_resnet50_impl(num_classes, width, input_hw, false);
}
Graph build_resnet50_spd(int num_classes, double width, int input_hw) {
  return build_resnet50_impl(num_classes, width, input_hw, true);
}

Graph build_yolov5_skeleton(ScalingFactors f) {
  return scale_model(build_yolov5_base(), f);
}

Graph scale_model(const Graph& g, ScalingFactors f) {
  if (f.depth_factor <= 0 || f.width_factor <= 0)
    throw GraphError("scaling factors must be > 0");
  validate_graph(g);

  Graph out = g;
  for (auto& n : out.nodes) n.out_shape.reset();

  if (f.depth_factor != 1.0) {
    auto groups = collect_groups(out);
    // process groups independently; dropping/cloning is done on id sets so
    // node order only changes where units are inserted
    for (auto& [name, grp] : groups) {
      const int n_units = static_cast<int>(grp.units.size());
      const int target = scale_depth(n_units, f.depth_factor);
      if (target == n_units) continue;

      auto idx = out.index();
      // a unit's exit is its node consumed from outside the unit
      auto unit_nodes = [&](int u) {
        std::set<std::string> ids;
        for (const auto& n : out.nodes)
          if (n.has_attr("group") && n.attr_string("group") == name &&
              n.attr_int("unit") == u)
            ids.insert(n.id);
        return ids;
      };
      auto unit_exit = [&](int u) -> std::string {
        auto ids = unit_nodes(u);
        auto consumers = out.consumers();
        for (const auto& id : ids)
          for (const auto& c : consumers[id])
            if (!ids.count(c)) return id;
        throw GraphError("repeat group '" + name + "' unit " +
                         std::to_string(u) + " has no exit node");
      };

      if (target < n_units) {
        std::string old_exit = unit_exit(n_units - 1);
        std::string new_exit = unit_exit(target - 1);
        std::set<std::string> dropped;
        for (int u = target; u < n_units; ++u)
          for (const auto& id : unit_nodes(u)) dropped.insert(id);
        Graph next;
        next.input_shape = out.input_shape;
        for (const auto& n : out.nodes) {
          if (dropped.count(n.id)) continue;
          Node copy = n;
          for (auto& in : copy.inputs)
            if (in == old_exit) in = new_exit;
          next.nodes.push_back(std::move(copy));
        }
        out = std::move(next);
      } else {
        // clone the last unit target - n_units times and chain the clones
        const int last = n_units - 1;
        auto tmpl_ids = unit_nodes(last);
        const std::string old_exit = unit_exit(last);
        std::string entry_src;  // the one external id the template consumes
        for (const auto& id : tmpl_ids)
          for (const auto& in : out.nodes[idx.at(id)].inputs)
            if (!tmpl_ids.count(in)) entry_src = in;

        std::vector<Node> clones;
        std::string chain_tail = old_exit;
        for (int u = n_units; u < target; ++u) {
          std::map<std::string, std::string> rename;
          for (const auto& id : tmpl_ids)
            rename[id] = id + "_d" + std::to_string(u);
          for (const auto& n : out.nodes) {
            if (!tmpl_ids.count(n.id)) continue;
            Node c = n;
            c.id = rename.at(c.id);
            c.attrs["unit"] = std::int64_t(u);
            for (auto& in : c.inputs) {
              if (rename.count(in))
                in = rename.at(in);
              else if (in == entry_src)
                in = chain_tail;
            }
            clones.push_back(std::move(c));
          }
          chain_tail = rename.at(old_exit);
        }
        // insert clones right after the template; consumers of the old exit
        // (other than the clones, whose inputs are already wired) move to
        // the end of the chain
        Graph next;
        next.input_shape = out.input_shape;
        for (const auto& n : out.nodes) {
          Node copy = n;
          if (!tmpl_ids.count(copy.id)) {
            for (auto& in : copy.inputs)
              if (in == old_exit) in = chain_tail;
          }
          bool was_exit = copy.id == old_exit;
          next.nodes.push_back(std::move(copy));
          if (was_exit) {
            for (auto& c : clones) next.nodes.push_back(std::move(c));
            clones.clear();
          }
        }
        out = std::move(next);
      }
    }
  }

  if (f.width_factor != 1.0) {
    for (auto& n : out.nodes) {
      if (n.op == OpKind::conv) {
        n.attrs["out"] = std::int64_t(
            round_to_multiple_of_8(double(n.attr_int("out")) * f.width_factor));
      }
    }
  }

  return infer_shapes(out);
}

}  // namespace spdconv
