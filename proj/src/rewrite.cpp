#include "spdconv/rewrite.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <json.hpp>
#include <map>

namespace spdconv {

namespace {

/// Effective (default-resolved) attributes that define an op's behaviour;
/// repeat-group annotations are excluded on purpose.
std::string effective_attrs(const Node& n) {
  switch (n.op) {
    case OpKind::input:
      return "c=" + std::to_string(n.attr_int("c")) +
             ",h=" + std::to_string(n.attr_int("h")) +
             ",w=" + std::to_string(n.attr_int("w"));
    case OpKind::conv:
      return "out=" + std::to_string(n.attr_int("out")) +
             ",k=" + std::to_string(n.attr_int("k")) +
             ",stride=" + std::to_string(n.attr_int("stride", 1)) +
             ",pad=" + std::to_string(n.attr_int("pad", 0)) +
             ",bias=" + std::to_string(n.attr_int("bias", 1));
    case OpKind::maxpool:
      return "k=" + std::to_string(n.attr_int("k")) +
             ",stride=" + std::to_string(n.attr_int("stride"));
    case OpKind::batchnorm: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "eps=%.9g,momentum=%.9g",
                    n.attr_double("eps", 1e-5), n.attr_double("momentum", 0.1));
      return buf;
    }
    case OpKind::activation:
      return "kind=" + n.attr_string("kind");
    case OpKind::spd:
      return "scale=" + std::to_string(n.attr_int("scale"));
    case OpKind::linear:
      return "out=" + std::to_string(n.attr_int("out")) +
             ",bias=" + std::to_string(n.attr_int("bias", 1));
    default:
      return "";
  }
}

}  // namespace

std::string rewrite_report_json(const RewriteReport& report) {
  nlohmann::json j;
  j["replaced_convs"] = nlohmann::json::array();
  for (const auto& [id, stride] : report.replaced_convs)
    j["replaced_convs"].push_back({{"id", id}, {"old_stride", stride}});
  j["replaced_pools"] = report.replaced_pools;
  j["removed_pools"] = report.removed_pools;
  j["concat_adjacent"] = report.concat_adjacent;
  j["param_count_before"] = report.param_count_before;
  j["param_count_after"] = report.param_count_after;
  return j.dump(2);
}

std::pair<Graph, RewriteReport> rewrite_spd(const Graph& g,
                                            RewriteOptions opts) {
  Graph annotated = infer_shapes(g);
  RewriteReport report;
  report.param_count_before = count_params(annotated);

  auto idx = annotated.index();
  auto consumers = annotated.consumers();

  // strict-mode feasibility scan: collect every offender before failing
  std::vector<std::string> bad;
  for (const auto& n : annotated.nodes) {
    if (n.op == OpKind::conv && n.attr_int("stride", 1) > 1) {
      int stride = static_cast<int>(n.attr_int("stride", 1));
      int k = static_cast<int>(n.attr_int("k"));
      int pad = static_cast<int>(n.attr_int("pad", 0));
      const Shape3& in = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
      if (in.h % stride != 0 || in.w % stride != 0)
        bad.push_back(n.id + " (input " + in.str() +
                      " not divisible by stride " + std::to_string(stride) +
                      ")");
      else if (k % 2 == 0 || pad != k / 2)
        bad.push_back(n.id + " (kernel " + std::to_string(k) + " pad " +
                      std::to_string(pad) +
                      " cannot be shape-preserved; need odd k with pad k/2)");
    }
    if (n.op == OpKind::maxpool && n.attr_int("stride") > 1 &&
        opts.pool_mode == PoolMode::replace) {
      int stride = static_cast<int>(n.attr_int("stride"));
      const Shape3& in = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
      const Shape3& out = *n.out_shape;
      if (in.h % stride != 0 || in.w % stride != 0 ||
          out.h != in.h / stride || out.w != in.w / stride)
        bad.push_back(n.id + " (pool " + in.str() + " -> " + out.str() +
                      " is not an exact /" + std::to_string(stride) +
                      " downsample)");
    }
  }
  if (!bad.empty()) {
    std::string msg = "rewrite_spd cannot rewrite these nodes: ";
    for (std::size_t i = 0; i < bad.size(); ++i)
      msg += (i ? "; " : "") + bad[i];
    throw GraphError(msg);
  }

  Graph out;
  out.input_shape = annotated.input_shape;
  // id -> replacement id, for nodes dropped by pool removal
  std::map<std::string, std::string> remap;
  auto resolve = [&remap](std::string id) {
    while (remap.count(id)) id = remap.at(id);
    return id;
  };

  for (const auto& n : annotated.nodes) {
    Node node = n;
    node.out_shape.reset();
    for (auto& in : node.inputs) in = resolve(in);

    if (node.op == OpKind::conv && node.attr_int("stride", 1) > 1) {
      int stride = static_cast<int>(node.attr_int("stride", 1));
      Node spd;
      spd.id = node.id + "_spd";
      spd.op = OpKind::spd;
      spd.attrs["scale"] = std::int64_t(stride);
      if (node.has_attr("group")) spd.attrs["group"] = node.attrs.at("group");
      if (node.has_attr("unit")) spd.attrs["unit"] = node.attrs.at("unit");
      spd.inputs = node.inputs;
      out.nodes.push_back(spd);

      node.attrs["stride"] = std::int64_t(1);
      node.inputs = {spd.id};
      report.replaced_convs.emplace_back(n.id, stride);
      // flag convs whose block output feeds a concat (looking through the
      // bn/activation tail of the conv block)
      std::vector<std::string> frontier = {n.id};
      bool feeds_concat = false;
      while (!frontier.empty() && !feeds_concat) {
        std::string cur = frontier.back();
        frontier.pop_back();
        for (const auto& cid : consumers[cur]) {
          OpKind k = annotated.nodes[idx.at(cid)].op;
          if (k == OpKind::concat)
            feeds_concat = true;
          else if (k == OpKind::batchnorm || k == OpKind::activation)
            frontier.push_back(cid);
        }
      }
      if (feeds_concat) report.concat_adjacent.push_back(n.id);
      out.nodes.push_back(std::move(node));
      continue;
    }

    if (node.op == OpKind::maxpool && node.attr_int("stride") > 1) {
      if (opts.pool_mode == PoolMode::remove) {
        remap[node.id] = node.inputs[0];
        report.removed_pools.push_back(n.id);
        continue;
      }
      int stride = static_cast<int>(node.attr_int("stride"));
      const Shape3& in = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
      Node spd;
      spd.id = node.id + "_spd";
      spd.op = OpKind::spd;
      spd.attrs["scale"] = std::int64_t(stride);
      spd.inputs = node.inputs;
      Node conv;
      conv.id = node.id + "_conv";
      conv.op = OpKind::conv;
      conv.attrs["out"] = std::int64_t(in.c);
      conv.attrs["k"] = std::int64_t(3);
      conv.attrs["stride"] = std::int64_t(1);
      conv.attrs["pad"] = std::int64_t(1);
      conv.attrs["bias"] = std::int64_t(0);
      conv.inputs = {spd.id};
      remap[node.id] = conv.id;
      report.replaced_pools.push_back(n.id);
      out.nodes.push_back(std::move(spd));
      out.nodes.push_back(std::move(conv));
      continue;
    }

    out.nodes.push_back(std::move(node));
  }

  Graph result = infer_shapes(out);
  report.param_count_after = count_params(result);

  // downsampling-preservation check: on whatever input now reaches it, each
  // spd + stride-1 conv pair produces exactly what the old strided conv
  // would have (pool removal upstream may rescale that input; the law is
  // about the replaced subgraph itself)
  auto new_idx = result.index();
  for (const auto& [id, stride] : report.replaced_convs) {
    const Node& conv = result.nodes[new_idx.at(id)];
    const Node& spd = result.nodes[new_idx.at(conv.inputs[0])];
    const Shape3& fed = *result.nodes[new_idx.at(spd.inputs[0])].out_shape;
    int k = static_cast<int>(conv.attr_int("k"));
    int pad = static_cast<int>(conv.attr_int("pad", 0));
    Shape3 old_law{static_cast<int>(conv.attr_int("out")),
                   (fed.h + 2 * pad - k) / stride + 1,
                   (fed.w + 2 * pad - k) / stride + 1};
    if (!(*conv.out_shape == old_law))
      throw GraphError("rewrite_spd broke shape preservation at '" + id +
                       "': old law gives " + old_law.str() + ", rewrite gives " +
                       conv.out_shape->str());
  }
  return {result, report};
}

bool graphs_isomorphic(const Graph& a, const Graph& b) {
  if (a.nodes.size() != b.nodes.size()) return false;

  auto initial_labels = [](const Graph& g) {
    std::vector<std::size_t> labels;
    labels.reserve(g.nodes.size());
    for (const auto& n : g.nodes)
      labels.push_back(std::hash<std::string>{}(std::string(op_name(n.op)) +
                                                "|" + effective_attrs(n)));
    return labels;
  };

  auto refine = [](const Graph& g, std::vector<std::size_t> labels) {
    auto idx = g.index();
    auto cons = g.consumers();
    for (std::size_t round = 0; round < g.nodes.size(); ++round) {
      std::vector<std::size_t> next(labels.size());
      for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        std::string sig = std::to_string(labels[i]) + "|in:";
        for (const auto& in : g.nodes[i].inputs)
          sig += std::to_string(labels[idx.at(in)]) + ",";
        std::vector<std::size_t> outs;
        for (const auto& c : cons[g.nodes[i].id])
          outs.push_back(labels[idx.at(c)]);
        std::sort(outs.begin(), outs.end());
        sig += "|out:";
        for (auto o : outs) sig += std::to_string(o) + ",";
        next[i] = std::hash<std::string>{}(sig);
      }
      auto count_distinct = [](std::vector<std::size_t> v) {
        std::sort(v.begin(), v.end());
        return std::unique(v.begin(), v.end()) - v.begin();
      };
      bool stable = count_distinct(next) == count_distinct(labels);
      labels = std::move(next);
      if (stable) break;
    }
    return labels;
  };

  auto la = refine(a, initial_labels(a));
  auto lb = refine(b, initial_labels(b));

  // candidate bijection: sort nodes by (label, topological position)
  auto order = [](const std::vector<std::size_t>& labels) {
    std::vector<std::size_t> ord(labels.size());
    for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
    std::stable_sort(ord.begin(), ord.end(),
                     [&](std::size_t x, std::size_t y) {
                       return labels[x] < labels[y];
                     });
    return ord;
  };
  auto oa = order(la);
  auto ob = order(lb);
  std::vector<std::size_t> a_to_b(a.nodes.size());
  for (std::size_t i = 0; i < oa.size(); ++i) {
    if (la[oa[i]] != lb[ob[i]]) return false;
    a_to_b[oa[i]] = ob[i];
  }

  // explicit verification of the candidate mapping
  auto ia = a.index();
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const Node& na = a.nodes[i];
    const Node& nb = b.nodes[a_to_b[i]];
    if (na.op != nb.op) return false;
    if (effective_attrs(na) != effective_attrs(nb)) return false;
    if (na.inputs.size() != nb.inputs.size()) return false;
    for (std::size_t j = 0; j < na.inputs.size(); ++j) {
      std::size_t mapped = a_to_b[ia.at(na.inputs[j])];
      if (b.nodes[mapped].id != nb.inputs[j]) return false;
    }
  }
  return true;
}

}  // namespace spdconv
