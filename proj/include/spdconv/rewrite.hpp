#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spdconv/graph.hpp"

namespace spdconv {

/// What to do with stride>1 max pools: swap in spd+conv like strided convs,
/// or delete them outright (the small-image choice for the ResNet surgery).
enum class PoolMode { replace, remove };

struct RewriteOptions {
  PoolMode pool_mode = PoolMode::replace;
};

struct RewriteReport {
  std::vector<std::pair<std::string, int>> replaced_convs;  // (id, old stride)
  std::vector<std::string> replaced_pools;
  std::vector<std::string> removed_pools;
  /// Replaced convs whose output feeds a concat node. The original concat
  /// position is preserved; the paper's YOLOv5 variant instead slots the
  /// concat between the SPD and its conv, so these sites are surfaced here.
  std::vector<std::string> concat_adjacent;
  std::int64_t param_count_before = 0;
  std::int64_t param_count_after = 0;
};

std::string rewrite_report_json(const RewriteReport& report);

/// Replaces every stride>1 convolution with spd(scale=stride) followed by
/// the same convolution at stride 1 (same c_out, kernel, and padding, which
/// must be the shape-preserving k/2 of an odd kernel). Stride>1 max pools
/// are replaced by spd + a 3x3 stride-1 conv keeping the channel count, or
/// removed, per options. The input graph is left untouched; downstream
/// shapes of the result are re-inferred and every replaced conv is checked
/// to produce its original output shape.
std::pair<Graph, RewriteReport> rewrite_spd(const Graph& g,
                                            RewriteOptions opts = {});

/// True iff there is a structure- and attribute-preserving bijection between
/// the two node sets (node names ignored). Decided by iterated neighbourhood
/// refinement followed by explicit verification of the candidate bijection.
bool graphs_isomorphic(const Graph& a, const Graph& b);

}  // namespace spdconv
