#pragma once

#include "spdconv/graph.hpp"

namespace spdconv {

/// Width/depth multipliers for generating model variants. The four shipped
/// YOLO skeleton sizes use (0.33, 0.25), (0.33, 0.50), (0.67, 0.75) and
/// (1.00, 1.00).
struct ScalingFactors {
  double depth_factor = 1.0;
  double width_factor = 1.0;
};

/// Width rule: nearest multiple of 8, ties rounding up, clamped to >= 8.
int round_to_multiple_of_8(double x);

/// Depth rule: ceil(n_d * factor), the literal formula. Note this yields 7
/// for 9 x 0.67 where the upstream YOLOv5 convention would give 6; the
/// formula is followed as stated. Exact-integer products are kept from
/// drifting up through binary rounding by a 1e-9 guard inside the ceiling.
int scale_depth(int n_d, double factor);

/// Applies the width rule to every conv output-channel count and the depth
/// rule to every repeat group (nodes annotated group=/unit=). Factors of
/// exactly 1.0 leave the corresponding dimension untouched. The scaled
/// graph is shape-checked before being returned; factor combinations that
/// unbalance concat/add arithmetic are rejected there.
Graph scale_model(const Graph& g, ScalingFactors f);

/// Baseline ResNets, sized for small images: 3x3 stride-2 conv1 + 2x2
/// stride-2 max pool, then four stages whose entry blocks carry the
/// remaining stride-2 convs (four strided convs and one pool in total).
Graph build_resnet18(int num_classes, double width_multiplier = 1.0,
                     int input_hw = 64);
Graph build_resnet50(int num_classes, double width_multiplier = 1.0,
                     int input_hw = 32);

/// The SPD variants: every strided conv becomes spd(2) + the same conv at
/// stride 1, and the max pool is gone. Structurally identical to what
/// rewrite_spd produces from the matching baseline.
Graph build_resnet18_spd(int num_classes, double width_multiplier = 1.0,
                         int input_hw = 64);
Graph build_resnet50_spd(int num_classes, double width_multiplier = 1.0,
                         int input_hw = 32);

/// YOLOv5-shaped skeleton for structural checks: five stride-2 convs in the
/// backbone, two in the neck each feeding a concat, C3 boxes as repeated
/// conv+residual units tagged for depth scaling, SPP box as a conv pair.
/// The base graph is the large variant; factors produce the others.
Graph build_yolov5_skeleton(ScalingFactors f = {1.0, 1.0});

}  // namespace spdconv
