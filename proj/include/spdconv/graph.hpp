#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace spdconv {

/// Errors in graph text, structure, or shape inference.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind {
  input,
  output,
  conv,
  maxpool,
  batchnorm,
  activation,
  add,
  concat,
  spd,
  global_avg_pool,
  linear,
  softmax,
};

const char* op_name(OpKind op);
OpKind op_from_name(const std::string& name);

using AttrValue = std::variant<std::int64_t, double, std::string>;

/// Per-node output shape, batch dimension excluded.
struct Shape3 {
  int c = 0;
  int h = 0;
  int w = 0;
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    return std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

struct Node {
  std::string id;
  OpKind op;
  std::map<std::string, AttrValue> attrs;
  std::vector<std::string> inputs;
  std::optional<Shape3> out_shape;  // filled by infer_shapes

  bool has_attr(const std::string& key) const { return attrs.count(key) > 0; }
  std::int64_t attr_int(const std::string& key) const;
  std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
  double attr_double(const std::string& key, double fallback) const;
  std::string attr_string(const std::string& key) const;
};

/// Architecture IR: an ordered node list in define-before-use (hence
/// topological) order, with exactly one input and one output node.
/// Graphs are immutable by convention; passes return new graphs.
struct Graph {
  std::vector<Node> nodes;
  Shape3 input_shape;

  const Node* find(const std::string& id) const;
  const Node& at(const std::string& id) const;
  /// Index of every node id into `nodes`.
  std::unordered_map<std::string, std::size_t> index() const;
  /// Ids of the nodes that consume each node's output.
  std::unordered_map<std::string, std::vector<std::string>> consumers() const;
};

/// Parses the one-node-per-line text format:
///   id = op(key=value, ...) <- input_id, input_id
/// '#' starts a comment. Throws GraphError with the line number on syntax
/// errors, unknown ops or attributes, dangling references, and duplicates.
Graph parse_graph(const std::string& text);
Graph parse_graph_file(const std::string& path);

/// Canonical text form; parse_graph(serialize_graph(g)) reproduces g.
std::string serialize_graph(const Graph& g);

/// Structural validation: single input/output, resolvable references,
/// acyclicity, per-op attribute and arity checks.
void validate_graph(const Graph& g);

/// Returns a copy with every node's output shape computed from the input
/// shape, or the override when given. Throws GraphError on any
/// inconsistency (channel mismatch at add/concat, non-divisible SPD input,
/// kernel larger than padded input).
Graph infer_shapes(const Graph& g,
                   std::optional<Shape3> input_override = std::nullopt);

/// Learnable parameter count: conv and linear weights and biases plus 2*c
/// per batch norm (gamma, beta; running stats are buffers). Shapes are
/// inferred on the fly when missing.
std::int64_t count_params(const Graph& g);

}  // namespace spdconv
