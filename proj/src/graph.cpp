#include "spdconv/graph.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace spdconv {

namespace {

struct OpInfo {
  OpKind kind;
  const char* name;
  int min_inputs;
  int max_inputs;  // -1 = unbounded
  // attribute keys in canonical serialization order; '!' prefix = required
  std::vector<const char*> attr_keys;
};

const std::vector<OpInfo>& op_table() {
  static const std::vector<OpInfo> table = {
      {OpKind::input, "input", 0, 0, {"!c", "!h", "!w"}},
      {OpKind::output, "output", 1, -1, {}},
      {OpKind::conv, "conv", 1, 1, {"!out", "!k", "stride", "pad", "bias"}},
      {OpKind::maxpool, "maxpool", 1, 1, {"!k", "!stride"}},
      {OpKind::batchnorm, "batchnorm", 1, 1, {"eps", "momentum"}},
      {OpKind::activation, "activation", 1, 1, {"!kind"}},
      {OpKind::add, "add", 2, 2, {}},
      {OpKind::concat, "concat", 2, -1, {}},
      {OpKind::spd, "spd", 1, 1, {"!scale"}},
      {OpKind::global_avg_pool, "global_avg_pool", 1, 1, {}},
      {OpKind::linear, "linear", 1, 1, {"!out", "bias"}},
      {OpKind::softmax, "softmax", 1, 1, {}},
  };
  return table;
}

const OpInfo& op_info(OpKind kind) {
  for (const auto& info : op_table())
    if (info.kind == kind) return info;
  throw GraphError("internal: unknown op kind");
}

[[noreturn]] void fail_line(int line, const std::string& msg) {
  throw GraphError("line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_ident(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_')
    return false;
  for (char ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' &&
        ch != '.')
      return false;
  return true;
}

AttrValue parse_attr_value(const std::string& raw, int line) {
  if (raw.empty()) fail_line(line, "empty attribute value");
  bool numeric = true, has_dot = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char ch = raw[i];
    if (ch == '-' || ch == '+') {
      if (i != 0 && raw[i - 1] != 'e' && raw[i - 1] != 'E') numeric = false;
    } else if (ch == '.' || ch == 'e' || ch == 'E') {
      has_dot = true;
    } else if (!std::isdigit(static_cast<unsigned char>(ch))) {
      numeric = false;
    }
  }
  if (numeric && !has_dot) return AttrValue(std::int64_t(std::stoll(raw)));
  if (numeric && has_dot) {
    try {
      return AttrValue(std::stod(raw));
    } catch (const std::exception&) {
      // fall through to identifier handling (e.g. "e" alone)
    }
  }
  if (!valid_ident(raw)) fail_line(line, "bad attribute value '" + raw + "'");
  return AttrValue(raw);
}

std::string attr_value_str(const AttrValue& v) {
  if (std::holds_alternative<std::int64_t>(v))
    return std::to_string(std::get<std::int64_t>(v));
  if (std::holds_alternative<double>(v)) {
    std::ostringstream os;
    os << std::setprecision(15) << std::get<double>(v);
    std::string s = os.str();
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos)
      s += ".0";
    return s;
  }
  return std::get<std::string>(v);
}

// group/unit mark repeat-block membership for depth scaling and may sit on
// any node
bool is_global_attr(const std::string& key) {
  return key == "group" || key == "unit";
}

void check_attrs(const Node& node, int line) {
  const auto& info = op_info(node.op);
  for (const auto& [key, value] : node.attrs) {
    if (is_global_attr(key)) continue;
    bool known = false;
    for (const char* k : info.attr_keys) {
      if (key == (*k == '!' ? k + 1 : k)) known = true;
    }
    if (!known)
      fail_line(line, "unknown attribute '" + key + "' for op '" +
                          info.name + "'");
  }
  for (const char* k : info.attr_keys) {
    if (*k == '!' && !node.has_attr(k + 1))
      fail_line(line, std::string("op '") + info.name +
                          "' requires attribute '" + (k + 1) + "'");
  }
}

}  // namespace

const char* op_name(OpKind op) { return op_info(op).name; }

OpKind op_from_name(const std::string& name) {
  for (const auto& info : op_table())
    if (name == info.name) return info.kind;
  throw GraphError("unknown op '" + name + "'");
}

std::int64_t Node::attr_int(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end())
    throw GraphError("node '" + id + "': missing attribute '" + key + "'");
  if (!std::holds_alternative<std::int64_t>(it->second))
    throw GraphError("node '" + id + "': attribute '" + key +
                     "' is not an integer");
  return std::get<std::int64_t>(it->second);
}

std::int64_t Node::attr_int(const std::string& key,
                            std::int64_t fallback) const {
  return attrs.count(key) ? attr_int(key) : fallback;
}

double Node::attr_double(const std::string& key, double fallback) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (std::holds_alternative<double>(it->second))
    return std::get<double>(it->second);
  if (std::holds_alternative<std::int64_t>(it->second))
    return static_cast<double>(std::get<std::int64_t>(it->second));
  throw GraphError("node '" + id + "': attribute '" + key +
                   "' is not numeric");
}

std::string Node::attr_string(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end())
    throw GraphError("node '" + id + "': missing attribute '" + key + "'");
  if (!std::holds_alternative<std::string>(it->second))
    throw GraphError("node '" + id + "': attribute '" + key +
                     "' is not an identifier");
  return std::get<std::string>(it->second);
}

const Node* Graph::find(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

const Node& Graph::at(const std::string& id) const {
  const Node* n = find(id);
  if (!n) throw GraphError("no node named '" + id + "'");
  return *n;
}

std::unordered_map<std::string, std::size_t> Graph::index() const {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < nodes.size(); ++i) idx[nodes[i].id] = i;
  return idx;
}

std::unordered_map<std::string, std::vector<std::string>> Graph::consumers()
    const {
  std::unordered_map<std::string, std::vector<std::string>> out;
  for (const auto& n : nodes)
    for (const auto& in : n.inputs) out[in].push_back(n.id);
  return out;
}

Graph parse_graph(const std::string& text) {
  Graph g;
  std::unordered_map<std::string, std::size_t> seen;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    auto eq = line.find('=');
    if (eq == std::string::npos) fail_line(line_no, "expected 'id = op(...)'");
    Node node;
    node.id = trim(line.substr(0, eq));
    if (!valid_ident(node.id))
      fail_line(line_no, "bad node id '" + node.id + "'");
    if (seen.count(node.id))
      fail_line(line_no, "duplicate node id '" + node.id + "'");

    std::string rest = trim(line.substr(eq + 1));
    auto open = rest.find('(');
    auto close = rest.find(')');
    if (open == std::string::npos || close == std::string::npos ||
        close < open)
      fail_line(line_no, "expected 'op(arg=value, ...)'");
    std::string opname = trim(rest.substr(0, open));
    try {
      node.op = op_from_name(opname);
    } catch (const GraphError&) {
      fail_line(line_no, "unknown op '" + opname + "'");
    }

    std::string arglist = rest.substr(open + 1, close - open - 1);
    std::istringstream args(arglist);
    std::string piece;
    while (std::getline(args, piece, ',')) {
      piece = trim(piece);
      if (piece.empty()) continue;
      auto aeq = piece.find('=');
      if (aeq == std::string::npos)
        fail_line(line_no, "attribute '" + piece + "' is not key=value");
      std::string key = trim(piece.substr(0, aeq));
      std::string val = trim(piece.substr(aeq + 1));
      if (node.attrs.count(key))
        fail_line(line_no, "duplicate attribute '" + key + "'");
      node.attrs[key] = parse_attr_value(val, line_no);
    }

    std::string tail = trim(rest.substr(close + 1));
    if (!tail.empty()) {
      if (tail.rfind("<-", 0) != 0)
        fail_line(line_no, "expected '<- input, ...' after ')'");
      std::istringstream ins(tail.substr(2));
      while (std::getline(ins, piece, ',')) {
        piece = trim(piece);
        if (piece.empty()) fail_line(line_no, "empty input reference");
        if (!seen.count(piece))
          fail_line(line_no, "input '" + piece +
                                 "' is not defined above this line");
        node.inputs.push_back(piece);
      }
    }

    check_attrs(node, line_no);
    const auto& info = op_info(node.op);
    int n_in = static_cast<int>(node.inputs.size());
    if (n_in < info.min_inputs ||
        (info.max_inputs >= 0 && n_in > info.max_inputs))
      fail_line(line_no, std::string("op '") + info.name + "' takes " +
                             std::to_string(info.min_inputs) +
                             (info.max_inputs == info.min_inputs
                                  ? ""
                                  : "+") +
                             " input(s), got " + std::to_string(n_in));

    seen[node.id] = g.nodes.size();
    g.nodes.push_back(std::move(node));
  }
  validate_graph(g);
  const Node* in = nullptr;
  for (const auto& n : g.nodes)
    if (n.op == OpKind::input) in = &n;
  g.input_shape = Shape3{static_cast<int>(in->attr_int("c")),
                         static_cast<int>(in->attr_int("h")),
                         static_cast<int>(in->attr_int("w"))};
  return g;
}

Graph parse_graph_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw GraphError("cannot open graph file '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_graph(buf.str());
}

std::string serialize_graph(const Graph& g) {
  std::ostringstream os;
  for (const auto& n : g.nodes) {
    os << n.id << " = " << op_name(n.op) << "(";
    const auto& info = op_info(n.op);
    bool first = true;
    auto emit = [&](const std::string& key) {
      auto it = n.attrs.find(key);
      if (it == n.attrs.end()) return;
      if (!first) os << ", ";
      os << key << "=" << attr_value_str(it->second);
      first = false;
    };
    for (const char* k : info.attr_keys) emit(*k == '!' ? k + 1 : k);
    emit("group");
    emit("unit");
    os << ")";
    if (!n.inputs.empty()) {
      os << " <- ";
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        if (i) os << ", ";
        os << n.inputs[i];
      }
    }
    os << "\n";
  }
  return os.str();
}

void validate_graph(const Graph& g) {
  int n_input = 0, n_output = 0;
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (idx.count(n.id)) throw GraphError("duplicate node id '" + n.id + "'");
    for (const auto& in : n.inputs) {
      auto it = idx.find(in);
      if (it == idx.end())
        throw GraphError("node '" + n.id + "': input '" + in +
                         "' does not resolve to an earlier node (dangling "
                         "reference or cycle)");
    }
    idx[n.id] = i;
    if (n.op == OpKind::input) ++n_input;
    if (n.op == OpKind::output) ++n_output;
    check_attrs(n, 0);
  }
  if (n_input != 1)
    throw GraphError("graph must have exactly one input node, found " +
                     std::to_string(n_input));
  if (n_output != 1)
    throw GraphError("graph must have exactly one output node, found " +
                     std::to_string(n_output));
}

Graph infer_shapes(const Graph& g, std::optional<Shape3> input_override) {
  validate_graph(g);
  Graph out = g;
  if (input_override) {
    out.input_shape = *input_override;
    for (auto& n : out.nodes) {
      if (n.op == OpKind::input) {
        n.attrs["c"] = std::int64_t(input_override->c);
        n.attrs["h"] = std::int64_t(input_override->h);
        n.attrs["w"] = std::int64_t(input_override->w);
      }
    }
  }
  std::unordered_map<std::string, Shape3> shapes;
  auto in_shape = [&](const Node& n, int i = 0) -> const Shape3& {
    return shapes.at(n.inputs[i]);
  };

  for (auto& n : out.nodes) {
    Shape3 s;
    switch (n.op) {
      case OpKind::input:
        s = Shape3{static_cast<int>(n.attr_int("c")),
                   static_cast<int>(n.attr_int("h")),
                   static_cast<int>(n.attr_int("w"))};
        if (s.c < 1 || s.h < 1 || s.w < 1)
          throw GraphError("node '" + n.id + "': bad input shape " + s.str());
        break;
      case OpKind::conv: {
        const Shape3& x = in_shape(n);
        int k = static_cast<int>(n.attr_int("k"));
        int stride = static_cast<int>(n.attr_int("stride", 1));
        int pad = static_cast<int>(n.attr_int("pad", 0));
        if (k < 1 || stride < 1 || pad < 0)
          throw GraphError("node '" + n.id + "': bad conv geometry");
        if (x.h + 2 * pad < k || x.w + 2 * pad < k)
          throw GraphError("node '" + n.id + "': kernel " + std::to_string(k) +
                           " larger than padded input " + x.str());
        s = Shape3{static_cast<int>(n.attr_int("out")),
                   (x.h + 2 * pad - k) / stride + 1,
                   (x.w + 2 * pad - k) / stride + 1};
        break;
      }
      case OpKind::maxpool: {
        const Shape3& x = in_shape(n);
        int k = static_cast<int>(n.attr_int("k"));
        int stride = static_cast<int>(n.attr_int("stride"));
        if (x.h < k || x.w < k)
          throw GraphError("node '" + n.id + "': pool window " +
                           std::to_string(k) + " larger than input " +
                           x.str());
        s = Shape3{x.c, (x.h - k) / stride + 1, (x.w - k) / stride + 1};
        break;
      }
      case OpKind::batchnorm:
      case OpKind::activation:
        s = in_shape(n);
        break;
      case OpKind::add: {
        const Shape3& a = in_shape(n, 0);
        const Shape3& b = in_shape(n, 1);
        if (!(a == b))
          throw GraphError("node '" + n.id + "': add branches disagree, " +
                           a.str() + " vs " + b.str());
        s = a;
        break;
      }
      case OpKind::concat: {
        const Shape3& a = in_shape(n, 0);
        s = a;
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
          const Shape3& b = in_shape(n, static_cast<int>(i));
          if (b.h != a.h || b.w != a.w)
            throw GraphError("node '" + n.id +
                             "': concat spatial mismatch, " + a.str() +
                             " vs " + b.str());
          s.c += b.c;
        }
        break;
      }
      case OpKind::spd: {
        const Shape3& x = in_shape(n);
        int scale = static_cast<int>(n.attr_int("scale"));
        if (scale < 1)
          throw GraphError("node '" + n.id + "': spd scale must be >= 1");
        if (x.h % scale != 0)
          throw GraphError("node '" + n.id + "': height " +
                           std::to_string(x.h) + " not divisible by scale " +
                           std::to_string(scale));
        if (x.w % scale != 0)
          throw GraphError("node '" + n.id + "': width " +
                           std::to_string(x.w) + " not divisible by scale " +
                           std::to_string(scale));
        s = Shape3{x.c * scale * scale, x.h / scale, x.w / scale};
        break;
      }
      case OpKind::global_avg_pool:
        s = Shape3{in_shape(n).c, 1, 1};
        break;
      case OpKind::linear:
        s = Shape3{static_cast<int>(n.attr_int("out")), 1, 1};
        break;
      case OpKind::softmax: {
        const Shape3& x = in_shape(n);
        if (x.h != 1 || x.w != 1)
          throw GraphError("node '" + n.id + "': softmax expects a 1x1 "
                           "spatial input, got " + x.str());
        s = x;
        break;
      }
      case OpKind::output:
        s = in_shape(n);
        break;
    }
    n.out_shape = s;
    shapes[n.id] = s;
  }
  return out;
}

std::int64_t count_params(const Graph& g) {
  Graph annotated = g;
  bool have_shapes = true;
  for (const auto& n : g.nodes) have_shapes = have_shapes && n.out_shape;
  if (!have_shapes) annotated = infer_shapes(g);

  auto idx = annotated.index();
  std::int64_t total = 0;
  for (const auto& n : annotated.nodes) {
    switch (n.op) {
      case OpKind::conv: {
        const Shape3& x = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
        std::int64_t out = n.attr_int("out");
        std::int64_t k = n.attr_int("k");
        total += out * x.c * k * k;
        if (n.attr_int("bias", 1) != 0) total += out;
        break;
      }
      case OpKind::linear: {
        const Shape3& x = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
        std::int64_t features = std::int64_t(x.c) * x.h * x.w;
        std::int64_t out = n.attr_int("out");
        total += out * features;
        if (n.attr_int("bias", 1) != 0) total += out;
        break;
      }
      case OpKind::batchnorm: {
        const Shape3& x = *annotated.nodes[idx.at(n.inputs[0])].out_shape;
        total += 2 * std::int64_t(x.c);
        break;
      }
      default:
        break;
    }
  }
  return total;
}

}  // namespace spdconv
