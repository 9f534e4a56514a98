#pragma once

#include <string>
#include <vector>

#include "spdconv/graph.hpp"
#include "spdconv/ops.hpp"
#include "spdconv/spd.hpp"

namespace spdconv {

/// A named tensor in a network's state: learnable parameters plus batch
/// norm running statistics. logical_dims drops the storage layout's
/// trailing 1s (conv weights are rank 4, linear weights rank 2, everything
/// per-channel rank 1).
template <typename Scalar>
struct NamedState {
  std::string name;
  Tensor<Scalar>* tensor;
  std::vector<int> logical_dims;
  bool learnable;
};

/// A Graph lowered to executable layers with allocated parameters.
/// Forward runs the nodes in graph order; a trailing softmax (one feeding
/// only the output node) is skipped so training and evaluation see logits.
template <typename Scalar>
class CompiledNet {
 public:
  explicit CompiledNet(const Graph& g) : graph_(infer_shapes(g)) {
    auto idx = graph_.index();
    layers_.reserve(graph_.nodes.size());
    for (const auto& n : graph_.nodes) {
      Layer layer;
      layer.id = n.id;
      layer.op = n.op;
      for (const auto& in : n.inputs)
        layer.inputs.push_back(static_cast<int>(idx.at(in)));
      const Shape3 in_shape =
          n.inputs.empty() ? Shape3{} : *graph_.at(n.inputs[0]).out_shape;
      switch (n.op) {
        case OpKind::conv: {
          int out = static_cast<int>(n.attr_int("out"));
          int k = static_cast<int>(n.attr_int("k"));
          layer.conv.weight = Tensor<Scalar>(TensorShape{out, in_shape.c, k, k});
          layer.conv.weight.set_requires_grad(true);
          if (n.attr_int("bias", 1) != 0) {
            layer.conv.bias = Tensor<Scalar>(TensorShape{1, out, 1, 1});
            layer.conv.bias->set_requires_grad(true);
          }
          layer.conv.stride = static_cast<int>(n.attr_int("stride", 1));
          layer.conv.padding = static_cast<int>(n.attr_int("pad", 0));
          break;
        }
        case OpKind::batchnorm:
          layer.bn = BatchNormState<Scalar>::make(
              in_shape.c, Scalar(n.attr_double("eps", 1e-5)),
              Scalar(n.attr_double("momentum", 0.1)));
          layer.bn.gamma.set_requires_grad(true);
          layer.bn.beta.set_requires_grad(true);
          break;
        case OpKind::activation:
          layer.act = n.attr_string("kind") == "silu" ? Activation::silu
                                                      : Activation::relu;
          break;
        case OpKind::maxpool:
          layer.k = static_cast<int>(n.attr_int("k"));
          layer.stride = static_cast<int>(n.attr_int("stride"));
          break;
        case OpKind::spd:
          layer.scale = static_cast<int>(n.attr_int("scale"));
          break;
        case OpKind::linear: {
          int out = static_cast<int>(n.attr_int("out"));
          int features = in_shape.c * in_shape.h * in_shape.w;
          layer.lin_weight = Tensor<Scalar>(TensorShape{out, features, 1, 1});
          layer.lin_weight.set_requires_grad(true);
          layer.has_lin_bias = n.attr_int("bias", 1) != 0;
          if (layer.has_lin_bias) {
            layer.lin_bias = Tensor<Scalar>(TensorShape{1, out, 1, 1});
            layer.lin_bias.set_requires_grad(true);
          }
          break;
        }
        default:
          break;
      }
      layers_.push_back(std::move(layer));
    }
    // a softmax whose only consumer is the output node is inference sugar
    auto consumers = graph_.consumers();
    for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
      const Node& n = graph_.nodes[i];
      if (n.op == OpKind::softmax && consumers[n.id].size() == 1 &&
          graph_.at(consumers[n.id][0]).op == OpKind::output)
        layers_[i].terminal_softmax = true;
    }
  }

  /// Kaiming-uniform fan-in for conv/linear weights, zero biases, identity
  /// batch norm. One PCG stream in graph order: a fixed seed fixes every bit.
  void init_params(std::uint64_t seed) {
    Pcg32 rng(seed);
    for (auto& layer : layers_) {
      switch (layer.op) {
        case OpKind::conv: {
          const auto& ws = layer.conv.weight.shape();
          fill_kaiming_uniform(layer.conv.weight, rng, ws.c * ws.h * ws.w);
          if (layer.conv.bias)
            std::fill(layer.conv.bias->values().begin(),
                      layer.conv.bias->values().end(), Scalar(0));
          break;
        }
        case OpKind::linear: {
          const auto& ws = layer.lin_weight.shape();
          fill_kaiming_uniform(layer.lin_weight, rng, ws.c);
          if (layer.has_lin_bias)
            std::fill(layer.lin_bias.values().begin(),
                      layer.lin_bias.values().end(), Scalar(0));
          break;
        }
        case OpKind::batchnorm: {
          auto& bn = layer.bn;
          std::fill(bn.gamma.values().begin(), bn.gamma.values().end(),
                    Scalar(1));
          std::fill(bn.beta.values().begin(), bn.beta.values().end(),
                    Scalar(0));
          std::fill(bn.running_mean.values().begin(),
                    bn.running_mean.values().end(), Scalar(0));
          std::fill(bn.running_var.values().begin(),
                    bn.running_var.values().end(), Scalar(1));
          break;
        }
        default:
          break;
      }
    }
  }

  /// Runs the graph on a batch, returning logits. Records on the tape when
  /// given (training path); batch norm uses batch statistics and updates
  /// running stats only when training is true.
  Tensor<Scalar> forward(const Tensor<Scalar>& batch, bool training,
                         Tape<Scalar>* tape = nullptr) {
    const auto& bs = batch.shape();
    if (bs.c != graph_.input_shape.c || bs.h != graph_.input_shape.h ||
        bs.w != graph_.input_shape.w) {
      throw std::invalid_argument(
          "batch shape " + bs.str() + " does not match graph input " +
          graph_.input_shape.str());
    }
    std::vector<Tensor<Scalar>> acts(layers_.size());
    int result = -1;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Layer& layer = layers_[i];
      auto in = [&](int j = 0) -> Tensor<Scalar>& {
        return acts[layer.inputs[j]];
      };
      switch (layer.op) {
        case OpKind::input:
          acts[i] = batch;
          break;
        case OpKind::conv:
          acts[i] = conv2d(in(), layer.conv, tape);
          break;
        case OpKind::batchnorm:
          acts[i] = batch_norm(in(), layer.bn, training, tape);
          break;
        case OpKind::activation:
          acts[i] = activation(in(), layer.act, tape);
          break;
        case OpKind::maxpool:
          acts[i] = max_pool2d(in(), layer.k, layer.stride, tape);
          break;
        case OpKind::spd:
          acts[i] = space_to_depth(in(), layer.scale, tape);
          break;
        case OpKind::add:
          acts[i] = add(in(0), in(1), tape);
          break;
        case OpKind::concat: {
          std::vector<Tensor<Scalar>> parts;
          for (std::size_t j = 0; j < layer.inputs.size(); ++j)
            parts.push_back(in(static_cast<int>(j)));
          acts[i] = concat(parts, tape);
          break;
        }
        case OpKind::global_avg_pool:
          acts[i] = global_avg_pool(in(), tape);
          break;
        case OpKind::linear:
          acts[i] = linear(in(), layer.lin_weight,
                           layer.has_lin_bias ? &layer.lin_bias : nullptr,
                           tape);
          break;
        case OpKind::softmax:
          acts[i] = layer.terminal_softmax ? in() : softmax(in(), tape);
          break;
        case OpKind::output:
          acts[i] = in();
          result = static_cast<int>(i);
          break;
      }
    }
    return acts[result];
  }

  /// Learnable parameters in graph order.
  std::vector<Tensor<Scalar>*> parameters() {
    std::vector<Tensor<Scalar>*> out;
    for (auto& layer : layers_) {
      if (layer.op == OpKind::conv) {
        out.push_back(&layer.conv.weight);
        if (layer.conv.bias) out.push_back(&*layer.conv.bias);
      } else if (layer.op == OpKind::batchnorm) {
        out.push_back(&layer.bn.gamma);
        out.push_back(&layer.bn.beta);
      } else if (layer.op == OpKind::linear) {
        out.push_back(&layer.lin_weight);
        if (layer.has_lin_bias) out.push_back(&layer.lin_bias);
      }
    }
    return out;
  }

  /// Everything a checkpoint stores, in deterministic graph order.
  std::vector<NamedState<Scalar>> named_state() {
    std::vector<NamedState<Scalar>> out;
    for (auto& layer : layers_) {
      if (layer.op == OpKind::conv) {
        const auto& ws = layer.conv.weight.shape();
        out.push_back({layer.id + ".weight", &layer.conv.weight,
                       {ws.n, ws.c, ws.h, ws.w}, true});
        if (layer.conv.bias)
          out.push_back({layer.id + ".bias", &*layer.conv.bias,
                         {layer.conv.bias->shape().c}, true});
      } else if (layer.op == OpKind::batchnorm) {
        int c = layer.bn.channels();
        out.push_back({layer.id + ".gamma", &layer.bn.gamma, {c}, true});
        out.push_back({layer.id + ".beta", &layer.bn.beta, {c}, true});
        out.push_back(
            {layer.id + ".running_mean", &layer.bn.running_mean, {c}, false});
        out.push_back(
            {layer.id + ".running_var", &layer.bn.running_var, {c}, false});
      } else if (layer.op == OpKind::linear) {
        const auto& ws = layer.lin_weight.shape();
        out.push_back(
            {layer.id + ".weight", &layer.lin_weight, {ws.n, ws.c}, true});
        if (layer.has_lin_bias)
          out.push_back({layer.id + ".bias", &layer.lin_bias,
                         {layer.lin_bias.shape().c}, true});
      }
    }
    return out;
  }

  const Graph& graph() const { return graph_; }

  /// Class count the head produces (softmax stripped).
  int num_classes() const {
    const Node* out_node = nullptr;
    for (const auto& n : graph_.nodes)
      if (n.op == OpKind::output) out_node = &n;
    const Node* pred = &graph_.at(out_node->inputs[0]);
    if (pred->op == OpKind::softmax) pred = &graph_.at(pred->inputs[0]);
    return pred->out_shape->c;
  }

 private:
  struct Layer {
    std::string id;
    OpKind op;
    std::vector<int> inputs;
    ConvParams<Scalar> conv;
    BatchNormState<Scalar> bn;
    Activation act = Activation::relu;
    int k = 0, stride = 0, scale = 0;
    Tensor<Scalar> lin_weight;
    Tensor<Scalar> lin_bias;
    bool has_lin_bias = false;
    bool terminal_softmax = false;
  };

  Graph graph_;
  std::vector<Layer> layers_;
};

}  // namespace spdconv
