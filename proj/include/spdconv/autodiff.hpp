#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spdconv/tensor.hpp"

namespace spdconv {

/// Reverse-mode tape. Forward ops append one record each, in execution
/// order, which is by construction a topological order of the dataflow:
/// an op can only run after everything that produced its inputs.
///
/// A record's closure reads the gradient of the op's output and accumulates
/// (+=) into the gradients of its inputs, so tensors consumed by several ops
/// receive the sum of their downstream contributions.
template <typename Scalar>
class Tape {
 public:
  void record(std::string op, std::function<void()> backward_step) {
    records_.push_back({std::move(op), std::move(backward_step)});
  }

  std::size_t size() const { return records_.size(); }
  const std::string& op_name(std::size_t i) const { return records_[i].op; }
  void clear() { records_.clear(); }

  void run_backward() {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      it->backward_step();
    }
  }

 private:
  struct Record {
    std::string op;
    std::function<void()> backward_step;
  };
  std::vector<Record> records_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients land
/// in the .grad() buffers of every requires_grad tensor that took part in
/// the recorded forward pass.
template <typename Scalar>
void backward(Tape<Scalar>& tape, Tensor<Scalar>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward expects a scalar loss, got shape " +
                                loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not require grad");
  }
  loss.grad()[0] = Scalar(1);
  tape.run_backward();
}

/// A differentiable computation under test: consumes the inputs (recording
/// on the tape when one is given) and returns a scalar loss tensor.
template <typename Scalar>
using GradCheckFn =
    std::function<Tensor<Scalar>(Tape<Scalar>&, std::vector<Tensor<Scalar>>&)>;

/// Central-difference gradient check.
///
/// Runs one taped forward/backward pass for the analytic gradients, then
/// perturbs every element of every requires_grad input by +-epsilon and
/// re-evaluates. Returns the max over elements of
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename Scalar>
Scalar grad_check(const GradCheckFn<Scalar>& f,
                  std::vector<Tensor<Scalar>>& inputs, Scalar epsilon) {
  for (auto& input : inputs) input.zero_grad();
  Tape<Scalar> tape;
  Tensor<Scalar> loss = f(tape, inputs);
  backward(tape, loss);

  Tape<Scalar> no_tape;  // numeric passes run untaped but need an argument
  Scalar max_rel = Scalar(0);
  for (auto& input : inputs) {
    if (!input.requires_grad()) continue;
    for (std::size_t i = 0; i < input.numel(); ++i) {
      Scalar saved = input.values()[i];
      input.values()[i] = saved + epsilon;
      Scalar f_plus = f(no_tape, inputs).values()[0];
      no_tape.clear();
      input.values()[i] = saved - epsilon;
      Scalar f_minus = f(no_tape, inputs).values()[0];
      no_tape.clear();
      input.values()[i] = saved;

      Scalar numeric = (f_plus - f_minus) / (Scalar(2) * epsilon);
      Scalar analytic = input.grad()[i];
      Scalar denom = std::max({std::abs(analytic), std::abs(numeric),
                               Scalar(1e-8)});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace spdconv
