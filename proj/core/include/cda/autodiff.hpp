#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cda/tensor.hpp"

namespace cda::nn {

// A named trainable tensor with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  std::string name;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : value(std::move(v)), grad(Tensor::zeros(value.shape())),
        name(std::move(n)) {}

  void zero_grad() { grad.fill(0.0); }
};

struct Value {
  std::uint32_t id = 0;
};

// Reverse-mode tape. One Tape is built per forward pass; backward() walks
// the nodes in reverse construction order (construction order is already
// topological) and accumulates leaf gradients into their Parameters.
//
// A Parameter may be fed to the tape more than once per pass (the target
// label classifier runs twice in the memory-enhanced forward); each leaf
// contributes additively to the same Parameter::grad.
class Tape {
 public:
  // Untracked leaf; gradients do not flow into it.
  Value constant(Tensor t);
  // Tracked leaf; backward() adds into p.grad.
  Value param(Parameter& p);
  // Leaf for a parameter of a frozen sub-network: same value, no gradient.
  Value frozen(const Parameter& p) { return constant(p.value); }

  Value add(Value a, Value b);            // elementwise, same shape
  Value sub(Value a, Value b);            // elementwise, same shape
  Value mul(Value a, Value b);            // elementwise, same shape
  Value scale(Value a, double c);
  Value add_bias(Value x, Value b);       // (N,M) + (M,) row broadcast
  Value matmul(Value a, Value b);         // (N,K) x (K,M)
  Value relu(Value a);
  Value sigmoid(Value a);
  Value reshape(Value a, std::vector<std::size_t> shape);
  Value concat_cols(Value a, Value b);    // (N,A),(N,B) -> (N,A+B)
  Value concat_rows(Value a, Value b);    // (A,M),(B,M) -> (A+B,M)

  // Image ops on (N,C,H,W).
  Value conv2d(Value x, Value w, Value b, std::size_t stride,
               std::size_t pad);          // w: (Co,Ci,kh,kw), b: (Co,)
  Value avg_pool2(Value x);               // 2x2, stride 2
  Value global_avg_pool(Value x);         // -> (N,C)
  Value upsample_nearest2(Value x);       // (N,C,H,W) -> (N,C,2H,2W)

  // Row-wise softmax of (N,K) logits.
  Value softmax(Value logits);
  // Mean cross-entropy of (N,K) logits against integer labels; scalar.
  Value ce_mean(Value logits, std::vector<int> labels);
  // Mean cross-entropy of softmax(logits) against the uniform distribution;
  // scalar, lower-bounded by ln K.
  Value ce_uniform_mean(Value logits);
  // Mean absolute difference over all elements; scalar.
  Value l1_mean(Value a, Value b);

  const Tensor& val(Value v) const { return nodes_[v.id].value; }
  // Gradient of the last backward()'s loss w.r.t. node v (empty if v was not
  // on the differentiated path). Exposed for tests.
  const Tensor& grad_of(Value v) const { return nodes_[v.id].grad; }

  // Differentiate a scalar loss; accumulates into Parameter::grad of every
  // tracked leaf. May be called once per tape.
  void backward(Value loss);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    std::vector<std::uint32_t> inputs;
    std::function<void(Tape&, std::size_t)> backprop;  // may be empty (leaf)
    bool needs_grad = false;
    Parameter* sink = nullptr;
  };

  Value push(Tensor value, std::vector<std::uint32_t> inputs,
             std::function<void(Tape&, std::size_t)> backprop);
  bool any_needs_grad(const std::vector<std::uint32_t>& ids) const;
  Tensor& grad_buffer(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace cda::nn
