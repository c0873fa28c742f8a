#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "csdm/rng.hpp"
#include "csdm/tensor.hpp"

namespace csdm {

// Reverse-mode tape. A Tape is built per batch: ops append nodes holding the
// forward value, a gradient buffer, and a backward closure. Parameters never
// become nodes; ops that touch a Parameter accumulate (+=) straight into its
// grad buffer, so shared embeddings collect gradients across fields and the
// optimizer zeroes them after each step. Ops called with train=false
// propagate through the values but skip the parameter-gradient writes, which
// is how a frozen backbone stays untouched while gradients still flow to its
// inputs.
class Tape {
  public:
    struct Var {
        int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    const Tensor& val(Var x) const { return nodes_[x.id].val; }
    const Tensor& grad_of(Var x) const { return nodes_[x.id].grad; }

    Var constant(Tensor t);

    // Row gather from an embedding table [vocab, d] -> [n, d].
    Var gather_rows(Parameter& table, std::span<const int32_t> idx,
                    bool train = true);
    // Mean-pooled gather for multi-hot fields; each entry is a non-empty
    // index list.
    Var gather_mean(Parameter& table, const std::vector<std::vector<int32_t>>& idx,
                    bool train = true);

    // y = x W + b, x:[n,in], W:[in,out], b:[out]
    Var affine(Var x, Parameter& w, Parameter& b, bool train = true);
    // y = x W (no bias)
    Var linear(Var x, Parameter& w, bool train = true);
    Var add_rowvec(Var x, Parameter& b, bool train = true);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise, same shape
    Var scale(Var x, double a);
    Var relu(Var x);
    Var sigmoid(Var x);
    Var square(Var x);
    Var concat_cols(const std::vector<Var>& xs);
    Var row_sum(Var x);                      // [n,m] -> [n,1]
    Var sum_cols(const std::vector<Var>& xs);  // elementwise sum of same-shape vars
    // Scale row i of x by coef[i].
    Var row_scale(Var x, const std::vector<double>& coef);
    // Broadcast multiply: x:[n,m] * s:[n,1]
    Var mul_bcast(Var x, Var s);
    Var dropout(Var x, double p, bool training, Rng& rng);

    // mean over rows of BCE(sigmoid(logit), y); logits [n,1] or [n],
    // gradient w.r.t. logit is (sigmoid(logit) - y)/n.
    Var bce_with_logits(Var logits, std::span<const double> y);
    // mean over rows of the squared distance to target: [n,m] -> scalar.
    Var mse_rows(Var pred, const Tensor& target);

    // Seed root gradient with 1 and run the backward sweep.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    Node& node(Var x) { return nodes_[x.id]; }
    Var push(Tensor val, bool needs_grad);

    std::vector<Node> nodes_;
};

using Var = Tape::Var;

// ---- standalone numcore ops (no tape) ----

// Elementwise logistic, stable across the double range.
double sigmoid_scalar(double x);
Tensor sigmoid(const Tensor& x);

// BCE on a probability; p clamped to [1e-7, 1-1e-7] before the logs.
double bce_loss(double p_hat, int y);

// Inverted dropout on a plain tensor.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// Sinusoidal position encoding of step indices, one row per entry.
Tensor time_encoding(std::span<const int32_t> t, std::size_t dim);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update (bias-corrected) on every parameter; grads are zeroed
// afterward. Non-finite gradients raise TrainingError naming the parameter.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);

}  // namespace csdm
