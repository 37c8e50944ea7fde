#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "mul/tensor.hpp"

namespace mul::ad {

struct Node {
    Tensor val;
    Tensor grad;  // allocated on first contribution
    bool has_grad = false;
    std::function<void(Node&)> back;  // pulls this node's grad into its parents
};

using Var = Node*;

/// Tape of a single forward pass. Creation order is a topological order of
/// the DAG, so backward is one reverse sweep. With grads disabled the ops
/// compute values only.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    /// Leaf bound to a parameter: backward accumulates into p.grad.
    Var param(Parameter& p);
    /// Leaf holding a constant (no gradient).
    Var constant(Tensor t);

    /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must be
    /// scalar.
    void backward(Var loss);

    // ---- ops ----
    Var matmul(Var a, Var b);     // [m,k] x [k,n] -> [m,n]
    Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
    Var add(Var a, Var b);        // same shape
    Var add_row_bias(Var a, Var bias);  // [T,D] + [D]
    Var scale(Var a, double s);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var softmax_rows(Var x);
    Var slice_cols(Var x, int c0, int c1);
    Var concat_cols(const std::vector<Var>& xs);
    /// x [T,Cin], w [Cout,Cin,K], b [Cout]; valid padding.
    Var conv1d_valid(Var x, Var w, Var b, int stride);
    /// x [T,C], w [C,C/groups,K] with odd K, b [C]; same padding.
    Var conv1d_same_grouped(Var x, Var w, Var b, int groups);
    /// Rows listed in `rows` are replaced by the embedding [D]; the rest
    /// pass through.
    Var mask_rows(Var x, const std::vector<int>& rows, Var emb);
    /// Scaled cosine similarity: out[t,c] = inv_tau * cos(u_t, e_c) with
    /// eps-guarded norms. u [T,P], e [C,P].
    Var cosine_scores(Var u, Var e, double eps, double inv_tau);
    /// Softmax cross-entropy summed over the listed rows, times weight:
    /// weight * sum_{t in rows} (logsumexp(logits_t) - logits[t, target_t]).
    Var ce_rows_sum(Var logits, const std::vector<int>& targets, const std::vector<int>& rows,
                    double weight);

    size_t size() const { return nodes_.size(); }

private:
    Var make(Tensor val);
    static Tensor& grad_of(Node& n);

    std::deque<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace mul::ad
