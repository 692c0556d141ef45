#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "feddes/matrix.hpp"

namespace feddes::ad {

// Reverse-mode differentiation over a dynamically built graph. Each op
// records its parents and a local backward rule; backward() runs a reverse
// topological sweep accumulating gradients. A graph is confined to one
// thread; leaves (parameters) may be reused across graphs.
class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
public:
    Matrix value;
    Matrix grad; // same shape as value
    bool requires_grad = true;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop; // reads this->grad, accumulates into parents

    explicit Node(Matrix v, bool req = true)
        : value(std::move(v)), grad(value.rows(), value.cols()), requires_grad(req) {}

    void zero_grad() { std::fill(grad.raw().begin(), grad.raw().end(), 0.0); }
};

NodePtr leaf(Matrix v);       // trainable parameter
NodePtr constant(Matrix v);   // no gradient flows into it

// ---- elementwise / linear algebra ----
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr add(const NodePtr& a, const NodePtr& b);            // same shape
NodePtr add_rowvec(const NodePtr& a, const NodePtr& bias);  // bias is 1 x cols
NodePtr mul(const NodePtr& a, const NodePtr& b);            // elementwise
NodePtr scale(const NodePtr& a, double s);
NodePtr sigmoid(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr leaky_relu(const NodePtr& a, double slope);
NodePtr elu(const NodePtr& a);

// ---- structure ops (gather/scatter over graph edges) ----
NodePtr gather_rows(const NodePtr& a, std::vector<std::size_t> rows);

// s: E x (heads*head_dim), att: 1 x (heads*head_dim) -> E x heads,
// out[e,h] = sum over head h's slice of s[e,:] * att[:]
NodePtr headwise_dot(const NodePtr& s, const NodePtr& att, std::size_t heads);

// Softmax over rows sharing a segment id, independently per column.
// Rows of each segment need not be contiguous.
NodePtr segment_softmax(const NodePtr& logits, std::vector<std::size_t> segment,
                        std::size_t num_segments);

// out[t,d] = sum over rows e with dst[e]==t of alpha[e, head(d)] * msg[e,d]
NodePtr segment_weighted_sum(const NodePtr& alpha, const NodePtr& msg,
                             std::vector<std::size_t> dst, std::size_t num_targets,
                             std::size_t heads);

// out[i,:] = factors[i] * a[i,:], factors constant
NodePtr row_scale(const NodePtr& a, std::vector<double> factors);

// ---- reductions / losses ----
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

// Numerically stable mean BCE; targets constant, entries must be 0/1.
NodePtr bce_with_logits_mean(const NodePtr& logits, const Matrix& targets);

// Weighted softmax cross-entropy, mean over rows with class weights
// (weight of row i = class_weights[labels[i]]); pass empty weights for uniform.
NodePtr softmax_xent_mean(const NodePtr& logits, const std::vector<std::size_t>& labels,
                          const std::vector<double>& class_weights);

// Root must be a 1x1 scalar. Gradients accumulate; zero them between calls.
void backward(const NodePtr& root);

// Zero gradients of every node reachable from root.
void zero_all_grads(const NodePtr& root);

} // namespace feddes::ad
