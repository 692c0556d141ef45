#include "feddes/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "feddes/kernels.hpp"

namespace feddes::ad {

NodePtr leaf(Matrix v) { return std::make_shared<Node>(std::move(v), true); }

NodePtr constant(Matrix v) { return std::make_shared<Node>(std::move(v), false); }

namespace {

NodePtr make_op(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> back) {
    bool any_grad = false;
    for (const auto& p : parents) any_grad = any_grad || p->requires_grad;
    auto n = std::make_shared<Node>(std::move(value), any_grad);
    if (any_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(back);
    }
    return n;
}

void axpy(Matrix& dst, const Matrix& src, double s = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.raw()[i] += s * src.raw()[i];
}

} // namespace

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Matrix v = feddes::matmul(a->value, b->value);
    return make_op(std::move(v), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) axpy(a->grad, feddes::matmul(n.grad, transpose(b->value)));
        if (b->requires_grad) axpy(b->grad, feddes::matmul(transpose(a->value), n.grad));
    });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "ad::add");
    Matrix v = a->value;
    axpy(v, b->value);
    return make_op(std::move(v), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) axpy(a->grad, n.grad);
        if (b->requires_grad) axpy(b->grad, n.grad);
    });
}

NodePtr add_rowvec(const NodePtr& a, const NodePtr& bias) {
    if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
        throw DimensionError("ad::add_rowvec: bias must be 1 x cols");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += bias->value(0, j);
    return make_op(std::move(v), {a, bias}, [a, bias](Node& n) {
        if (a->requires_grad) axpy(a->grad, n.grad);
        if (bias->requires_grad)
            for (std::size_t i = 0; i < n.grad.rows(); ++i)
                for (std::size_t j = 0; j < n.grad.cols(); ++j)
                    bias->grad(0, j) += n.grad(i, j);
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "ad::mul");
    Matrix v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v.raw()[i] = a->value.raw()[i] * b->value.raw()[i];
    return make_op(std::move(v), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                a->grad.raw()[i] += n.grad.raw()[i] * b->value.raw()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                b->grad.raw()[i] += n.grad.raw()[i] * a->value.raw()[i];
    });
}

NodePtr scale(const NodePtr& a, double s) {
    Matrix v = a->value;
    for (auto& x : v.raw()) x *= s;
    return make_op(std::move(v), {a}, [a, s](Node& n) {
        if (a->requires_grad) axpy(a->grad, n.grad, s);
    });
}

NodePtr sigmoid(const NodePtr& a) {
    Matrix v = feddes::sigmoid(a->value);
    auto out = make_op(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Matrix y = out->value;
        out->backprop = [a, y](Node& n) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double s = y.raw()[i];
                a->grad.raw()[i] += n.grad.raw()[i] * s * (1.0 - s);
            }
        };
    }
    return out;
}

NodePtr relu(const NodePtr& a) { return leaky_relu(a, 0.0); }

NodePtr leaky_relu(const NodePtr& a, double slope) {
    Matrix v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a->value.raw()[i];
        v.raw()[i] = x > 0.0 ? x : slope * x;
    }
    return make_op(std::move(v), {a}, [a, slope](Node& n) {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad.raw()[i] += n.grad.raw()[i] * (a->value.raw()[i] > 0.0 ? 1.0 : slope);
    });
}

NodePtr elu(const NodePtr& a) {
    Matrix v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a->value.raw()[i];
        v.raw()[i] = x > 0.0 ? x : std::expm1(x);
    }
    auto out = make_op(std::move(v), {a}, nullptr);
    if (out->requires_grad) {
        Matrix y = out->value;
        out->backprop = [a, y](Node& n) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double d = a->value.raw()[i] > 0.0 ? 1.0 : y.raw()[i] + 1.0;
                a->grad.raw()[i] += n.grad.raw()[i] * d;
            }
        };
    }
    return out;
}

NodePtr gather_rows(const NodePtr& a, std::vector<std::size_t> rows) {
    Matrix v(rows.size(), a->value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a->value.rows()) throw ValidationError("ad::gather_rows: index out of range");
        std::copy_n(a->value.row_ptr(rows[i]), a->value.cols(), v.row_ptr(i));
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
    return make_op(std::move(v), {a}, [a, idx](Node& n) {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < idx->size(); ++i) {
            double* dst = a->grad.row_ptr((*idx)[i]);
            const double* src = n.grad.row_ptr(i);
            for (std::size_t j = 0; j < n.grad.cols(); ++j) dst[j] += src[j];
        }
    });
}

NodePtr headwise_dot(const NodePtr& s, const NodePtr& att, std::size_t heads) {
    const std::size_t width = s->value.cols();
    if (att->value.rows() != 1 || att->value.cols() != width)
        throw DimensionError("ad::headwise_dot: attention vector must be 1 x width");
    if (width % heads != 0) throw DimensionError("ad::headwise_dot: width not divisible by heads");
    const std::size_t head_dim = width / heads;
    Matrix v(s->value.rows(), heads);
    for (std::size_t e = 0; e < s->value.rows(); ++e) {
        const double* row = s->value.row_ptr(e);
        for (std::size_t h = 0; h < heads; ++h) {
            double acc = 0.0;
            for (std::size_t d = 0; d < head_dim; ++d)
                acc += row[h * head_dim + d] * att->value(0, h * head_dim + d);
            v(e, h) = acc;
        }
    }
    return make_op(std::move(v), {s, att}, [s, att, heads, head_dim](Node& n) {
        for (std::size_t e = 0; e < n.grad.rows(); ++e) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double g = n.grad(e, h);
                if (g == 0.0) continue;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    const std::size_t c = h * head_dim + d;
                    if (s->requires_grad) s->grad(e, c) += g * att->value(0, c);
                    if (att->requires_grad) att->grad(0, c) += g * s->value(e, c);
                }
            }
        }
    });
}

NodePtr segment_softmax(const NodePtr& logits, std::vector<std::size_t> segment,
                        std::size_t num_segments) {
    if (segment.size() != logits->value.rows())
        throw DimensionError("ad::segment_softmax: segment ids must match row count");
    const std::size_t rows = logits->value.rows(), cols = logits->value.cols();

    // group rows by segment (stable, counting sort)
    auto groups = std::make_shared<std::vector<std::vector<std::size_t>>>(num_segments);
    for (std::size_t e = 0; e < rows; ++e) {
        if (segment[e] >= num_segments) throw ValidationError("ad::segment_softmax: bad segment id");
        (*groups)[segment[e]].push_back(e);
    }

    Matrix v(rows, cols);
    for (const auto& g : *groups) {
        if (g.empty()) continue;
        for (std::size_t c = 0; c < cols; ++c) {
            double mx = logits->value(g[0], c);
            for (std::size_t e : g) mx = std::max(mx, logits->value(e, c));
            double sum = 0.0;
            for (std::size_t e : g) {
                const double x = std::exp(logits->value(e, c) - mx);
                v(e, c) = x;
                sum += x;
            }
            for (std::size_t e : g) v(e, c) /= sum;
        }
    }
    auto out = make_op(std::move(v), {logits}, nullptr);
    if (out->requires_grad) {
        Matrix alpha = out->value;
        out->backprop = [logits, groups, alpha, cols](Node& n) {
            for (const auto& g : *groups) {
                if (g.empty()) continue;
                for (std::size_t c = 0; c < cols; ++c) {
                    double dot = 0.0;
                    for (std::size_t e : g) dot += alpha(e, c) * n.grad(e, c);
                    for (std::size_t e : g)
                        logits->grad(e, c) += alpha(e, c) * (n.grad(e, c) - dot);
                }
            }
        };
    }
    return out;
}

NodePtr segment_weighted_sum(const NodePtr& alpha, const NodePtr& msg,
                             std::vector<std::size_t> dst, std::size_t num_targets,
                             std::size_t heads) {
    const std::size_t rows = msg->value.rows(), width = msg->value.cols();
    if (alpha->value.rows() != rows || alpha->value.cols() != heads)
        throw DimensionError("ad::segment_weighted_sum: alpha must be rows x heads");
    if (dst.size() != rows)
        throw DimensionError("ad::segment_weighted_sum: dst ids must match row count");
    if (width % heads != 0)
        throw DimensionError("ad::segment_weighted_sum: width not divisible by heads");
    const std::size_t head_dim = width / heads;

    auto ids = std::make_shared<std::vector<std::size_t>>(std::move(dst));
    Matrix v(num_targets, width);
    for (std::size_t e = 0; e < rows; ++e) {
        const std::size_t t = (*ids)[e];
        if (t >= num_targets) throw ValidationError("ad::segment_weighted_sum: bad target id");
        double* o = v.row_ptr(t);
        const double* m = msg->value.row_ptr(e);
        for (std::size_t h = 0; h < heads; ++h) {
            const double a = alpha->value(e, h);
            for (std::size_t d = 0; d < head_dim; ++d) o[h * head_dim + d] += a * m[h * head_dim + d];
        }
    }
    return make_op(std::move(v), {alpha, msg}, [alpha, msg, ids, heads, head_dim](Node& n) {
        for (std::size_t e = 0; e < ids->size(); ++e) {
            const std::size_t t = (*ids)[e];
            const double* go = n.grad.row_ptr(t);
            const double* m = msg->value.row_ptr(e);
            for (std::size_t h = 0; h < heads; ++h) {
                const double a = alpha->value(e, h);
                double acc = 0.0;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    const std::size_t c = h * head_dim + d;
                    acc += go[c] * m[c];
                    if (msg->requires_grad) msg->grad(e, c) += a * go[c];
                }
                if (alpha->requires_grad) alpha->grad(e, h) += acc;
            }
        }
    });
}

NodePtr row_scale(const NodePtr& a, std::vector<double> factors) {
    if (factors.size() != a->value.rows())
        throw DimensionError("ad::row_scale: one factor per row required");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) *= factors[i];
    auto f = std::make_shared<std::vector<double>>(std::move(factors));
    return make_op(std::move(v), {a}, [a, f](Node& n) {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.rows(); ++i)
            for (std::size_t j = 0; j < n.grad.cols(); ++j)
                a->grad(i, j) += (*f)[i] * n.grad(i, j);
    });
}

NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (double x : a->value.raw()) s += x;
    return make_op(Matrix(1, 1, {s}), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        const double g = n.grad(0, 0);
        for (auto& x : a->grad.raw()) x += g;
    });
}

NodePtr mean_all(const NodePtr& a) {
    if (a->value.size() == 0) throw ValidationError("ad::mean_all: empty input");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

NodePtr bce_with_logits_mean(const NodePtr& logits, const Matrix& targets) {
    const double loss = feddes::bce_with_logits(logits->value, targets);
    auto z = std::make_shared<Matrix>(targets);
    return make_op(Matrix(1, 1, {loss}), {logits}, [logits, z](Node& n) {
        if (!logits->requires_grad) return;
        const double g = n.grad(0, 0) / static_cast<double>(logits->value.size());
        for (std::size_t i = 0; i < logits->value.size(); ++i)
            logits->grad.raw()[i] +=
                g * (sigmoid_scalar(logits->value.raw()[i]) - z->raw()[i]);
    });
}

NodePtr softmax_xent_mean(const NodePtr& logits, const std::vector<std::size_t>& labels,
                          const std::vector<double>& class_weights) {
    const std::size_t n = logits->value.rows(), c = logits->value.cols();
    if (labels.size() != n) throw DimensionError("ad::softmax_xent_mean: one label per row");
    auto w = std::make_shared<std::vector<double>>(n, 1.0);
    double wsum = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c) throw ValidationError("ad::softmax_xent_mean: label out of range");
        if (!class_weights.empty()) (*w)[i] = class_weights[labels[i]];
        wsum += (*w)[i];
        loss += (*w)[i] * (logsumexp_row(logits->value, i) - logits->value(i, labels[i]));
    }
    if (wsum <= 0.0) throw ValidationError("ad::softmax_xent_mean: nonpositive weight sum");
    loss /= wsum;
    auto lab = std::make_shared<std::vector<std::size_t>>(labels);
    return make_op(Matrix(1, 1, {loss}), {logits}, [logits, lab, w, wsum](Node& n) {
        if (!logits->requires_grad) return;
        const Matrix probs = softmax_rows(logits->value);
        const double g = n.grad(0, 0) / wsum;
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            const double wi = (*w)[i];
            for (std::size_t j = 0; j < probs.cols(); ++j) {
                double d = probs(i, j);
                if (j == (*lab)[i]) d -= 1.0;
                logits->grad(i, j) += g * wi * d;
            }
        }
    });
}

namespace {

// Post-order over parents, iterative; each node visited once.
std::vector<Node*> topo_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // children appear before their parents' ancestors; reverse for backprop
}

} // namespace

void backward(const NodePtr& root) {
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw ValidationError("ad::backward: root must be a 1x1 scalar");
    auto order = topo_order(root);
    root->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

void zero_all_grads(const NodePtr& root) {
    for (Node* n : topo_order(root)) n->zero_grad();
}

} // namespace feddes::ad
