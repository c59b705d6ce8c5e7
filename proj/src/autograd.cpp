#include "flowgen/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace flowgen::ag {

Var constant(Mat v) { return std::make_shared<Node>(std::move(v), false); }
Var leaf(Mat v) { return std::make_shared<Node>(std::move(v), true); }

double scalar(const Var& v) {
    if (v->value.size() != 1) throw std::invalid_argument("scalar(): node is not 1x1");
    return v->value(0, 0);
}

namespace {

Var make(Mat v, std::vector<Var> parents, std::function<void(Node&)> back) {
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    auto n = std::make_shared<Node>(std::move(v), req);
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(back);
    }
    return n;
}

void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    if (seen.count(n)) return;
    seen.insert(n);
    for (const auto& p : n->parents)
        if (p->requires_grad) topo(p.get(), seen, order);
    order.push_back(n);
}

}  // namespace

void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward(): root must be 1x1");
    if (!root->requires_grad) return;
    std::unordered_set<Node*> seen;
    std::vector<Node*> order;
    topo(root.get(), seen, order);
    root->ensure_grad();
    root->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    return make(a->value + b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) b->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    return make(a->value - b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) b->accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    return make(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad.cwiseProduct(b->value));
        if (b->requires_grad) b->accumulate(n.grad.cwiseProduct(a->value));
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    return make(a->value * s, {a}, [a, s](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad * s);
    });
}

Var add_scalar(const Var& a, double s) {
    return make(a->value.array() + s, {a}, [a](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
    });
}

Var exp(const Var& a) {
    Mat v = a->value.array().exp();
    return make(v, {a}, [a](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad.cwiseProduct(n.value));
    });
}

Var log(const Var& a) {
    return make(a->value.array().log(), {a}, [a](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad.cwiseQuotient(a->value));
    });
}

Var tanh(const Var& a) {
    Mat v = a->value.array().tanh();
    return make(v, {a}, [a](Node& n) {
        if (a->requires_grad)
            a->accumulate(n.grad.cwiseProduct(Mat(1.0 - n.value.array().square())));
    });
}

Var relu(const Var& a) {
    Mat v = a->value.cwiseMax(0.0);
    return make(v, {a}, [a](Node& n) {
        if (a->requires_grad) {
            Mat m = (a->value.array() > 0.0).cast<double>();
            a->accumulate(n.grad.cwiseProduct(m));
        }
    });
}

Var gelu(const Var& a) {
    // tanh approximation
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    Mat x = a->value;
    Mat inner = (k * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat t = inner.array().tanh();
    Mat v = 0.5 * x.cwiseProduct(Mat(1.0 + t.array()));
    return make(v, {a}, [a, t, x, k](Node& n) {
        if (!a->requires_grad) return;
        Mat sech2 = 1.0 - t.array().square();
        Mat dinner = k * (1.0 + 3.0 * 0.044715 * x.array().square());
        Mat d = 0.5 * (1.0 + t.array()) + 0.5 * x.array() * sech2.array() * dinner.array();
        a->accumulate(n.grad.cwiseProduct(Mat(d)));
    });
}

Var square(const Var& a) {
    return make(a->value.array().square(), {a}, [a](Node& n) {
        if (a->requires_grad) a->accumulate(2.0 * n.grad.cwiseProduct(a->value));
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows())
        throw std::invalid_argument("matmul(): inner dimensions disagree");
    return make(a->value * b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad * b->value.transpose());
        if (b->requires_grad) b->accumulate(a->value.transpose() * n.grad);
    });
}

Var transpose(const Var& a) {
    return make(a->value.transpose(), {a}, [a](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad.transpose());
    });
}

Var slice_rows(const Var& a, int start, int count) {
    return make(a->value.middleRows(start, count), {a}, [a, start, count](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad.middleRows(start, count) += n.grad;
    });
}

Var slice_cols(const Var& a, int start, int count) {
    return make(a->value.middleCols(start, count), {a}, [a, start, count](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad.middleCols(start, count) += n.grad;
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows(): no parts");
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p->value.rows();
    Mat v(rows, parts[0]->value.cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    return make(std::move(v), parts, [parts](Node& n) {
        Eigen::Index r = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(r, p->value.rows());
            }
            r += p->value.rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols(): no parts");
    Eigen::Index cols = 0;
    for (const auto& p : parts) cols += p->value.cols();
    Mat v(parts[0]->value.rows(), cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return make(std::move(v), parts, [parts](Node& n) {
        Eigen::Index c = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(c, p->value.cols());
            }
            c += p->value.cols();
        }
    });
}

Var add_rowvec(const Var& a, const Var& row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
        throw std::invalid_argument("add_rowvec(): shape mismatch");
    Mat v = a->value.rowwise() + row->value.row(0);
    return make(std::move(v), {a, row}, [a, row](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (row->requires_grad) row->accumulate(n.grad.colwise().sum());
    });
}

Var gather_rows(const Var& a, const std::vector<int>& indices) {
    Mat v(static_cast<Eigen::Index>(indices.size()), a->value.cols());
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= a->value.rows())
            throw std::out_of_range("gather_rows(): index out of range");
        v.row(static_cast<Eigen::Index>(i)) = a->value.row(indices[i]);
    }
    return make(std::move(v), {a}, [a, indices](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < indices.size(); ++i)
            a->grad.row(indices[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

Var sum(const Var& a) {
    Mat v(1, 1);
    v(0, 0) = a->value.sum();
    return make(std::move(v), {a}, [a](Node& n) {
        if (a->requires_grad)
            a->accumulate(Mat::Constant(a->value.rows(), a->value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.size())); }

Var sum_rows(const Var& a) {
    Mat v = a->value.rowwise().sum();
    return make(std::move(v), {a}, [a](Node& n) {
        if (a->requires_grad)
            a->accumulate(n.grad * Mat::Ones(1, a->value.cols()));
    });
}

Var dot(const Var& a, const Var& b) {
    if (a->value.size() != b->value.size())
        throw std::invalid_argument("dot(): size mismatch");
    Mat v(1, 1);
    v(0, 0) = a->value.cwiseProduct(b->value).sum();
    return make(std::move(v), {a, b}, [a, b](Node& n) {
        double g = n.grad(0, 0);
        if (a->requires_grad) a->accumulate(g * b->value);
        if (b->requires_grad) b->accumulate(g * a->value);
    });
}

namespace {

Mat softmax_value(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double m = a.row(r).maxCoeff();
        Eigen::ArrayXd e = (a.row(r).array() - m).exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
    Mat s = softmax_value(a->value);
    return make(s, {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Mat g(n.value.rows(), n.value.cols());
        for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
            double d = n.grad.row(r).cwiseProduct(n.value.row(r)).sum();
            g.row(r) = n.value.row(r).cwiseProduct(Mat(n.grad.row(r).array() - d));
        }
        a->accumulate(g);
    });
}

Var log_softmax_rows(const Var& a) {
    Mat v(a->value.rows(), a->value.cols());
    for (Eigen::Index r = 0; r < a->value.rows(); ++r) {
        double m = a->value.row(r).maxCoeff();
        Eigen::ArrayXd shifted = a->value.row(r).array() - m;
        // Subtract the max first so the result depends only on the shifted
        // logits; any common offset cancels exactly, not just approximately.
        v.row(r) = shifted - std::log(shifted.exp().sum());
    }
    return make(std::move(v), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Mat g(n.value.rows(), n.value.cols());
        for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
            double gs = n.grad.row(r).sum();
            g.row(r) = n.grad.row(r) - gs * n.value.row(r).array().exp().matrix();
        }
        a->accumulate(g);
    });
}

Var causal_softmax_rows(const Var& a) {
    if (a->value.rows() != a->value.cols())
        throw std::invalid_argument("causal_softmax_rows(): square matrix required");
    Eigen::Index t = a->value.rows();
    Mat s = Mat::Zero(t, t);
    for (Eigen::Index r = 0; r < t; ++r) {
        auto seg = a->value.row(r).head(r + 1);
        double m = seg.maxCoeff();
        Eigen::ArrayXd e = (seg.array() - m).exp();
        s.row(r).head(r + 1) = (e / e.sum()).matrix();
    }
    return make(std::move(s), {a}, [a, t](Node& n) {
        if (!a->requires_grad) return;
        Mat g = Mat::Zero(t, t);
        for (Eigen::Index r = 0; r < t; ++r) {
            auto sv = n.value.row(r).head(r + 1);
            auto gv = n.grad.row(r).head(r + 1);
            double d = gv.cwiseProduct(sv).sum();
            g.row(r).head(r + 1) = sv.cwiseProduct((gv.array() - d).matrix());
        }
        a->accumulate(g);
    });
}

Var logsumexp_rows(const Var& a) {
    Mat v(a->value.rows(), 1);
    for (Eigen::Index r = 0; r < a->value.rows(); ++r) {
        double m = a->value.row(r).maxCoeff();
        v(r, 0) = m + std::log((a->value.row(r).array() - m).exp().sum());
    }
    return make(std::move(v), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Mat g(a->value.rows(), a->value.cols());
        for (Eigen::Index r = 0; r < a->value.rows(); ++r)
            g.row(r) = n.grad(r, 0) * (a->value.row(r).array() - n.value(r, 0)).exp().matrix();
        a->accumulate(g);
    });
}

Var gather_sum(const Var& a, const std::vector<std::pair<int, int>>& idx) {
    Mat v(1, 1);
    double s = 0.0;
    for (auto [r, c] : idx) s += a->value(r, c);
    v(0, 0) = s;
    return make(std::move(v), {a}, [a, idx](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        double g = n.grad(0, 0);
        for (auto [r, c] : idx) a->grad(r, c) += g;
    });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
    Eigen::Index rows = x->value.rows(), cols = x->value.cols();
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mu = x->value.row(r).mean();
        double var = (x->value.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x->value.row(r).array() - mu) * inv_std(r);
    }
    Mat v = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
            bias->value.row(0).array();
    return make(std::move(v), {x, gain, bias},
                [x, gain, bias, xhat, inv_std, rows, cols](Node& n) {
        if (gain->requires_grad)
            gain->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        if (bias->requires_grad) bias->accumulate(n.grad.colwise().sum());
        if (!x->requires_grad) return;
        Mat gx(rows, cols);
        double inv_n = 1.0 / static_cast<double>(cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            Eigen::ArrayXd dxhat =
                n.grad.row(r).array() * gain->value.row(0).array();
            double m1 = dxhat.mean();
            double m2 = (dxhat * xhat.row(r).transpose().array()).mean();
            gx.row(r) =
                (inv_std(r) * (dxhat - m1 - xhat.row(r).transpose().array() * m2)).matrix();
            (void)inv_n;
        }
        x->accumulate(gx);
    });
}

Var cosine(const Var& a, const Var& b) {
    double na = a->value.norm(), nb = b->value.norm();
    if (na == 0.0 || nb == 0.0)
        throw std::domain_error("cosine(): zero-norm vector");
    double ab = a->value.cwiseProduct(b->value).sum();
    Mat v(1, 1);
    v(0, 0) = ab / (na * nb);
    return make(std::move(v), {a, b}, [a, b, na, nb, ab](Node& n) {
        double g = n.grad(0, 0);
        if (a->requires_grad)
            a->accumulate(g * (b->value / (na * nb) - (ab / (na * na * na * nb)) * a->value));
        if (b->requires_grad)
            b->accumulate(g * (a->value / (na * nb) - (ab / (na * nb * nb * nb)) * b->value));
    });
}

Var straight_through(const Var& soft) {
    Eigen::Index r0 = 0, c0 = 0;
    soft->value.maxCoeff(&r0, &c0);
    Mat hard = Mat::Zero(soft->value.rows(), soft->value.cols());
    hard(r0, c0) = 1.0;
    return make(std::move(hard), {soft}, [soft](Node& n) {
        if (soft->requires_grad) soft->accumulate(n.grad);
    });
}

Var straight_through_rows(const Var& soft) {
    Mat hard = Mat::Zero(soft->value.rows(), soft->value.cols());
    for (Eigen::Index r = 0; r < soft->value.rows(); ++r) {
        Eigen::Index c0 = 0;
        soft->value.row(r).maxCoeff(&c0);
        hard(r, c0) = 1.0;
    }
    return make(std::move(hard), {soft}, [soft](Node& n) {
        if (soft->requires_grad) soft->accumulate(n.grad);
    });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng, bool training) {
    if (!training || p <= 0.0) return a;
    std::bernoulli_distribution keep(1.0 - p);
    Mat mask(a->value.rows(), a->value.cols());
    double scale_up = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask(i) = keep(rng) ? scale_up : 0.0;
    return mul(a, constant(std::move(mask)));
}

}  // namespace flowgen::ag
