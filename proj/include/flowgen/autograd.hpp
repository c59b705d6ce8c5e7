#pragma once

// Reverse-mode autodiff over Eigen double matrices. Define-by-run: every
// forward op appends a node with a backward closure; backward() walks the
// tape in reverse topological order. Double precision throughout so the
// finite-difference checks in the test suite are meaningful.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowgen::ag {

using Mat = Eigen::MatrixXd;

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Mat value;
    Mat grad;  // same shape as value; allocated lazily
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

    explicit Node(Mat v, bool req = false) : value(std::move(v)), requires_grad(req) {}

    void ensure_grad() {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    }
    void accumulate(const Mat& g) {
        ensure_grad();
        grad += g;
    }
};

Var constant(Mat v);
Var leaf(Mat v);  // requires_grad = true

// Runs backprop from a 1x1 root, seeding d(root)/d(root) = 1.
void backward(const Var& root);

double scalar(const Var& v);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // coefficient-wise
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var square(const Var& a);

// ---- linear algebra / shape ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var slice_rows(const Var& a, int start, int count);
Var slice_cols(const Var& a, int start, int count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var add_rowvec(const Var& a, const Var& row);  // broadcast a 1xD row over all rows of a
Var gather_rows(const Var& a, const std::vector<int>& indices);  // embedding lookup

// ---- reductions ----
Var sum(const Var& a);   // 1x1
Var mean(const Var& a);  // 1x1
Var sum_rows(const Var& a);  // Rx1 -> per-row sums collapsed to Rx1? no: returns Rx1 column of row sums
Var dot(const Var& a, const Var& b);  // flattened inner product, 1x1

// ---- softmax family (row-wise) ----
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// Softmax per row with positions j > i (strictly upper triangle) masked out.
Var causal_softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);  // Rx1

// Sum of a[r, c] over given (row, col) index pairs, as a 1x1 node.
Var gather_sum(const Var& a, const std::vector<std::pair<int, int>>& idx);

// ---- normalization ----
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// ---- misc ----
Var cosine(const Var& a, const Var& b);  // 1xD vectors -> 1x1
// Forward: exact one-hot at argmax of the soft input; backward: identity
// (gradient flows to the soft relaxation unchanged).
Var straight_through(const Var& soft);
Var straight_through_rows(const Var& soft);  // per-row one-hot at each row argmax
Var dropout(const Var& a, double p, std::mt19937_64& rng, bool training);

}  // namespace flowgen::ag
