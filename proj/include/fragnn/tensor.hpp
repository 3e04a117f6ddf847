#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fragnn {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major 64-bit float matrix.
struct Array {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Array() = default;
    Array(int r, int c, double fill = 0.0) : rows(r), cols(c), data(size_t(r) * c, fill) {}

    double& at(int r, int c) { return data[size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[size_t(r) * cols + c]; }
    size_t size() const { return data.size(); }
    std::string shape_str() const {
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }
};

// Reverse-mode tape. Node ids are creation-ordered, which is a topological
// order for the backward sweep. Single-threaded; sequential reductions only.
class Tape {
public:
    using Id = int;

    Id leaf(Array v, bool requires_grad = false);
    Id constant(Array v) { return leaf(std::move(v), false); }

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);                 // elementwise, same shape
    Id add_rowvec(Id a, Id bias);       // bias is 1 x cols
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);                 // elementwise
    Id relu(Id a);
    Id exp_(Id a);
    Id log_(Id a);
    Id neg(Id a);
    Id scale(Id a, double c);
    Id clamp_min(Id a, double floor);   // gradient is zero where clamped
    Id gather_rows(Id a, std::vector<int> idx);
    Id concat_cols(Id a, Id b);
    Id segment_sum(Id a, std::vector<int> seg, int nseg);
    Id segment_mean(Id a, std::vector<int> seg, int nseg);
    // Per-segment log-sum-exp of a column vector; empty segments yield -inf.
    Id segment_logsumexp(Id a, std::vector<int> seg, int nseg);
    // Row-wise log-softmax with an additive mask of 0 / -inf entries.
    Id log_softmax_masked(Id a, Array mask);
    Id log_softmax(Id a);
    Id reduce_sum(Id a);                // 1x1
    Id reshape(Id a, int rows, int cols);  // same element count, row-major
    // exp(x) * y elementwise with the convention exp(-inf) * anything = 0;
    // used for entropies and cross-entropies of log-space distributions.
    Id xexpy(Id x, Id y);

    const Array& value(Id id) const { return nodes_[id].value; }
    const Array& grad(Id id) const { return nodes_[id].grad; }

    void backward(Id loss);  // loss must be a finite scalar

    size_t num_nodes() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf, MatMul, Add, AddRowVec, Sub, Mul, Relu, Exp, Log, Neg, Scale, ClampMin,
        GatherRows, ConcatCols, SegmentSum, SegmentMean, SegmentLse, LogSoftmaxMasked,
        ReduceSum, Reshape, XExpY
    };
    struct Node {
        Op op;
        std::vector<Id> inputs;
        Array value;
        Array grad;
        std::vector<int> indices;  // gather / segment ids
        int nseg = 0;
        double scalar = 0.0;
        Array mask;                // log-softmax additive mask
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;

    Id push(Node n);
    void check(Id id) const;
};

// Gradient checker: relative error per parameter between analytic gradients
// and central finite differences.
struct GradCheckReport {
    double max_rel_error = 0.0;
    size_t num_params = 0;
    size_t num_failures = 0;
    bool pass(double tol) const { return num_failures == 0 && max_rel_error < tol; }
};

// model_fn builds a fresh tape from the parameter arrays and returns the loss.
GradCheckReport grad_check(
    const std::function<double(const std::vector<Array>&, std::vector<Array>*)>& model_fn,
    std::vector<Array> params, double tolerance, double step = 1e-4);

}  // namespace fragnn
