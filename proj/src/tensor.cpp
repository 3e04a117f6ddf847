#include "fragnn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fragnn {

namespace {

[[noreturn]] void shape_fail(const char* op, const Array& a, const Array& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
}

[[noreturn]] void shape_fail(const char* op, const Array& a) {
    throw ShapeError(std::string(op) + ": bad shape " + a.shape_str());
}

}  // namespace

Tape::Id Tape::push(Node n) {
    n.grad = Array();
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

void Tape::check(Id id) const {
    if (id < 0 || id >= static_cast<Id>(nodes_.size()))
        throw ShapeError("invalid tape node id " + std::to_string(id));
}

Tape::Id Tape::leaf(Array v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b) {
    check(a); check(b);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[b].value;
    if (A.cols != B.rows) shape_fail("matmul", A, B);
    Array C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
            double av = A.at(i, k);
            if (av == 0.0) continue;
            const double* brow = &B.data[size_t(k) * B.cols];
            double* crow = &C.data[size_t(i) * C.cols];
            for (int j = 0; j < B.cols; ++j) crow[j] += av * brow[j];
        }
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
    check(a); check(b);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[b].value;
    if (A.rows != B.rows || A.cols != B.cols) shape_fail("add", A, B);
    Array C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::add_rowvec(Id a, Id bias) {
    check(a); check(bias);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[bias].value;
    if (B.rows != 1 || B.cols != A.cols) shape_fail("add_rowvec", A, B);
    Array C = A;
    for (int i = 0; i < C.rows; ++i)
        for (int j = 0; j < C.cols; ++j) C.at(i, j) += B.at(0, j);
    Node n;
    n.op = Op::AddRowVec;
    n.inputs = {a, bias};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
    check(a); check(b);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[b].value;
    if (A.rows != B.rows || A.cols != B.cols) shape_fail("sub", A, B);
    Array C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] -= B.data[i];
    Node n;
    n.op = Op::Sub;
    n.inputs = {a, b};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
    check(a); check(b);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[b].value;
    if (A.rows != B.rows || A.cols != B.cols) shape_fail("mul", A, B);
    Array C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::relu(Id a) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v = std::max(v, 0.0);
    Node n;
    n.op = Op::Relu;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::exp_(Id a) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v = std::exp(v);
    Node n;
    n.op = Op::Exp;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::log_(Id a) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v = std::log(v);
    Node n;
    n.op = Op::Log;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::neg(Id a) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v = -v;
    Node n;
    n.op = Op::Neg;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v *= c;
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar = c;
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::clamp_min(Id a, double floor) {
    check(a);
    Array C = nodes_[a].value;
    for (auto& v : C.data) v = std::max(v, floor);
    Node n;
    n.op = Op::ClampMin;
    n.inputs = {a};
    n.scalar = floor;
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::gather_rows(Id a, std::vector<int> idx) {
    check(a);
    const Array& A = nodes_[a].value;
    Array C(static_cast<int>(idx.size()), A.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= A.rows) shape_fail("gather_rows", A);
        for (int j = 0; j < A.cols; ++j) C.at(static_cast<int>(i), j) = A.at(idx[i], j);
    }
    Node n;
    n.op = Op::GatherRows;
    n.inputs = {a};
    n.indices = std::move(idx);
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::concat_cols(Id a, Id b) {
    check(a); check(b);
    const Array& A = nodes_[a].value;
    const Array& B = nodes_[b].value;
    if (A.rows != B.rows) shape_fail("concat_cols", A, B);
    Array C(A.rows, A.cols + B.cols);
    for (int i = 0; i < A.rows; ++i) {
        for (int j = 0; j < A.cols; ++j) C.at(i, j) = A.at(i, j);
        for (int j = 0; j < B.cols; ++j) C.at(i, A.cols + j) = B.at(i, j);
    }
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = {a, b};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::segment_sum(Id a, std::vector<int> seg, int nseg) {
    check(a);
    const Array& A = nodes_[a].value;
    if (static_cast<int>(seg.size()) != A.rows) shape_fail("segment_sum", A);
    Array C(nseg, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        if (seg[i] < 0 || seg[i] >= nseg) shape_fail("segment_sum", A);
        for (int j = 0; j < A.cols; ++j) C.at(seg[i], j) += A.at(i, j);
    }
    Node n;
    n.op = Op::SegmentSum;
    n.inputs = {a};
    n.indices = std::move(seg);
    n.nseg = nseg;
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::segment_mean(Id a, std::vector<int> seg, int nseg) {
    check(a);
    const Array& A = nodes_[a].value;
    if (static_cast<int>(seg.size()) != A.rows) shape_fail("segment_mean", A);
    std::vector<int> counts(nseg, 0);
    for (int s : seg) {
        if (s < 0 || s >= nseg) shape_fail("segment_mean", A);
        ++counts[s];
    }
    Array C(nseg, A.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) C.at(seg[i], j) += A.at(i, j);
    for (int s = 0; s < nseg; ++s)
        if (counts[s] > 0)
            for (int j = 0; j < A.cols; ++j) C.at(s, j) /= counts[s];
    Node n;
    n.op = Op::SegmentMean;
    n.inputs = {a};
    n.indices = std::move(seg);
    n.nseg = nseg;
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::segment_logsumexp(Id a, std::vector<int> seg, int nseg) {
    check(a);
    const Array& A = nodes_[a].value;
    if (A.cols != 1 || static_cast<int>(seg.size()) != A.rows)
        shape_fail("segment_logsumexp", A);
    std::vector<double> mx(nseg, kNegInf);
    for (int i = 0; i < A.rows; ++i) {
        if (seg[i] < 0 || seg[i] >= nseg) shape_fail("segment_logsumexp", A);
        mx[seg[i]] = std::max(mx[seg[i]], A.at(i, 0));
    }
    std::vector<double> acc(nseg, 0.0);
    for (int i = 0; i < A.rows; ++i)
        if (mx[seg[i]] != kNegInf) acc[seg[i]] += std::exp(A.at(i, 0) - mx[seg[i]]);
    Array C(nseg, 1);
    for (int s = 0; s < nseg; ++s)
        C.at(s, 0) = (mx[s] == kNegInf) ? kNegInf : mx[s] + std::log(acc[s]);
    Node n;
    n.op = Op::SegmentLse;
    n.inputs = {a};
    n.indices = std::move(seg);
    n.nseg = nseg;
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::log_softmax_masked(Id a, Array mask) {
    check(a);
    const Array& A = nodes_[a].value;
    if (mask.rows != A.rows || mask.cols != A.cols) shape_fail("log_softmax_masked", A, mask);
    Array C(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        double mx = kNegInf;
        for (int j = 0; j < A.cols; ++j) {
            double v = A.at(i, j) + mask.at(i, j);
            C.at(i, j) = v;
            mx = std::max(mx, v);
        }
        if (mx == kNegInf)
            throw ShapeError("log_softmax_masked: all cells masked in row " + std::to_string(i));
        double acc = 0.0;
        for (int j = 0; j < A.cols; ++j)
            if (C.at(i, j) != kNegInf) acc += std::exp(C.at(i, j) - mx);
        double lse = mx + std::log(acc);
        for (int j = 0; j < A.cols; ++j)
            if (C.at(i, j) != kNegInf) C.at(i, j) -= lse;
    }
    Node n;
    n.op = Op::LogSoftmaxMasked;
    n.inputs = {a};
    n.mask = std::move(mask);
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::log_softmax(Id a) {
    const Array& A = nodes_[a].value;
    return log_softmax_masked(a, Array(A.rows, A.cols, 0.0));
}

Tape::Id Tape::reduce_sum(Id a) {
    check(a);
    const Array& A = nodes_[a].value;
    Array C(1, 1);
    for (double v : A.data) C.at(0, 0) += v;
    Node n;
    n.op = Op::ReduceSum;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
    check(a);
    const Array& A = nodes_[a].value;
    if (size_t(rows) * cols != A.size()) shape_fail("reshape", A);
    Array C = A;
    C.rows = rows;
    C.cols = cols;
    Node n;
    n.op = Op::Reshape;
    n.inputs = {a};
    n.value = std::move(C);
    return push(std::move(n));
}

Tape::Id Tape::xexpy(Id x, Id y) {
    check(x); check(y);
    const Array& X = nodes_[x].value;
    const Array& Y = nodes_[y].value;
    if (X.rows != Y.rows || X.cols != Y.cols) shape_fail("xexpy", X, Y);
    Array C(X.rows, X.cols);
    for (size_t i = 0; i < C.size(); ++i) {
        double p = std::exp(X.data[i]);
        C.data[i] = (p == 0.0) ? 0.0 : p * Y.data[i];
    }
    Node n;
    n.op = Op::XExpY;
    n.inputs = {x, y};
    n.value = std::move(C);
    return push(std::move(n));
}

void Tape::backward(Id loss) {
    check(loss);
    const Array& L = nodes_[loss].value;
    if (L.rows != 1 || L.cols != 1)
        throw ShapeError("backward: loss must be scalar, got " + L.shape_str());
    if (!std::isfinite(L.at(0, 0)))
        throw ShapeError("backward: loss is not finite");

    for (auto& n : nodes_) n.grad = Array(n.value.rows, n.value.cols, 0.0);
    nodes_[loss].grad.at(0, 0) = 1.0;

    for (Id id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        const Array& g = n.grad;
        bool any = false;
        for (double v : g.data)
            if (v != 0.0) { any = true; break; }
        if (!any) continue;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Array& A = nodes_[n.inputs[0]].value;
                const Array& B = nodes_[n.inputs[1]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                // dA = g * B^T
                for (int i = 0; i < A.rows; ++i)
                    for (int k = 0; k < A.cols; ++k) {
                        double acc = 0.0;
                        for (int j = 0; j < B.cols; ++j) acc += g.at(i, j) * B.at(k, j);
                        ga.at(i, k) += acc;
                    }
                // dB = A^T * g
                for (int k = 0; k < A.cols; ++k)
                    for (int i = 0; i < A.rows; ++i) {
                        double av = A.at(i, k);
                        if (av == 0.0) continue;
                        for (int j = 0; j < B.cols; ++j) gb.at(k, j) += av * g.at(i, j);
                    }
                break;
            }
            case Op::Add: {
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] += g.data[i];
                }
                break;
            }
            case Op::AddRowVec: {
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
                break;
            }
            case Op::Sub: {
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] -= g.data[i];
                }
                break;
            }
            case Op::Mul: {
                const Array& A = nodes_[n.inputs[0]].value;
                const Array& B = nodes_[n.inputs[1]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i] * B.data[i];
                    gb.data[i] += g.data[i] * A.data[i];
                }
                break;
            }
            case Op::Relu: {
                const Array& A = nodes_[n.inputs[0]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    if (A.data[i] > 0.0) ga.data[i] += g.data[i];
                break;
            }
            case Op::Exp: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.value.data[i];
                break;
            }
            case Op::Log: {
                const Array& A = nodes_[n.inputs[0]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / A.data[i];
                break;
            }
            case Op::Neg: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] -= g.data[i];
                break;
            }
            case Op::Scale: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.scalar;
                break;
            }
            case Op::ClampMin: {
                const Array& A = nodes_[n.inputs[0]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    if (A.data[i] > n.scalar) ga.data[i] += g.data[i];
                break;
            }
            case Op::GatherRows: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < n.indices.size(); ++i)
                    for (int j = 0; j < g.cols; ++j)
                        ga.at(n.indices[i], j) += g.at(static_cast<int>(i), j);
                break;
            }
            case Op::ConcatCols: {
                Array& ga = nodes_[n.inputs[0]].grad;
                Array& gb = nodes_[n.inputs[1]].grad;
                for (int i = 0; i < g.rows; ++i) {
                    for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, j);
                    for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, ga.cols + j);
                }
                break;
            }
            case Op::SegmentSum: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (int i = 0; i < ga.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga.at(i, j) += g.at(n.indices[i], j);
                break;
            }
            case Op::SegmentMean: {
                Array& ga = nodes_[n.inputs[0]].grad;
                std::vector<int> counts(n.nseg, 0);
                for (int s : n.indices) ++counts[s];
                for (int i = 0; i < ga.rows; ++i) {
                    int s = n.indices[i];
                    for (int j = 0; j < g.cols; ++j) ga.at(i, j) += g.at(s, j) / counts[s];
                }
                break;
            }
            case Op::SegmentLse: {
                const Array& A = nodes_[n.inputs[0]].value;
                Array& ga = nodes_[n.inputs[0]].grad;
                for (int i = 0; i < A.rows; ++i) {
                    int s = n.indices[i];
                    double y = n.value.at(s, 0);
                    if (y == kNegInf) continue;
                    double w = std::exp(A.at(i, 0) - y);
                    ga.at(i, 0) += g.at(s, 0) * w;
                }
                break;
            }
            case Op::LogSoftmaxMasked: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (int i = 0; i < g.rows; ++i) {
                    double gsum = 0.0;
                    for (int j = 0; j < g.cols; ++j)
                        if (n.mask.at(i, j) != kNegInf) gsum += g.at(i, j);
                    for (int j = 0; j < g.cols; ++j) {
                        if (n.mask.at(i, j) == kNegInf) continue;
                        double p = std::exp(n.value.at(i, j));
                        ga.at(i, j) += g.at(i, j) - p * gsum;
                    }
                }
                break;
            }
            case Op::ReduceSum: {
                Array& ga = nodes_[n.inputs[0]].grad;
                double gv = g.at(0, 0);
                for (auto& v : ga.data) v += gv;
                break;
            }
            case Op::Reshape: {
                Array& ga = nodes_[n.inputs[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                break;
            }
            case Op::XExpY: {
                const Array& X = nodes_[n.inputs[0]].value;
                const Array& Y = nodes_[n.inputs[1]].value;
                Array& gx = nodes_[n.inputs[0]].grad;
                Array& gy = nodes_[n.inputs[1]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    double p = std::exp(X.data[i]);
                    if (p > 0.0) {
                        gx.data[i] += g.data[i] * p * Y.data[i];
                        gy.data[i] += g.data[i] * p;
                    }
                }
                break;
            }
        }
    }
}

GradCheckReport grad_check(
    const std::function<double(const std::vector<Array>&, std::vector<Array>*)>& model_fn,
    std::vector<Array> params, double tolerance, double step) {
    size_t total = 0;
    for (const auto& p : params) total += p.size();
    if (total > 5000)
        throw ShapeError("grad_check limited to 5000 parameters, got " + std::to_string(total));

    GradCheckReport report;
    report.num_params = total;
    if (total == 0) return report;

    std::vector<Array> analytic;
    model_fn(params, &analytic);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t k = 0; k < params[pi].size(); ++k) {
            double orig = params[pi].data[k];
            params[pi].data[k] = orig + step;
            double up = model_fn(params, nullptr);
            params[pi].data[k] = orig - step;
            double down = model_fn(params, nullptr);
            params[pi].data[k] = orig;
            double numeric = (up - down) / (2 * step);
            double a = analytic[pi].data[k];
            double diff = std::abs(a - numeric);
            // central differences cannot resolve differences below ~1e-12
            // (double rounding of the loss divided by 2*step); below that the
            // two values agree to measurement precision
            if (diff <= 1e-12) continue;
            double rel = diff / (std::abs(a) + std::abs(numeric) + 1e-12);
            report.max_rel_error = std::max(report.max_rel_error, rel);
            if (rel >= tolerance) ++report.num_failures;
        }
    }
    return report;
}

}  // namespace fragnn
