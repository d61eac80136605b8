#include "crfasn/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace crfasn::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::optional<std::pair<Op, double>> g_fault;

[[noreturn]] void shape_fail(Op op, const std::vector<const Tensor*>& ts, std::string_view what = {}) {
    std::ostringstream os;
    os << op_name(op) << ": shape mismatch";
    for (const auto* t : ts) os << ' ' << t->shape_string();
    if (!what.empty()) os << " (" << what << ')';
    throw ShapeError(os.str());
}

// Reduce a gradient of a's shape down to a broadcast operand's shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

bool broadcastable(const Matrix& a, const Matrix& b) {
    return (a.rows() == b.rows() && a.cols() == b.cols()) || (b.rows() == 1 && b.cols() == 1) ||
           (b.rows() == 1 && b.cols() == a.cols()) || (b.cols() == 1 && b.rows() == a.rows());
}

Matrix broadcast(const Matrix& b, Index rows, Index cols) {
    if (b.rows() == rows && b.cols() == cols) return b;
    if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
    if (b.rows() == 1) return b.replicate(rows, 1);
    return b.replicate(1, cols);
}

}  // namespace

std::string_view op_name(Op op) {
    switch (op) {
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::concat: return "concat";
        case Op::transpose: return "transpose";
        case Op::slice: return "slice";
        case Op::tanh: return "tanh";
        case Op::sigmoid: return "sigmoid";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::gather: return "gather";
        case Op::conv1d: return "conv1d";
        case Op::max_over_time: return "max_over_time";
        case Op::dropout: return "dropout";
        case Op::softmax: return "softmax";
        case Op::logsumexp: return "logsumexp";
        case Op::sum: return "sum";
        case Op::sum_squares: return "sum_squares";
        case Op::pick: return "pick";
        case Op::crf_log_partition: return "crf_log_partition";
    }
    return "unknown";
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item: tensor is not scalar " + shape_string());
    return node_->value(0, 0);
}

std::string Tensor::shape_string() const {
    if (!node_) return "[undefined]";
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

void Tensor::accumulate_grad(const Matrix& g) {
    if (node_->grad.size() == 0)
        node_->grad = g;
    else
        node_->grad += g;
}

std::vector<Op> Tape::kinds() const {
    std::vector<Op> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.kind);
    return out;
}

void Tape::backward(Tensor loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw ShapeError("backward: loss must be scalar, got " + loss.shape_string());
    if (records_.empty()) throw std::logic_error("backward: tape is empty");

    loss.mutable_grad() = Matrix::Ones(1, 1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        auto& out = it->output;
        if (!out.has_grad()) continue;
        if (g_fault && g_fault->first == it->kind) {
            Matrix g = out.grad() * g_fault->second;
            it->backward(g);
        } else {
            it->backward(out.grad());
        }
        // Intermediate gradients are consumed; leaves keep accumulating.
        out.zero_grad();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace testing {
BackwardFault::BackwardFault(Op op, double factor) { g_fault = std::make_pair(op, factor); }
BackwardFault::~BackwardFault() { g_fault.reset(); }
std::optional<std::pair<Op, double>> active_fault() { return g_fault; }
}  // namespace testing

bool record_op(Op kind, std::vector<Tensor> inputs, Tensor& out,
               std::function<void(const Matrix&)> backward) {
    Tape* tape = g_active_tape;
    if (!tape) return false;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return false;
    out.set_requires_grad(true);
    tape->record(Record{kind, std::move(inputs), out, std::move(backward)});
    return true;
}

namespace {
void acc(Tensor t, const Matrix& g) {
    if (t.requires_grad()) t.accumulate_grad(g);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_fail(Op::matmul, {&a, &b});
    Tensor out(a.value() * b.value());
    record_op(Op::matmul, {a, b}, out, [a, b](const Matrix& g) {
        if (a.requires_grad()) acc(a, g * b.value().transpose());
        if (b.requires_grad()) acc(b, a.value().transpose() * g);
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!broadcastable(a.value(), b.value())) shape_fail(Op::add, {&a, &b});
    Tensor out(a.value() + broadcast(b.value(), a.rows(), a.cols()));
    record_op(Op::add, {a, b}, out, [a, b](const Matrix& g) {
        acc(a, g);
        if (b.requires_grad()) acc(b, reduce_to(g, b.rows(), b.cols()));
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!broadcastable(a.value(), b.value())) shape_fail(Op::sub, {&a, &b});
    Tensor out(a.value() - broadcast(b.value(), a.rows(), a.cols()));
    record_op(Op::sub, {a, b}, out, [a, b](const Matrix& g) {
        acc(a, g);
        if (b.requires_grad()) acc(b, -reduce_to(g, b.rows(), b.cols()));
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(Op::mul, {&a, &b});
    Tensor out(a.value().cwiseProduct(b.value()));
    record_op(Op::mul, {a, b}, out, [a, b](const Matrix& g) {
        if (a.requires_grad()) acc(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) acc(b, g.cwiseProduct(a.value()));
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.value() * c);
    record_op(Op::scale, {a}, out, [a, c](const Matrix& g) { acc(a, g * c); });
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    Index rows = 0, cols = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            if (p.cols() != parts[0].cols()) shape_fail(Op::concat, {&parts[0], &p}, "axis 0");
            rows += p.rows();
        } else {
            if (p.rows() != parts[0].rows()) shape_fail(Op::concat, {&parts[0], &p}, "axis 1");
            cols += p.cols();
        }
    }
    if (axis == 0) cols = parts[0].cols();
    else rows = parts[0].rows();

    Matrix v(rows, cols);
    Index off = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            v.middleRows(off, p.rows()) = p.value();
            off += p.rows();
        } else {
            v.middleCols(off, p.cols()) = p.value();
            off += p.cols();
        }
    }
    Tensor out(std::move(v));
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record_op(Op::concat, inputs, out, [inputs, axis](const Matrix& g) {
        Index o = 0;
        for (const auto& p : inputs) {
            if (axis == 0) {
                if (p.requires_grad()) acc(p, g.middleRows(o, p.rows()));
                o += p.rows();
            } else {
                if (p.requires_grad()) acc(p, g.middleCols(o, p.cols()));
                o += p.cols();
            }
        }
    });
    return out;
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.value().transpose());
    record_op(Op::transpose, {a}, out, [a](const Matrix& g) { acc(a, g.transpose()); });
    return out;
}

Tensor slice(const Tensor& a, Index row0, Index nrows, Index col0, Index ncols) {
    if (row0 < 0 || col0 < 0 || nrows < 0 || ncols < 0 || row0 + nrows > a.rows() ||
        col0 + ncols > a.cols())
        shape_fail(Op::slice, {&a}, "block out of range");
    Tensor out(a.value().block(row0, col0, nrows, ncols));
    record_op(Op::slice, {a}, out, [a, row0, nrows, col0, ncols](const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.block(row0, col0, nrows, ncols) = g;
        acc(a, full);
    });
    return out;
}

Tensor row(const Tensor& a, Index r) { return slice(a, r, 1, 0, a.cols()); }

Tensor tanh(const Tensor& a) {
    Tensor out(a.value().array().tanh().matrix());
    record_op(Op::tanh, {a}, out, [a, v = out.value()](const Matrix& g) {
        acc(a, (g.array() * (1.0 - v.array().square())).matrix());
    });
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    Tensor out(v);
    record_op(Op::sigmoid, {a}, out, [a, v](const Matrix& g) {
        acc(a, (g.array() * v.array() * (1.0 - v.array())).matrix());
    });
    return out;
}

Tensor exp(const Tensor& a) {
    Matrix v = a.value().array().exp().matrix();
    Tensor out(v);
    record_op(Op::exp, {a}, out, [a, v](const Matrix& g) { acc(a, g.cwiseProduct(v)); });
    return out;
}

Tensor log(const Tensor& a) {
    if ((a.value().array() <= 0.0).any()) throw std::domain_error("log: non-positive input");
    Tensor out(a.value().array().log().matrix());
    record_op(Op::log, {a}, out, [a](const Matrix& g) {
        acc(a, (g.array() / a.value().array()).matrix());
    });
    return out;
}

Tensor gather(const Tensor& table, std::span<const int> ids) {
    Matrix v(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw std::out_of_range("gather: index " + std::to_string(ids[i]) + " out of range for " +
                                    table.shape_string());
        v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
    }
    Tensor out(std::move(v));
    std::vector<int> saved(ids.begin(), ids.end());
    record_op(Op::gather, {table}, out, [table, saved](const Matrix& g) {
        Tensor t = table;
        if (!t.has_grad()) t.mutable_grad() = Matrix::Zero(t.rows(), t.cols());
        for (std::size_t i = 0; i < saved.size(); ++i) t.mutable_grad().row(saved[i]) += g.row(static_cast<Index>(i));
    });
    return out;
}

Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, int width) {
    const Index T = input.rows(), C = input.cols();
    if (width < 1 || T < width || weights.rows() != width * C || bias.rows() != 1 ||
        bias.cols() != weights.cols())
        shape_fail(Op::conv1d, {&input, &weights, &bias}, "width " + std::to_string(width));
    const Index windows = T - width + 1;
    Matrix unfolded(windows, width * C);
    for (Index t = 0; t < windows; ++t)
        for (int k = 0; k < width; ++k) unfolded.block(t, k * C, 1, C) = input.value().row(t + k);
    Matrix v = unfolded * weights.value();
    v.rowwise() += bias.value().row(0);
    Tensor out(std::move(v));
    record_op(Op::conv1d, {input, weights, bias}, out,
              [input, weights, bias, unfolded, width, windows, C](const Matrix& g) {
                  if (weights.requires_grad()) acc(weights, unfolded.transpose() * g);
                  if (bias.requires_grad()) acc(bias, g.colwise().sum());
                  if (input.requires_grad()) {
                      Matrix gu = g * weights.value().transpose();
                      Matrix gi = Matrix::Zero(input.rows(), C);
                      for (Index t = 0; t < windows; ++t)
                          for (int k = 0; k < width; ++k) gi.row(t + k) += gu.block(t, k * C, 1, C);
                      acc(input, gi);
                  }
              });
    return out;
}

Tensor max_over_time(const Tensor& a) {
    if (a.rows() < 1) shape_fail(Op::max_over_time, {&a}, "empty input");
    Matrix v(1, a.cols());
    std::vector<Index> arg(static_cast<std::size_t>(a.cols()));
    for (Index c = 0; c < a.cols(); ++c) {
        Index r = 0;
        v(0, c) = a.value().col(c).maxCoeff(&r);
        arg[static_cast<std::size_t>(c)] = r;
    }
    Tensor out(std::move(v));
    record_op(Op::max_over_time, {a}, out, [a, arg](const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (Index c = 0; c < a.cols(); ++c) full(arg[static_cast<std::size_t>(c)], c) = g(0, c);
        acc(a, full);
    });
    return out;
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64* rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!rng || rate == 0.0) return a;
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(a.rows(), a.cols());
    const double s = 1.0 / (1.0 - rate);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : 0.0;
    Tensor out(a.value().cwiseProduct(mask));
    record_op(Op::dropout, {a}, out, [a, mask](const Matrix& g) { acc(a, g.cwiseProduct(mask)); });
    return out;
}

namespace {
Matrix softmax_rows(const Matrix& x) {
    Matrix y = x.colwise() - x.rowwise().maxCoeff();
    y = y.array().exp().matrix();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
}
}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
    if (a.value().hasNaN()) throw std::domain_error("softmax: NaN input");
    Matrix y = axis == 1 ? softmax_rows(a.value()) : Matrix(softmax_rows(a.value().transpose()).transpose());
    Tensor out(y);
    record_op(Op::softmax, {a}, out, [a, y, axis](const Matrix& g) {
        Matrix gy = g.cwiseProduct(y);
        Matrix gx;
        if (axis == 1)
            gx = gy - (y.array().colwise() * gy.rowwise().sum().array()).matrix();
        else
            gx = gy - (y.array().rowwise() * gy.colwise().sum().array()).matrix();
        acc(a, gx);
    });
    return out;
}

Tensor logsumexp(const Tensor& a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("logsumexp: axis must be 0 or 1");
    Matrix x = axis == 1 ? a.value() : Matrix(a.value().transpose());
    Eigen::VectorXd m = x.rowwise().maxCoeff();
    Eigen::VectorXd lse(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        if (!std::isfinite(m(r))) {
            lse(r) = m(r);
            continue;
        }
        lse(r) = m(r) + std::log((x.row(r).array() - m(r)).exp().sum());
    }
    Matrix v = axis == 1 ? Matrix(lse) : Matrix(lse.transpose());
    Tensor out(v);
    record_op(Op::logsumexp, {a}, out, [a, v, axis](const Matrix& g) {
        Matrix gx(a.rows(), a.cols());
        for (Index r = 0; r < a.rows(); ++r)
            for (Index c = 0; c < a.cols(); ++c) {
                const double red = axis == 1 ? v(r, 0) : v(0, c);
                const double gr = axis == 1 ? g(r, 0) : g(0, c);
                gx(r, c) = gr * std::exp(a.value()(r, c) - red);
            }
        acc(a, gx);
    });
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out(Matrix::Constant(1, 1, a.value().sum()));
    record_op(Op::sum, {a}, out, [a](const Matrix& g) {
        acc(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
    return out;
}

Tensor sum_squares(const Tensor& a) {
    Tensor out(Matrix::Constant(1, 1, a.value().squaredNorm()));
    record_op(Op::sum_squares, {a}, out, [a](const Matrix& g) { acc(a, 2.0 * g(0, 0) * a.value()); });
    return out;
}

Tensor pick(const Tensor& a, std::span<const std::pair<Index, Index>> entries) {
    double s = 0.0;
    for (const auto& [r, c] : entries) {
        if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols())
            throw std::out_of_range("pick: entry (" + std::to_string(r) + "," + std::to_string(c) +
                                    ") out of range for " + a.shape_string());
        s += a.value()(r, c);
    }
    Tensor out(Matrix::Constant(1, 1, s));
    std::vector<std::pair<Index, Index>> saved(entries.begin(), entries.end());
    record_op(Op::pick, {a}, out, [a, saved](const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (const auto& [r, c] : saved) full(r, c) += g(0, 0);
        acc(a, full);
    });
    return out;
}

}  // namespace crfasn::ad
