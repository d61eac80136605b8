#pragma once

// Dense reverse-mode differentiation over Eigen matrices.
//
// Every value is a 2-D double matrix. Vectors are 1 x n rows. Operations run
// eagerly; when a Tape is active on the current thread and any input requires
// a gradient, the operation is appended to that tape together with its
// backward rule. Tape::backward then walks the records in reverse.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crfasn {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace ad {

enum class Op {
    matmul,
    add,
    sub,
    mul,
    scale,
    concat,
    transpose,
    slice,
    tanh,
    sigmoid,
    exp,
    log,
    gather,
    conv1d,
    max_over_time,
    dropout,
    softmax,
    logsumexp,
    sum,
    sum_squares,
    pick,
    crf_log_partition,
};

std::string_view op_name(Op op);

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
};

/// Shared handle to a node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Matrix value, bool requires_grad = false);

    static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
    static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    Matrix& mutable_grad() { return node_->grad; }
    bool has_grad() const { return node_->grad.size() != 0; }
    bool requires_grad() const { return node_->requires_grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double item() const;
    std::string shape_string() const;

    void zero_grad();
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    void accumulate_grad(const Matrix& g);

    const Node* id() const { return node_.get(); }

private:
    std::shared_ptr<Node> node_;
};

struct Record {
    Op kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(const Matrix& grad_out)> backward;
};

class Tape {
public:
    void record(Record r) { records_.push_back(std::move(r)); }
    void backward(Tensor loss);
    void clear() { records_.clear(); }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    std::vector<Op> kinds() const;

private:
    std::vector<Record> records_;
};

/// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// Primitive operations.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum. `b` may also be a 1 x cols row, a rows x 1 column or a
/// 1 x 1 scalar, broadcast over `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor transpose(const Tensor& a);
Tensor slice(const Tensor& a, Index row, Index nrows, Index col, Index ncols);
Tensor row(const Tensor& a, Index r);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Rows of `table` selected by `ids`, in order.
Tensor gather(const Tensor& table, std::span<const int> ids);
/// Valid 1-D convolution over rows of `input` (T x C) with `width`-row
/// windows. `weights` is (width*C) x F, `bias` is 1 x F. Output (T-width+1) x F.
Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, int width);
/// Column-wise max over rows: T x F -> 1 x F.
Tensor max_over_time(const Tensor& a);
/// Inverted dropout. Identity when `rng` is null or rate is 0.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64* rng);
Tensor softmax(const Tensor& a, int axis);
/// Reduces `axis` with log-sum-exp (axis 0 -> 1 x cols, axis 1 -> rows x 1).
Tensor logsumexp(const Tensor& a, int axis);
Tensor sum(const Tensor& a);
Tensor sum_squares(const Tensor& a);
/// Sum of the listed (row, col) entries.
Tensor pick(const Tensor& a, std::span<const std::pair<Index, Index>> entries);

namespace testing {
/// Scales the incoming gradient of every `op` record by `factor` during
/// backward. Used to check that gradient verification catches broken rules.
class BackwardFault {
public:
    BackwardFault(Op op, double factor);
    ~BackwardFault();
    BackwardFault(const BackwardFault&) = delete;
    BackwardFault& operator=(const BackwardFault&) = delete;
};
std::optional<std::pair<Op, double>> active_fault();
}  // namespace testing

/// Appends a record if a tape is active and any input needs a gradient.
/// Marks `out` as requiring a gradient in that case. Returns true if recorded.
bool record_op(Op kind, std::vector<Tensor> inputs, Tensor& out,
               std::function<void(const Matrix&)> backward);

}  // namespace ad
}  // namespace crfasn
