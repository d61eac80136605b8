#include "crfasn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "crfasn/crf_layer.hpp"

namespace crfasn {

using namespace ad;

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor()>& fn) { return fn().item(); }

std::vector<Index> sample_indices(Index size, int max_count, std::mt19937_64& rng) {
    std::vector<Index> idx(static_cast<std::size_t>(size));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (size > max_count) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(max_count));
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Builds a probe loss sum(op(inputs) * weights) for one primitive.
std::function<Tensor(std::vector<Tensor>&)> probe_for(Op op, std::vector<Matrix>& inputs, std::mt19937_64& rng) {
    auto weighted = [w = std::make_shared<Matrix>()](Tensor t) mutable {
        if (w->size() == 0) {
            std::mt19937_64 local(7);
            *w = random_matrix(t.rows(), t.cols(), local);
        }
        return sum(mul(t, Tensor::constant(*w)));
    };
    switch (op) {
        case Op::matmul:
            inputs = {random_matrix(2, 3, rng), random_matrix(3, 2, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(matmul(x[0], x[1])); };
        case Op::add:
            inputs = {random_matrix(2, 3, rng), random_matrix(1, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(add(x[0], x[1])); };
        case Op::sub:
            inputs = {random_matrix(2, 3, rng), random_matrix(2, 1, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(sub(x[0], x[1])); };
        case Op::mul:
            inputs = {random_matrix(2, 3, rng), random_matrix(2, 3, rng)};
            return [](std::vector<Tensor>& x) { return sum(mul(x[0], x[1])); };
        case Op::scale:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(scale(x[0], 1.7)); };
        case Op::concat:
            inputs = {random_matrix(2, 3, rng), random_matrix(1, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(concat({x[0], x[1]}, 0)); };
        case Op::transpose:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(transpose(x[0])); };
        case Op::slice:
            inputs = {random_matrix(3, 4, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(slice(x[0], 1, 2, 1, 2)); };
        case Op::tanh:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(ad::tanh(x[0])); };
        case Op::sigmoid:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(sigmoid(x[0])); };
        case Op::exp:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(ad::exp(x[0])); };
        case Op::log:
            inputs = {random_matrix(2, 3, rng, 0.5, 2.0)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(ad::log(x[0])); };
        case Op::gather:
            inputs = {random_matrix(4, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable {
                const int ids[] = {1, 3, 1};
                return weighted(gather(x[0], ids));
            };
        case Op::conv1d:
            inputs = {random_matrix(5, 2, rng), random_matrix(4, 3, rng), random_matrix(1, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(conv1d(x[0], x[1], x[2], 2)); };
        case Op::max_over_time: {
            Matrix m(4, 3);
            m << 0.1, 0.9, -0.3, 0.7, 0.2, 0.5, -0.4, 0.0, 0.8, 0.3, -0.6, 0.1;
            inputs = {m};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(max_over_time(x[0])); };
        }
        case Op::dropout:
            inputs = {random_matrix(3, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable {
                std::mt19937_64 local(11);
                return weighted(dropout(x[0], 0.3, &local));
            };
        case Op::softmax:
            inputs = {random_matrix(2, 3, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(softmax(x[0], 1)); };
        case Op::logsumexp:
            inputs = {random_matrix(3, 2, rng)};
            return [weighted](std::vector<Tensor>& x) mutable { return weighted(logsumexp(x[0], 0)); };
        case Op::sum:
            inputs = {random_matrix(2, 3, rng)};
            return [](std::vector<Tensor>& x) { return scale(sum(x[0]), 1.3); };
        case Op::sum_squares:
            inputs = {random_matrix(2, 3, rng)};
            return [](std::vector<Tensor>& x) { return sum_squares(x[0]); };
        case Op::pick:
            inputs = {random_matrix(2, 3, rng)};
            return [](std::vector<Tensor>& x) {
                const std::pair<Index, Index> e[] = {{0, 1}, {1, 2}, {0, 1}};
                return pick(x[0], e);
            };
        case Op::crf_log_partition:
            inputs = {random_matrix(3, 2, rng), random_matrix(2, 2, rng)};
            return [](std::vector<Tensor>& x) { return crf_log_partition(x[0], x[1]); };
    }
    throw std::logic_error("no probe for op");
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParamRegistry& params, const GradCheckOptions& opts) {
    // Determinism: two untaped evaluations must agree bit for bit.
    const double base = evaluate(loss_fn);
    if (evaluate(loss_fn) != base) throw std::runtime_error("grad_check: loss closure is not deterministic");

    params.zero_grad();
    std::vector<Op> kinds;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        kinds = tape.kinds();
        tape.backward(loss);
    }

    std::mt19937_64 rng(opts.seed);
    GradCheckReport report;
    for (auto& p : params.entries()) {
        GradCheckEntry entry{p.name, 0, 0, 0};
        Matrix analytic = p.tensor.has_grad() ? p.tensor.grad() : Matrix::Zero(p.tensor.rows(), p.tensor.cols());
        Matrix& value = p.tensor.mutable_value();
        for (Index i : sample_indices(value.size(), opts.max_per_tensor, rng)) {
            const double orig = value.data()[i];
            value.data()[i] = orig + opts.eps;
            const double up = evaluate(loss_fn);
            value.data()[i] = orig - opts.eps;
            const double down = evaluate(loss_fn);
            value.data()[i] = orig;
            const double numeric = (up - down) / (2 * opts.eps);
            const double a = analytic.data()[i];
            entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
            entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric, opts.floor));
            ++entry.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        if (entry.max_rel_error > opts.tol) report.failing_params.push_back(p.name);
        report.entries.push_back(std::move(entry));
    }
    params.zero_grad();
    report.passed = report.failing_params.empty();
    if (!report.passed) report.failing_ops = audit_ops(kinds, opts);
    return report;
}

std::vector<std::string> audit_ops(std::span<const Op> kinds, const GradCheckOptions& opts) {
    std::set<Op> distinct(kinds.begin(), kinds.end());
    std::vector<std::string> failing;
    std::mt19937_64 rng(opts.seed + 1);
    for (Op op : distinct) {
        std::vector<Matrix> inputs;
        auto probe = probe_for(op, inputs, rng);
        std::vector<Tensor> leaves;
        for (auto& m : inputs) leaves.push_back(Tensor::parameter(m));
        {
            Tape tape;
            TapeScope scope(tape);
            Tensor loss = probe(leaves);
            tape.backward(loss);
        }
        double worst = 0;
        for (auto& leaf : leaves) {
            Matrix analytic = leaf.has_grad() ? leaf.grad() : Matrix::Zero(leaf.rows(), leaf.cols());
            Matrix& v = leaf.mutable_value();
            for (Index i = 0; i < v.size(); ++i) {
                const double orig = v.data()[i];
                v.data()[i] = orig + opts.eps;
                const double up = probe(leaves).item();
                v.data()[i] = orig - opts.eps;
                const double down = probe(leaves).item();
                v.data()[i] = orig;
                worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2 * opts.eps), opts.floor));
            }
        }
        if (worst > opts.tol) failing.emplace_back(op_name(op));
    }
    return failing;
}

}  // namespace crfasn
