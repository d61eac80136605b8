#include "crfasn/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "crfasn/errors.hpp"

namespace crfasn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

ad::Tensor ParamRegistry::add(std::string name, Matrix init, std::vector<int> frozen_rows) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    for (int r : frozen_rows) {
        if (r < 0 || r >= init.rows()) throw std::out_of_range("frozen row out of range for '" + name + "'");
        init.row(r).setZero();
    }
    Parameter p;
    p.name = name;
    p.accumulator = Matrix::Zero(init.rows(), init.cols());
    p.shadow = init;
    p.tensor = ad::Tensor::parameter(std::move(init));
    p.frozen_rows = std::move(frozen_rows);
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return params_.back().tensor;
}

Parameter& ParamRegistry::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return params_[it->second];
}

const Parameter& ParamRegistry::at(const std::string& name) const {
    return const_cast<ParamRegistry*>(this)->at(name);
}

ad::Tensor ParamRegistry::get(const std::string& name) const { return at(name).tensor; }

Index ParamRegistry::element_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.tensor.value().size();
    return n;
}

void ParamRegistry::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void ParamRegistry::mask_frozen() {
    for (auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (int r : p.frozen_rows) p.tensor.mutable_grad().row(r).setZero();
    }
}

ad::Tensor ParamRegistry::squared_norm() const {
    std::vector<ad::Tensor> terms;
    terms.reserve(params_.size());
    for (const auto& p : params_) terms.push_back(ad::sum_squares(p.tensor));
    return ad::sum(ad::concat(terms, 0));
}

double ParamRegistry::grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
        if (p.tensor.has_grad()) s += p.tensor.grad().squaredNorm();
    return std::sqrt(s);
}

void ParamRegistry::reset_shadows() {
    for (auto& p : params_) p.shadow = p.tensor.value();
}

ShadowScope::ShadowScope(ParamRegistry& reg) : reg_(reg) {
    for (auto& p : reg_.entries()) p.tensor.mutable_value().swap(p.shadow);
}

ShadowScope::~ShadowScope() {
    for (auto& p : reg_.entries()) p.tensor.mutable_value().swap(p.shadow);
}

namespace {

constexpr char magic[8] = {'C', 'R', 'F', 'A', 'S', 'N', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ParseError("checkpoint truncated");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& reg, const nlohmann::json& metadata,
                     bool shadows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(magic, sizeof magic);
    put<std::uint32_t>(out, Checkpoint::version);
    const std::string meta = metadata.dump();
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(reg.size()));
    for (const auto& p : reg.entries()) {
        const Matrix& m = shadows ? p.shadow : p.tensor.value();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        for (Index r = 0; r < m.rows(); ++r)
            for (Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char head[8];
    in.read(head, sizeof head);
    if (!in || std::memcmp(head, magic, sizeof magic) != 0) throw ParseError("not a checkpoint file: " + path.string());
    const auto ver = get<std::uint32_t>(in);
    if (ver != Checkpoint::version) throw ParseError("unsupported checkpoint version " + std::to_string(ver));
    Checkpoint ck;
    const auto meta_len = get<std::uint64_t>(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw ParseError("checkpoint truncated");
    ck.metadata = nlohmann::json::parse(meta);
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = get<std::uint64_t>(in);
        const auto cols = get<std::uint64_t>(in);
        Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
        for (Index r = 0; r < m.rows(); ++r)
            for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
        ck.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamRegistry& reg) {
    if (ckpt.tensors.size() != reg.size())
        throw ValidationError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                              std::to_string(reg.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        if (!reg.contains(name)) throw ValidationError("checkpoint tensor '" + name + "' is not a model parameter");
        auto& p = reg.at(name);
        if (p.tensor.rows() != m.rows() || p.tensor.cols() != m.cols())
            throw ValidationError("checkpoint tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + ", model expects " + p.tensor.shape_string());
        p.tensor.mutable_value() = m;
        p.shadow = m;
    }
}

}  // namespace crfasn
