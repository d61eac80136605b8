#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crfasn/autodiff.hpp"

namespace crfasn {

struct Parameter {
    std::string name;
    ad::Tensor tensor;
    Matrix accumulator;  // running sum of squared gradients
    Matrix shadow;       // exponential moving average of the value
    std::vector<int> frozen_rows;  // rows held at zero (padding embeddings)
};

/// Named, ordered collection of trainable tensors and their optimizer buffers.
class ParamRegistry {
public:
    ad::Tensor add(std::string name, Matrix init, std::vector<int> frozen_rows = {});
    ad::Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;

    std::vector<Parameter>& entries() { return params_; }
    const std::vector<Parameter>& entries() const { return params_; }
    std::size_t size() const { return params_.size(); }
    Index element_count() const;

    void zero_grad();
    /// Clears gradient rows of frozen rows.
    void mask_frozen();
    /// lambda-free L2 term: sum of squares of every parameter, recorded on the tape.
    ad::Tensor squared_norm() const;
    double grad_norm() const;
    void reset_shadows();

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Swaps every parameter value with its EMA shadow for the scope's lifetime.
class ShadowScope {
public:
    explicit ShadowScope(ParamRegistry& reg);
    ~ShadowScope();
    ShadowScope(const ShadowScope&) = delete;
    ShadowScope& operator=(const ShadowScope&) = delete;

private:
    ParamRegistry& reg_;
};

// Checkpoint file layout (all integers little-endian):
//
//   magic     8 bytes  "CRFASNCK"
//   version   u32      1
//   meta_len  u64      byte length of the metadata JSON
//   metadata  meta_len bytes, UTF-8 JSON
//   count     u32      number of tensors
//   count x { name_len u32, name bytes, rows u64, cols u64,
//             rows*cols f64 values in row-major order }
struct Checkpoint {
    static constexpr std::uint32_t version = 1;
    nlohmann::json metadata;
    std::vector<std::pair<std::string, Matrix>> tensors;
};

/// Writes parameter values, or their EMA shadows when `shadows` is set.
void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& reg, const nlohmann::json& metadata,
                     bool shadows);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies tensors into `reg`; names and shapes must match exactly.
void apply_checkpoint(const Checkpoint& ckpt, ParamRegistry& reg);

}  // namespace crfasn
