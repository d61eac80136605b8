#pragma once

// Synthetic dialogue corpora with a known generating process: a first-order
// Markov chain over acts, each act emitting one phrase from its own table.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crfasn/corpus.hpp"

namespace crfasn {

struct Phrase {
    double weight = 1.0;
    std::vector<std::string> tokens;
};

struct SyntheticSpec {
    std::vector<std::string> acts;
    Eigen::MatrixXd transition;           // row-stochastic, rows = current act
    Eigen::RowVectorXd initial;           // empty -> stationary distribution
    std::vector<std::vector<Phrase>> phrases;  // per act
    int num_conversations = 100;
    int min_len = 1;
    int max_len = 10;
    std::uint64_t seed = 42;

    int num_acts() const { return static_cast<int>(acts.size()); }
    void validate() const;
};

/// Key-value config:
///   acts = a b c
///   transition.<act> = p_1 ... p_K     (explicit rows), or
///   self_transition = s                (diagonal s, rest spread evenly), or
///   stationary = pi_1 ... pi_K  with  persistence = s   (s*I + (1-s)*1*pi)
///   initial = p_1 ... p_K              (optional)
///   phrase.<act> = weight tok tok ...  (repeatable)
///   num_conversations, min_len, max_len, seed
SyntheticSpec parse_synthetic_spec(std::istream& in);
SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path);

/// s*I + (1-s)*1*pi^T. Its stationary distribution is exactly pi.
Eigen::MatrixXd mixing_transition(const Eigen::RowVectorXd& pi, double s);
Eigen::RowVectorXd stationary_distribution(const Eigen::MatrixXd& transition);

class GeneratorModel {
public:
    GeneratorModel() = default;
    explicit GeneratorModel(const SyntheticSpec& spec);

    const std::vector<std::string>& acts() const { return acts_; }
    const Eigen::MatrixXd& transition() const { return transition_; }
    const Eigen::RowVectorXd& initial() const { return initial_; }

    /// log p(tokens | act); phrases are matched by exact token sequence.
    double emission_log_prob(int act, const std::vector<std::string>& tokens) const;
    /// Most probable act sequence under the true model (act ids index acts()).
    std::vector<int> decode(const Conversation& conv) const;
    int act_id(const std::string& name) const;

    nlohmann::json to_json() const;
    static GeneratorModel from_json(const nlohmann::json& j);

private:
    std::vector<std::string> acts_;
    Eigen::MatrixXd transition_;
    Eigen::RowVectorXd initial_;
    std::vector<std::vector<Phrase>> phrases_;  // weights normalized per act
};

std::pair<std::vector<Conversation>, GeneratorModel> generate_synthetic(const SyntheticSpec& spec);

}  // namespace crfasn
