#pragma once
// Analytic cooperative games used to validate the estimators end to end.

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"

namespace stii {

enum class ToyKind { linear, unanimity, majority, pairwise_product, decaying_interaction };

struct ToyGameSpec {
    ToyKind kind = ToyKind::linear;
    std::size_t n_features = 0;
    std::vector<double> weights;                    // linear
    std::vector<std::size_t> required;              // unanimity
    std::size_t threshold = 0;                      // majority
    std::vector<std::vector<double>> weight_matrix;  // pairwise_product, upper triangle used
    double rate = 1.0;                              // decaying_interaction
    // Dimension d of the output is output_scales[d] * v(S). Defaults to {1}.
    std::vector<double> output_scales{1.0};

    std::size_t output_dim() const noexcept { return output_scales.size(); }

    static ToyGameSpec linear_game(std::vector<double> weights);
    static ToyGameSpec unanimity_game(std::size_t n, std::vector<std::size_t> required);
    static ToyGameSpec majority_game(std::size_t n, std::size_t threshold);
    static ToyGameSpec pairwise_product_game(std::vector<std::vector<double>> weight_matrix);
    static ToyGameSpec decaying_interaction_game(std::size_t n, double rate);
};

// Checks the spec's invariants; throws InvalidArgument.
void validate_toy_spec(const ToyGameSpec& spec);

ToyGameSpec toy_spec_from_json(const nlohmann::json& j);
nlohmann::json toy_spec_to_json(const ToyGameSpec& spec);

// Scalar game value v(S) before output scaling.
double toy_game_value(const ToyGameSpec& spec, const CoalitionMask& mask);
ValueVector toy_game_evaluate(const ToyGameSpec& spec, const CoalitionMask& mask);

}  // namespace stii
