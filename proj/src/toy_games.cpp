#include "stii/toy_games.hpp"

#include <cmath>
#include <string>

#include "stii/error.hpp"

namespace stii {

using nlohmann::json;

ToyGameSpec ToyGameSpec::linear_game(std::vector<double> weights) {
    ToyGameSpec s;
    s.kind = ToyKind::linear;
    s.n_features = weights.size();
    s.weights = std::move(weights);
    return s;
}

ToyGameSpec ToyGameSpec::unanimity_game(std::size_t n, std::vector<std::size_t> required) {
    ToyGameSpec s;
    s.kind = ToyKind::unanimity;
    s.n_features = n;
    s.required = std::move(required);
    return s;
}

ToyGameSpec ToyGameSpec::majority_game(std::size_t n, std::size_t threshold) {
    ToyGameSpec s;
    s.kind = ToyKind::majority;
    s.n_features = n;
    s.threshold = threshold;
    return s;
}

ToyGameSpec ToyGameSpec::pairwise_product_game(std::vector<std::vector<double>> weight_matrix) {
    ToyGameSpec s;
    s.kind = ToyKind::pairwise_product;
    s.n_features = weight_matrix.size();
    s.weight_matrix = std::move(weight_matrix);
    return s;
}

ToyGameSpec ToyGameSpec::decaying_interaction_game(std::size_t n, double rate) {
    ToyGameSpec s;
    s.kind = ToyKind::decaying_interaction;
    s.n_features = n;
    s.rate = rate;
    return s;
}

void validate_toy_spec(const ToyGameSpec& s) {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, "toy game: " + msg); };
    if (s.n_features < 2) fail("n_features must be >= 2");
    if (s.output_scales.empty()) fail("output_scales must be non-empty");
    for (double c : s.output_scales) {
        if (!std::isfinite(c)) fail("output_scales must be finite");
    }
    switch (s.kind) {
        case ToyKind::linear:
            if (s.weights.size() != s.n_features) fail("linear weights length must equal n_features");
            break;
        case ToyKind::unanimity:
            if (s.required.empty()) fail("unanimity required set must be non-empty");
            for (auto i : s.required) {
                if (i >= s.n_features) fail("unanimity required set must be a subset of the features");
            }
            break;
        case ToyKind::majority:
            break;
        case ToyKind::pairwise_product:
            if (s.weight_matrix.size() != s.n_features) fail("weight matrix must be n_features x n_features");
            for (const auto& row : s.weight_matrix) {
                if (row.size() != s.n_features) fail("weight matrix must be square");
            }
            break;
        case ToyKind::decaying_interaction:
            if (!std::isfinite(s.rate) || s.rate < 0.0) fail("rate must be finite and non-negative");
            break;
    }
}

namespace {

const char* kind_name(ToyKind k) {
    switch (k) {
        case ToyKind::linear: return "linear";
        case ToyKind::unanimity: return "unanimity";
        case ToyKind::majority: return "majority";
        case ToyKind::pairwise_product: return "pairwise_product";
        case ToyKind::decaying_interaction: return "decaying_interaction";
    }
    return "linear";
}

}  // namespace

ToyGameSpec toy_spec_from_json(const json& j) {
    try {
        ToyGameSpec s;
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "linear") {
            s.kind = ToyKind::linear;
            s.weights = j.at("weights").get<std::vector<double>>();
            s.n_features = j.value("n_features", s.weights.size());
        } else if (kind == "unanimity") {
            s.kind = ToyKind::unanimity;
            s.required = j.at("required").get<std::vector<std::size_t>>();
            s.n_features = j.at("n_features").get<std::size_t>();
        } else if (kind == "majority") {
            s.kind = ToyKind::majority;
            s.threshold = j.at("threshold").get<std::size_t>();
            s.n_features = j.at("n_features").get<std::size_t>();
        } else if (kind == "pairwise_product") {
            s.kind = ToyKind::pairwise_product;
            s.weight_matrix = j.at("weights").get<std::vector<std::vector<double>>>();
            s.n_features = j.value("n_features", s.weight_matrix.size());
        } else if (kind == "decaying_interaction") {
            s.kind = ToyKind::decaying_interaction;
            s.rate = j.value("rate", 1.0);
            s.n_features = j.at("n_features").get<std::size_t>();
        } else {
            throw Error(ErrorCode::InvalidArgument, "unknown toy game kind '" + kind + "'");
        }
        if (auto it = j.find("output_scales"); it != j.end()) s.output_scales = it->get<std::vector<double>>();
        validate_toy_spec(s);
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("toy game spec: ") + e.what());
    }
}

json toy_spec_to_json(const ToyGameSpec& s) {
    json j;
    j["kind"] = kind_name(s.kind);
    j["n_features"] = s.n_features;
    switch (s.kind) {
        case ToyKind::linear: j["weights"] = s.weights; break;
        case ToyKind::unanimity: j["required"] = s.required; break;
        case ToyKind::majority: j["threshold"] = s.threshold; break;
        case ToyKind::pairwise_product: j["weights"] = s.weight_matrix; break;
        case ToyKind::decaying_interaction: j["rate"] = s.rate; break;
    }
    j["output_scales"] = s.output_scales;
    return j;
}

double toy_game_value(const ToyGameSpec& s, const CoalitionMask& mask) {
    switch (s.kind) {
        case ToyKind::linear: {
            double v = 0.0;
            for (std::size_t i = 0; i < s.n_features; ++i) {
                if (mask.test(i)) v += s.weights[i];
            }
            return v;
        }
        case ToyKind::unanimity:
            for (auto i : s.required) {
                if (!mask.test(i)) return 0.0;
            }
            return 1.0;
        case ToyKind::majority:
            return mask.count() >= s.threshold ? 1.0 : 0.0;
        case ToyKind::pairwise_product: {
            double v = 0.0;
            for (std::size_t i = 0; i < s.n_features; ++i) {
                if (!mask.test(i)) continue;
                for (std::size_t j = i + 1; j < s.n_features; ++j) {
                    if (mask.test(j)) v += s.weight_matrix[i][j];
                }
            }
            return v;
        }
        case ToyKind::decaying_interaction: {
            // Pair (i, j) contributes exp(-rate * (j - i)) when both are present.
            double v = 0.0;
            for (std::size_t i = 0; i < s.n_features; ++i) {
                if (!mask.test(i)) continue;
                for (std::size_t j = i + 1; j < s.n_features; ++j) {
                    if (mask.test(j)) v += std::exp(-s.rate * static_cast<double>(j - i));
                }
            }
            return v;
        }
    }
    return 0.0;
}

ValueVector toy_game_evaluate(const ToyGameSpec& s, const CoalitionMask& mask) {
    const double v = toy_game_value(s, mask);
    ValueVector out(s.output_scales.size());
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = s.output_scales[d] * v;
    return out;
}

}  // namespace stii
