#pragma once

#include "hdae/code.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hdae {

/// Weight vector of a linear attribute classifier over flattened codes.
struct AttributeDirection {
    std::string name;
    std::vector<double> n; // length L*d, level-major
    double bias = 0.0;
    int64_t levels = 1;
    int64_t dim = 0;
    double train_accuracy = 0.0; // held-out accuracy at fit time
    std::vector<double> n_hat;   // cached normalize_direction(n)

    int64_t size() const { return static_cast<int64_t>(n.size()); }
};

/// Direction restricted to the k largest normalized weights.
struct TruncatedDirection {
    AttributeDirection base;
    int64_t k = 0;
    std::vector<double> n_prime;
    std::vector<int64_t> support; // ascending indices with n_prime != kept-zero
};

struct ClassifierOptions {
    double l2 = 1e-3;              // weight on 0.5 * |w|^2 added to the mean log-loss
    int64_t max_iterations = 300;
    double holdout_fraction = 0.2; // rows assigned by content hash
};

/// Flattens a batch of codes into a [N, L*d] double matrix.
torch::Tensor flatten_codes(const HierarchicalCode& codes);

/// L2-regularized logistic regression. Requires at least two examples of
/// each class; throws std::invalid_argument otherwise.
AttributeDirection train_classifier(const HierarchicalCode& codes, const std::vector<int>& labels,
                                    const std::string& name, const ClassifierOptions& opts = {});

/// n_hat_i = (|n_i| - min|n|) / (max|n| - min|n|); all zeros when max == min.
std::vector<double> normalize_direction(std::span<const double> n);

/// Keeps n_i where n_hat_i ranks in the top k (ties broken by ascending index).
TruncatedDirection truncate_direction(const AttributeDirection& dir, int64_t k);

/// flatten(code) + alpha * n' / |n'|, reshaped back. Zero n' leaves the code unchanged.
HierarchicalCode manipulate(const HierarchicalCode& code, const TruncatedDirection& dir, double alpha);

/// Classifier logit per batch element: n . flatten(code) + bias.
std::vector<double> attribute_logits(const AttributeDirection& dir, const HierarchicalCode& code);

struct LevelAttribution {
    std::vector<double> mass; // per level, sums to 1 (all zero if n_hat is)
    int64_t argmax = 0;
};
LevelAttribution level_attribution(const AttributeDirection& dir);

/// Right-continuous empirical CDF support points (value, fraction <= value).
std::vector<std::pair<double, double>> ecdf(std::span<const double> values);

/// MSE over pixels where mask == 0 (mask is [H, W] or broadcastable, 1 =
/// permitted to change). An all-ones mask yields 0.
double fidelity(const torch::Tensor& original, const torch::Tensor& edited, const torch::Tensor& mask);

/// Held-out accuracy of a classifier trained only on the slots of
/// `level_subset` (other slots zeroed).
double linear_probe(const HierarchicalCode& codes, const std::vector<int>& labels,
                    const std::vector<int64_t>& level_subset, const ClassifierOptions& opts = {});

/// Registry file: JSON array of {name, n, bias, L, d, train_accuracy}.
void save_registry(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs);
std::vector<AttributeDirection> load_registry(const std::filesystem::path& path);

/// CSV exports for plotting: attribute,level,slot,n_hat and attribute,value,fraction.
void write_heatmap_csv(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs);
void write_ecdf_csv(const std::filesystem::path& path, const std::vector<AttributeDirection>& dirs);

} // namespace hdae
