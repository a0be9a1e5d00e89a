#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2u/model.hpp"

namespace p2u {

/// Dense ReLU network: hidden layers ReLU-activated, final layer linear.
/// Weights come from a TensorModel by naming convention "layer{i}.weight"
/// (shape [out, in], row-major) and "layer{i}.bias" (shape [out]).
struct MlpSpec {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> layers;  // (in, out)

    static MlpSpec from_dims(const std::vector<std::uint32_t>& dims);

    std::uint32_t input_dim() const;
    std::uint32_t output_dim() const;
    std::string weight_name(std::size_t layer) const;
    std::string bias_name(std::size_t layer) const;

    /// Throws InvalidModelError unless every referenced tensor exists with
    /// the right shape and consecutive dims chain.
    void validate_against(const TensorModel& weights) const;
};

/// Deterministic forward pass: float32 storage, float64 accumulation,
/// fixed accumulation order.
std::vector<float> forward(const MlpSpec& spec, const TensorModel& weights,
                           std::span<const float> x);

/// Pure float64 weights in TensorModel tensor order; the verifier-side
/// representation used by the Taylor checks.
using WeightsF64 = std::vector<std::vector<double>>;

WeightsF64 to_f64(const TensorModel& weights);

/// Forward pass entirely in float64 (verifier path).
std::vector<double> forward_f64(const MlpSpec& spec, const WeightsF64& weights,
                                std::span<const double> x);

struct Divergence {
    double max_abs = 0.0;   // max over batch of per-sample max-abs logit gap
    double mean_abs = 0.0;  // mean over batch of per-sample max-abs logit gap
};

Divergence output_divergence(const MlpSpec& spec, const TensorModel& wa, const TensorModel& wb,
                             const std::vector<std::vector<float>>& xs);

struct LabeledDataset {
    std::vector<std::vector<float>> features;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return features.size(); }
    std::uint32_t class_count() const;
};

/// CSV rows of features with the class label in the last column. A header
/// row is optional and detected by non-numeric cells.
LabeledDataset load_csv_dataset(const std::filesystem::path& path);
void save_csv_dataset(const LabeledDataset& data, const std::filesystem::path& path);

/// Fraction of rows whose argmax(logits) equals the label; ties break to the
/// lowest class index.
double top1_accuracy(const MlpSpec& spec, const TensorModel& weights, const LabeledDataset& data);

struct TaylorPoint {
    double delta = 0.0;     // perturbation magnitude (relative units)
    double residual = 0.0;  // measured |R' - R_h| at this delta
};

struct TaylorCheckResult {
    bool within_noise = false;
    double slope = 0.0;  // log-log fit of residual vs delta
    std::vector<TaylorPoint> points;
};

/// Measures how the Taylor residual gap of the reconstructed proxy scales
/// with the weight gap. For each delta in a geometric family the low model
/// is W^h - delta*D, the update is coarsely quantized so the proxy does not
/// collapse onto W^h, and the residual
///   max_j | f(W')_j - f(W^h)_j - grad f(W^l) . (W' - W^h) |
/// is measured in float64 with a central-difference directional gradient.
/// Quadratic residual decay shows up as slope ~ 2.
TaylorCheckResult taylor_residual_check(const MlpSpec& spec, const TensorModel& high,
                                        std::span<const float> x, double base_delta,
                                        int octaves, std::uint32_t update_bitwidth,
                                        std::uint64_t seed);

/// Relative gap between f(W^h) - f(W^l) and its first-order Taylor term,
/// with the directional gradient taken by central finite differences
/// (step 1e-4) in float64.
double first_order_relative_gap(const MlpSpec& spec, const TensorModel& high,
                                std::span<const float> x, double delta, std::uint64_t seed);

/// Smallest hidden pre-activation magnitude relative to the RMS of its
/// layer. Small margins mean x sits near a ReLU kink.
double activation_margin(const MlpSpec& spec, const TensorModel& weights,
                         std::span<const float> x);

// --- Desk-scale fixtures -------------------------------------------------

TensorModel random_mlp_weights(const MlpSpec& spec, std::uint64_t seed, float scale = 1.0f);

/// Gaussian class blobs.
LabeledDataset make_blobs(std::uint32_t dims, std::uint32_t classes, std::size_t rows,
                          float spread, std::uint64_t seed);

/// Interleaved 2-D spirals; small margins make the decision boundary
/// sensitive to weight perturbation.
LabeledDataset make_spirals(std::uint32_t classes, std::size_t rows, float noise,
                            std::uint64_t seed);

struct FitOptions {
    int epochs = 200;
    float learning_rate = 0.05f;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

/// Tiny deterministic SGD fitter (softmax cross-entropy); exists to produce
/// non-trivial desk-scale classifiers for accuracy experiments.
TensorModel fit_classifier(const MlpSpec& spec, const LabeledDataset& data,
                           const FitOptions& options);

}  // namespace p2u
