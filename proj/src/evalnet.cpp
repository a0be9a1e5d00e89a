#include "p2u/evalnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "p2u/errors.hpp"
#include "p2u/quant.hpp"
#include "p2u/update.hpp"

namespace p2u {
namespace {

std::vector<float> relu(std::vector<float> v) {
    for (float& x : v) x = x > 0.0f ? x : 0.0f;
    return v;
}

/// One dense layer in float32 with float64 accumulation.
std::vector<float> dense_f32(std::span<const float> w, std::span<const float> b,
                             std::span<const float> x, std::uint32_t in, std::uint32_t out) {
    std::vector<float> y(out);
    for (std::uint32_t o = 0; o < out; ++o) {
        double acc = static_cast<double>(b[o]);
        const float* row = w.data() + static_cast<std::size_t>(o) * in;
        for (std::uint32_t k = 0; k < in; ++k)
            acc += static_cast<double>(row[k]) * static_cast<double>(x[k]);
        y[o] = static_cast<float>(acc);
    }
    return y;
}

struct LayerView {
    const Tensor* weight;
    const Tensor* bias;
};

std::vector<LayerView> layer_views(const MlpSpec& spec, const TensorModel& weights) {
    spec.validate_against(weights);
    std::vector<LayerView> views;
    views.reserve(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        views.push_back({weights.find(spec.weight_name(i)), weights.find(spec.bias_name(i))});
    return views;
}

std::mt19937_64 seeded(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Per-tensor random direction scaled by the tensor's own magnitude, so a
/// given delta perturbs every layer proportionally.
WeightsF64 perturbation_direction(const TensorModel& model, std::uint64_t seed) {
    auto rng = seeded(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    WeightsF64 dir;
    dir.reserve(model.tensors.size());
    for (const auto& t : model.tensors) {
        double max_abs = 0.0;
        for (float v : t.values) max_abs = std::max(max_abs, std::fabs(double{v}));
        if (max_abs == 0.0) max_abs = 1.0;
        std::vector<double> d(t.values.size());
        for (double& v : d) v = unit(rng) * max_abs;
        dir.push_back(std::move(d));
    }
    return dir;
}

TensorModel shift_f32(const TensorModel& base, const WeightsF64& dir, double scale) {
    TensorModel out = base;
    for (std::size_t i = 0; i < out.tensors.size(); ++i)
        for (std::size_t k = 0; k < out.tensors[i].values.size(); ++k)
            out.tensors[i].values[k] = static_cast<float>(
                static_cast<double>(base.tensors[i].values[k]) - scale * dir[i][k]);
    return out;
}

WeightsF64 axpy(const WeightsF64& base, const WeightsF64& v, double t) {
    WeightsF64 out = base;
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t k = 0; k < out[i].size(); ++k) out[i][k] += t * v[i][k];
    return out;
}

/// Directional derivative of every logit along v at w, by central
/// differences with parameter step h.
std::vector<double> fd_directional(const MlpSpec& spec, const WeightsF64& w, const WeightsF64& v,
                                   std::span<const double> x, double h) {
    const auto fp = forward_f64(spec, axpy(w, v, h), x);
    const auto fm = forward_f64(spec, axpy(w, v, -h), x);
    std::vector<double> g(fp.size());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = (fp[j] - fm[j]) / (2.0 * h);
    return g;
}

std::vector<double> widen(std::span<const float> x) {
    return std::vector<double>(x.begin(), x.end());
}

bool numeric_cell(const std::string& cell) {
    char* end = nullptr;
    std::strtod(cell.c_str(), &end);
    return end != cell.c_str() && *end == '\0';
}

}  // namespace

MlpSpec MlpSpec::from_dims(const std::vector<std::uint32_t>& dims) {
    if (dims.size() < 2) throw InvalidModelError("an MLP needs at least two dims");
    MlpSpec spec;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) spec.layers.push_back({dims[i], dims[i + 1]});
    return spec;
}

std::uint32_t MlpSpec::input_dim() const {
    if (layers.empty()) throw InvalidModelError("empty MLP spec");
    return layers.front().first;
}

std::uint32_t MlpSpec::output_dim() const {
    if (layers.empty()) throw InvalidModelError("empty MLP spec");
    return layers.back().second;
}

std::string MlpSpec::weight_name(std::size_t layer) const {
    return "layer" + std::to_string(layer) + ".weight";
}

std::string MlpSpec::bias_name(std::size_t layer) const {
    return "layer" + std::to_string(layer) + ".bias";
}

void MlpSpec::validate_against(const TensorModel& weights) const {
    if (layers.empty()) throw InvalidModelError("empty MLP spec");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
        if (layers[i].second != layers[i + 1].first)
            throw InvalidModelError("MLP dims do not chain at layer " + std::to_string(i));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto [in, out] = layers[i];
        const Tensor* w = weights.find(weight_name(i));
        if (!w) throw InvalidModelError("missing tensor " + weight_name(i));
        if (w->shape != std::vector<std::uint32_t>{out, in})
            throw InvalidModelError("bad shape for " + weight_name(i));
        const Tensor* b = weights.find(bias_name(i));
        if (!b) throw InvalidModelError("missing tensor " + bias_name(i));
        if (b->shape != std::vector<std::uint32_t>{out})
            throw InvalidModelError("bad shape for " + bias_name(i));
    }
}

std::vector<float> forward(const MlpSpec& spec, const TensorModel& weights,
                           std::span<const float> x) {
    if (x.size() != spec.input_dim()) throw InvalidModelError("input dim mismatch");
    const auto views = layer_views(spec, weights);
    std::vector<float> cur(x.begin(), x.end());
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto [in, out] = spec.layers[i];
        cur = dense_f32(views[i].weight->values, views[i].bias->values, cur, in, out);
        if (i + 1 < views.size()) cur = relu(std::move(cur));
    }
    return cur;
}

WeightsF64 to_f64(const TensorModel& weights) {
    WeightsF64 out;
    out.reserve(weights.tensors.size());
    for (const auto& t : weights.tensors)
        out.emplace_back(t.values.begin(), t.values.end());
    return out;
}

std::vector<double> forward_f64(const MlpSpec& spec, const WeightsF64& weights,
                                std::span<const double> x) {
    // Tensor order mirrors random_mlp_weights: weight then bias per layer.
    if (weights.size() != spec.layers.size() * 2)
        throw InvalidModelError("float64 weight count does not match spec");
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto [in, out] = spec.layers[i];
        const auto& w = weights[2 * i];
        const auto& b = weights[2 * i + 1];
        if (w.size() != static_cast<std::size_t>(in) * out || b.size() != out)
            throw InvalidModelError("float64 tensor size mismatch at layer " + std::to_string(i));
        std::vector<double> next(out);
        for (std::uint32_t o = 0; o < out; ++o) {
            double acc = b[o];
            for (std::uint32_t k = 0; k < in; ++k) acc += w[static_cast<std::size_t>(o) * in + k] * cur[k];
            next[o] = acc;
        }
        if (i + 1 < spec.layers.size())
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        cur = std::move(next);
    }
    return cur;
}

Divergence output_divergence(const MlpSpec& spec, const TensorModel& wa, const TensorModel& wb,
                             const std::vector<std::vector<float>>& xs) {
    Divergence d;
    if (xs.empty()) return d;
    double sum = 0.0;
    for (const auto& x : xs) {
        const auto fa = forward(spec, wa, x);
        const auto fb = forward(spec, wb, x);
        double gap = 0.0;
        for (std::size_t j = 0; j < fa.size(); ++j)
            gap = std::max(gap, std::fabs(static_cast<double>(fa[j]) - static_cast<double>(fb[j])));
        d.max_abs = std::max(d.max_abs, gap);
        sum += gap;
    }
    d.mean_abs = sum / static_cast<double>(xs.size());
    return d;
}

std::uint32_t LabeledDataset::class_count() const {
    std::uint32_t c = 0;
    for (std::uint32_t l : labels) c = std::max(c, l + 1);
    return c;
}

LabeledDataset load_csv_dataset(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset '" + path.string() + "'");
    LabeledDataset data;
    std::string line;
    bool first = true;
    std::size_t dim = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) throw FormatError("dataset rows need features and a label");
        if (first) {
            first = false;
            dim = cells.size() - 1;
            const bool header = !std::all_of(cells.begin(), cells.end(), numeric_cell);
            if (header) continue;
        }
        if (cells.size() != dim + 1) throw FormatError("ragged dataset row");
        std::vector<float> row(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            if (!numeric_cell(cells[i])) throw FormatError("non-numeric feature cell");
            row[i] = std::strtof(cells[i].c_str(), nullptr);
        }
        const double label = std::strtod(cells.back().c_str(), nullptr);
        if (!numeric_cell(cells.back()) || label < 0 || label != std::floor(label))
            throw FormatError("labels must be non-negative integers");
        data.features.push_back(std::move(row));
        data.labels.push_back(static_cast<std::uint32_t>(label));
    }
    return data;
}

void save_csv_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.precision(9);
    for (std::size_t r = 0; r < data.features.size(); ++r) {
        for (float v : data.features[r]) f << v << ',';
        f << data.labels[r] << '\n';
    }
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

double top1_accuracy(const MlpSpec& spec, const TensorModel& weights,
                     const LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    if (data.class_count() > spec.output_dim())
        throw InvalidModelError("dataset has more classes than the net has outputs");
    std::size_t hits = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        if (data.features[r].size() != spec.input_dim())
            throw InvalidModelError("dataset feature dim mismatch");
        const auto logits = forward(spec, weights, data.features[r]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j)
            if (logits[j] > logits[best]) best = j;  // ties keep the lowest index
        if (best == data.labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

TaylorCheckResult taylor_residual_check(const MlpSpec& spec, const TensorModel& high,
                                        std::span<const float> x, double base_delta,
                                        int octaves, std::uint32_t update_bitwidth,
                                        std::uint64_t seed) {
    spec.validate_against(high);
    const WeightsF64 h64 = to_f64(high);
    const auto x64 = widen(x);
    const auto f_high = forward_f64(spec, h64, x64);

    double f_mag = 1.0;
    for (double v : f_high) f_mag = std::max(f_mag, std::fabs(v));
    const double noise_floor = 1e-11 * f_mag;

    const WeightsF64 direction = perturbation_direction(high, seed);
    const Digest unused_digest{};

    TaylorCheckResult result;
    for (int k = 0; k <= octaves; ++k) {
        const double delta = base_delta * std::ldexp(1.0, -k);
        const TensorModel low = shift_f32(high, direction, delta);
        const WeightsF64 l64 = to_f64(low);

        // The coarse update keeps the proxy off W^h; V is the exact
        // float-domain leak between the quantized and the true difference.
        const UpdateModel update =
            compute_update(high, low, update_bitwidth, 32, unused_digest);
        const TensorModel delta_hat = dequantize(update.delta);

        WeightsF64 proxy = l64;
        WeightsF64 leak = l64;  // reused shape; filled below
        for (std::size_t i = 0; i < proxy.size(); ++i) {
            for (std::size_t e = 0; e < proxy[i].size(); ++e) {
                const double dh = static_cast<double>(delta_hat.tensors[i].values[e]);
                const double d = static_cast<double>(high.tensors[i].values[e]) -
                                 static_cast<double>(low.tensors[i].values[e]);
                proxy[i][e] = l64[i][e] + dh;
                leak[i][e] = dh - d;  // = W' - W^h in exact arithmetic
            }
        }

        const auto f_proxy = forward_f64(spec, proxy, x64);
        const auto grad_leak = fd_directional(spec, l64, leak, x64, 1e-4);

        double residual = 0.0;
        for (std::size_t j = 0; j < f_high.size(); ++j)
            residual = std::max(residual, std::fabs(f_proxy[j] - f_high[j] - grad_leak[j]));
        result.points.push_back({delta, residual});
    }

    std::vector<std::pair<double, double>> usable;
    for (const auto& p : result.points)
        if (p.residual > noise_floor) usable.push_back({std::log2(p.delta), std::log2(p.residual)});
    if (usable.size() < 3) {
        result.within_noise = true;
        return result;
    }
    // Least-squares slope of log residual vs log delta.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [lx, ly] : usable) {
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(usable.size());
    result.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return result;
}

double first_order_relative_gap(const MlpSpec& spec, const TensorModel& high,
                                std::span<const float> x, double delta, std::uint64_t seed) {
    spec.validate_against(high);
    const WeightsF64 direction = perturbation_direction(high, seed);
    const TensorModel low = shift_f32(high, direction, delta);
    const WeightsF64 h64 = to_f64(high);
    const WeightsF64 l64 = to_f64(low);
    const auto x64 = widen(x);

    WeightsF64 gap = h64;  // exact W^h - W^l
    for (std::size_t i = 0; i < gap.size(); ++i)
        for (std::size_t e = 0; e < gap[i].size(); ++e) gap[i][e] = h64[i][e] - l64[i][e];

    const auto f_high = forward_f64(spec, h64, x64);
    const auto f_low = forward_f64(spec, l64, x64);
    const auto first_order = fd_directional(spec, l64, gap, x64, 1e-4);

    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < f_high.size(); ++j) {
        num = std::max(num, std::fabs(f_high[j] - f_low[j] - first_order[j]));
        den = std::max(den, std::fabs(first_order[j]));
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

double activation_margin(const MlpSpec& spec, const TensorModel& weights,
                         std::span<const float> x) {
    const auto views = layer_views(spec, weights);
    std::vector<float> cur(x.begin(), x.end());
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < views.size(); ++i) {
        const auto [in, out] = spec.layers[i];
        cur = dense_f32(views[i].weight->values, views[i].bias->values, cur, in, out);
        double rms = 0.0;
        for (float v : cur) rms += static_cast<double>(v) * v;
        rms = std::sqrt(rms / static_cast<double>(cur.size()));
        if (rms == 0.0) return 0.0;
        for (float v : cur) margin = std::min(margin, std::fabs(double{v}) / rms);
        cur = relu(std::move(cur));
    }
    return spec.layers.size() > 1 ? margin : std::numeric_limits<double>::infinity();
}

TensorModel random_mlp_weights(const MlpSpec& spec, std::uint64_t seed, float scale) {
    if (spec.layers.empty()) throw InvalidModelError("empty MLP spec");
    auto rng = seeded(seed);
    TensorModel model;
    model.name = "mlp-" + std::to_string(seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto [in, out] = spec.layers[i];
        std::normal_distribution<double> init(0.0, scale * std::sqrt(2.0 / in));
        Tensor w;
        w.name = spec.weight_name(i);
        w.shape = {out, in};
        w.values.resize(static_cast<std::size_t>(in) * out);
        for (float& v : w.values) v = static_cast<float>(init(rng));
        Tensor b;
        b.name = spec.bias_name(i);
        b.shape = {out};
        b.values.resize(out);
        for (float& v : b.values) v = static_cast<float>(0.1 * init(rng));
        model.tensors.push_back(std::move(w));
        model.tensors.push_back(std::move(b));
    }
    return model;
}

LabeledDataset make_blobs(std::uint32_t dims, std::uint32_t classes, std::size_t rows,
                          float spread, std::uint64_t seed) {
    auto rng = seeded(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dims));
    for (auto& c : centers)
        for (double& v : c) v = unit(rng);
    LabeledDataset data;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t label = static_cast<std::uint32_t>(r % classes);
        std::vector<float> row(dims);
        for (std::uint32_t d = 0; d < dims; ++d)
            row[d] = static_cast<float>(centers[label][d] + spread * unit(rng));
        data.features.push_back(std::move(row));
        data.labels.push_back(label);
    }
    return data;
}

LabeledDataset make_spirals(std::uint32_t classes, std::size_t rows, float noise,
                            std::uint64_t seed) {
    auto rng = seeded(seed);
    std::normal_distribution<double> jitter(0.0, noise);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    LabeledDataset data;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t label = static_cast<std::uint32_t>(r % classes);
        const double t = unit(rng);
        const double radius = 0.2 + 0.8 * t;
        const double angle = 3.5 * std::numbers::pi_v<double> * t +
                             2.0 * std::numbers::pi_v<double> * label / classes;
        data.features.push_back({static_cast<float>(radius * std::cos(angle) + jitter(rng)),
                                 static_cast<float>(radius * std::sin(angle) + jitter(rng))});
        data.labels.push_back(label);
    }
    return data;
}

TensorModel fit_classifier(const MlpSpec& spec, const LabeledDataset& data,
                           const FitOptions& options) {
    if (data.size() == 0) throw InvalidModelError("cannot fit on an empty dataset");
    if (data.class_count() > spec.output_dim())
        throw InvalidModelError("dataset has more classes than the net has outputs");
    TensorModel model = random_mlp_weights(spec, options.seed, 1.0f);
    const std::size_t num_layers = spec.layers.size();

    auto rng = seeded(options.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<std::vector<double>> grads(model.tensors.size());
    for (std::size_t i = 0; i < grads.size(); ++i)
        grads[i].assign(model.tensors[i].values.size(), 0.0);

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);

            for (std::size_t idx = start; idx < stop; ++idx) {
                const auto& x = data.features[order[idx]];
                const std::uint32_t label = data.labels[order[idx]];

                // Forward, keeping activations.
                std::vector<std::vector<float>> acts{std::vector<float>(x.begin(), x.end())};
                std::vector<std::vector<float>> preacts;
                for (std::size_t i = 0; i < num_layers; ++i) {
                    const auto [in, out] = spec.layers[i];
                    auto z = dense_f32(model.tensors[2 * i].values, model.tensors[2 * i + 1].values,
                                       acts.back(), in, out);
                    preacts.push_back(z);
                    acts.push_back(i + 1 < num_layers ? relu(std::move(z)) : std::move(z));
                }

                // Softmax cross-entropy gradient at the logits.
                const auto& logits = acts.back();
                double zmax = logits[0];
                for (float v : logits) zmax = std::max(zmax, double{v});
                double zsum = 0.0;
                std::vector<double> dz(logits.size());
                for (std::size_t j = 0; j < logits.size(); ++j) {
                    dz[j] = std::exp(double{logits[j]} - zmax);
                    zsum += dz[j];
                }
                for (std::size_t j = 0; j < dz.size(); ++j) {
                    dz[j] /= zsum;
                    if (j == label) dz[j] -= 1.0;
                }

                // Backward.
                for (std::size_t li = num_layers; li-- > 0;) {
                    const auto [in, out] = spec.layers[li];
                    const auto& input = acts[li];
                    auto& gw = grads[2 * li];
                    auto& gb = grads[2 * li + 1];
                    for (std::uint32_t o = 0; o < out; ++o) {
                        gb[o] += dz[o];
                        for (std::uint32_t k = 0; k < in; ++k)
                            gw[static_cast<std::size_t>(o) * in + k] += dz[o] * double{input[k]};
                    }
                    if (li == 0) break;
                    const auto& w = model.tensors[2 * li].values;
                    std::vector<double> dprev(in, 0.0);
                    for (std::uint32_t o = 0; o < out; ++o)
                        for (std::uint32_t k = 0; k < in; ++k)
                            dprev[k] += dz[o] * double{w[static_cast<std::size_t>(o) * in + k]};
                    for (std::uint32_t k = 0; k < in; ++k)
                        if (preacts[li - 1][k] <= 0.0f) dprev[k] = 0.0;
                    dz = std::move(dprev);
                }
            }

            const double step =
                static_cast<double>(options.learning_rate) / static_cast<double>(stop - start);
            for (std::size_t i = 0; i < model.tensors.size(); ++i)
                for (std::size_t e = 0; e < model.tensors[i].values.size(); ++e)
                    model.tensors[i].values[e] = static_cast<float>(
                        double{model.tensors[i].values[e]} - step * grads[i][e]);
        }
    }
    return model;
}

}  // namespace p2u
