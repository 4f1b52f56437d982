#include "sdflmq/model/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sdflmq/errors.hpp"

namespace sdflmq::model {

namespace {

struct LogisticLayout {
    // sorted tensor order: linear.bias [C], linear.weight [C,F]
    std::size_t bias = 0;
    std::size_t weight;
    explicit LogisticLayout(const ModelSpec& s) : weight(s.n_classes) {}
};

struct PerceptronLayout {
    // sorted order: hidden.bias [H], hidden.weight [H,F], output.bias [C], output.weight [C,H]
    std::size_t hidden_bias = 0;
    std::size_t hidden_weight;
    std::size_t output_bias;
    std::size_t output_weight;
    explicit PerceptronLayout(const ModelSpec& s)
        : hidden_weight(s.hidden),
          output_bias(s.hidden + s.hidden * s.n_features),
          output_weight(s.hidden + s.hidden * s.n_features + s.n_classes) {}
};

// Subtracts the max and exponentiates in place; returns log(sum(exp)).
double softmax_inplace(std::vector<double>& z) {
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) {
        v /= sum;
    }
    return zmax + std::log(sum);
}

void logistic_forward(const ModelSpec& spec, const std::vector<double>& theta, const float* x,
                      std::vector<double>& z) {
    LogisticLayout layout(spec);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        double acc = theta[layout.bias + c];
        const double* w = theta.data() + layout.weight + c * spec.n_features;
        for (std::size_t f = 0; f < spec.n_features; ++f) {
            acc += w[f] * static_cast<double>(x[f]);
        }
        z[c] = acc;
    }
}

void perceptron_forward(const ModelSpec& spec, const std::vector<double>& theta, const float* x,
                        std::vector<double>& hidden, std::vector<double>& z) {
    PerceptronLayout layout(spec);
    for (std::size_t h = 0; h < spec.hidden; ++h) {
        double acc = theta[layout.hidden_bias + h];
        const double* w = theta.data() + layout.hidden_weight + h * spec.n_features;
        for (std::size_t f = 0; f < spec.n_features; ++f) {
            acc += w[f] * static_cast<double>(x[f]);
        }
        hidden[h] = std::tanh(acc);
    }
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        double acc = theta[layout.output_bias + c];
        const double* w = theta.data() + layout.output_weight + c * spec.hidden;
        for (std::size_t h = 0; h < spec.hidden; ++h) {
            acc += w[h] * hidden[h];
        }
        z[c] = acc;
    }
}

void forward_logits(const ModelSpec& spec, const std::vector<double>& theta, const float* x,
                    std::vector<double>& hidden_scratch, std::vector<double>& z) {
    if (spec.family == ModelFamily::kLogisticRegression) {
        logistic_forward(spec, theta, x, z);
    } else {
        perceptron_forward(spec, theta, x, hidden_scratch, z);
    }
}

void check_dataset(const ModelSpec& spec, const Dataset& data) {
    if (data.size() == 0) {
        throw ValidationError("dataset is empty");
    }
    if (data.n_features != spec.n_features) {
        throw ValidationError("dataset has " + std::to_string(data.n_features) +
                              " features, model expects " + std::to_string(spec.n_features));
    }
    for (auto label : data.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes) {
            throw ValidationError("label " + std::to_string(label) +
                                  " outside the model's class range");
        }
    }
}

// Fisher-Yates with explicit draws; std::shuffle's sequence is
// implementation-defined and would break cross-toolchain reproducibility.
void deterministic_shuffle(std::vector<std::size_t>& values, std::mt19937_64& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(values[i - 1], values[j]);
    }
}

} // namespace

std::size_t ModelSpec::parameter_count() const {
    if (family == ModelFamily::kLogisticRegression) {
        return n_classes * n_features + n_classes;
    }
    return hidden * n_features + hidden + n_classes * hidden + n_classes;
}

ModelSpec detect_spec(const ModelParameters& params) {
    const auto& tensors = params.tensors();
    auto shape_of = [&](const char* name) { return params.tensor(name).shape; };

    if (tensors.size() == 2) {
        const auto weight = shape_of("linear.weight");
        const auto bias = shape_of("linear.bias");
        if (weight.size() != 2 || bias.size() != 1 || bias[0] != weight[0]) {
            throw SchemaError("malformed logistic-regression schema: " + params.schema_string());
        }
        return ModelSpec{ModelFamily::kLogisticRegression, weight[1], weight[0], 0};
    }
    if (tensors.size() == 4) {
        const auto hidden_weight = shape_of("hidden.weight");
        const auto hidden_bias = shape_of("hidden.bias");
        const auto output_weight = shape_of("output.weight");
        const auto output_bias = shape_of("output.bias");
        if (hidden_weight.size() != 2 || output_weight.size() != 2 || hidden_bias.size() != 1 ||
            output_bias.size() != 1 || hidden_bias[0] != hidden_weight[0] ||
            output_bias[0] != output_weight[0] || output_weight[1] != hidden_weight[0]) {
            throw SchemaError("malformed perceptron schema: " + params.schema_string());
        }
        return ModelSpec{ModelFamily::kPerceptron, hidden_weight[1], output_weight[0],
                         hidden_weight[0]};
    }
    throw SchemaError("not a built-in model family: " + params.schema_string());
}

ModelParameters init_params(const ModelSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double scale) {
        double u = (static_cast<double>(rng() >> 11)) * 0x1.0p-53; // [0,1)
        return static_cast<float>((2.0 * u - 1.0) * scale);
    };

    auto make = [&](std::string name, std::vector<std::uint32_t> shape, double scale) {
        Tensor t{std::move(name), std::move(shape), {}};
        t.data.resize(t.element_count());
        for (auto& v : t.data) {
            v = scale == 0.0 ? 0.0f : uniform(scale);
        }
        return t;
    };

    const auto f = static_cast<std::uint32_t>(spec.n_features);
    const auto c = static_cast<std::uint32_t>(spec.n_classes);
    if (spec.family == ModelFamily::kLogisticRegression) {
        double scale = std::sqrt(6.0 / static_cast<double>(spec.n_features + spec.n_classes));
        return ModelParameters(
            {make("linear.weight", {c, f}, scale), make("linear.bias", {c}, 0.0)});
    }
    const auto h = static_cast<std::uint32_t>(spec.hidden);
    double hidden_scale = std::sqrt(6.0 / static_cast<double>(spec.n_features + spec.hidden));
    double output_scale = std::sqrt(6.0 / static_cast<double>(spec.hidden + spec.n_classes));
    return ModelParameters({make("hidden.weight", {h, f}, hidden_scale),
                            make("hidden.bias", {h}, 0.0),
                            make("output.weight", {c, h}, output_scale),
                            make("output.bias", {c}, 0.0)});
}

std::vector<double> flatten(const ModelParameters& params) {
    std::vector<double> theta;
    theta.reserve(params.element_count());
    for (const auto& t : params.tensors()) {
        for (float v : t.data) {
            theta.push_back(static_cast<double>(v));
        }
    }
    return theta;
}

ModelParameters unflatten(const ModelSpec& spec, const std::vector<double>& theta) {
    ModelParameters reference = init_params(spec, 0);
    std::vector<Tensor> tensors = reference.tensors();
    std::size_t offset = 0;
    for (auto& t : tensors) {
        for (auto& v : t.data) {
            v = static_cast<float>(theta[offset++]);
        }
    }
    if (offset != theta.size()) {
        throw ValidationError("flat parameter vector does not match the model spec");
    }
    return ModelParameters(std::move(tensors));
}

double batch_loss(const ModelSpec& spec, const std::vector<double>& theta, const Dataset& data,
                  const std::vector<std::size_t>& indices) {
    std::vector<double> z(spec.n_classes);
    std::vector<double> hidden(spec.hidden);
    double total = 0.0;
    for (std::size_t i : indices) {
        forward_logits(spec, theta, data.row(i), hidden, z);
        double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) {
            sum += std::exp(v - zmax);
        }
        total += (zmax + std::log(sum)) - z[static_cast<std::size_t>(data.labels[i])];
    }
    return total / static_cast<double>(indices.size());
}

std::vector<double> batch_gradient(const ModelSpec& spec, const std::vector<double>& theta,
                                   const Dataset& data, const std::vector<std::size_t>& indices) {
    std::vector<double> grad(theta.size(), 0.0);
    std::vector<double> z(spec.n_classes);
    std::vector<double> hidden(spec.hidden);
    const double inv_batch = 1.0 / static_cast<double>(indices.size());

    if (spec.family == ModelFamily::kLogisticRegression) {
        LogisticLayout layout(spec);
        for (std::size_t i : indices) {
            const float* x = data.row(i);
            logistic_forward(spec, theta, x, z);
            softmax_inplace(z);
            z[static_cast<std::size_t>(data.labels[i])] -= 1.0;
            for (std::size_t c = 0; c < spec.n_classes; ++c) {
                const double dz = z[c] * inv_batch;
                grad[layout.bias + c] += dz;
                double* gw = grad.data() + layout.weight + c * spec.n_features;
                for (std::size_t f = 0; f < spec.n_features; ++f) {
                    gw[f] += dz * static_cast<double>(x[f]);
                }
            }
        }
        return grad;
    }

    PerceptronLayout layout(spec);
    std::vector<double> dhidden(spec.hidden);
    for (std::size_t i : indices) {
        const float* x = data.row(i);
        perceptron_forward(spec, theta, x, hidden, z);
        softmax_inplace(z);
        z[static_cast<std::size_t>(data.labels[i])] -= 1.0;

        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (std::size_t c = 0; c < spec.n_classes; ++c) {
            const double dz = z[c] * inv_batch;
            grad[layout.output_bias + c] += dz;
            double* gw = grad.data() + layout.output_weight + c * spec.hidden;
            const double* w = theta.data() + layout.output_weight + c * spec.hidden;
            for (std::size_t h = 0; h < spec.hidden; ++h) {
                gw[h] += dz * hidden[h];
                dhidden[h] += dz * w[h];
            }
        }
        for (std::size_t h = 0; h < spec.hidden; ++h) {
            const double da = dhidden[h] * (1.0 - hidden[h] * hidden[h]);
            grad[layout.hidden_bias + h] += da;
            double* gw = grad.data() + layout.hidden_weight + h * spec.n_features;
            for (std::size_t f = 0; f < spec.n_features; ++f) {
                gw[f] += da * static_cast<double>(x[f]);
            }
        }
    }
    return grad;
}

TrainResult train_local(const ModelParameters& params, const Dataset& data, std::size_t epochs,
                        double learning_rate, std::uint64_t seed, std::size_t batch_size) {
    if (epochs == 0) {
        throw ValidationError("epochs must be >= 1");
    }
    if (batch_size == 0) {
        throw ValidationError("batch size must be >= 1");
    }
    const ModelSpec spec = detect_spec(params);
    check_dataset(spec, data);

    std::vector<double> theta = flatten(params);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            batch.assign(order.begin() + start, order.begin() + end);
            const std::vector<double> grad = batch_gradient(spec, theta, data, batch);
            if (learning_rate != 0.0) {
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    theta[i] -= learning_rate * grad[i];
                }
            }
        }
    }

    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    const double loss = batch_loss(spec, theta, data, all);
    if (!std::isfinite(loss)) {
        throw TrainingError("training diverged: loss is not finite");
    }

    TrainResult result;
    try {
        // Parameters finite in double can still overflow the float32 range.
        result.params = unflatten(spec, theta);
    } catch (const ValidationError& e) {
        throw TrainingError(std::string("training diverged: ") + e.what());
    }
    result.n_samples = data.size();
    result.final_loss = loss;
    return result;
}

double evaluate(const ModelParameters& params, const Dataset& data) {
    const ModelSpec spec = detect_spec(params);
    if (data.n_features != spec.n_features) {
        throw ValidationError("dataset has " + std::to_string(data.n_features) +
                              " features, model expects " + std::to_string(spec.n_features));
    }
    if (data.size() == 0) {
        throw ValidationError("dataset is empty");
    }
    if (data.n_classes > spec.n_classes) {
        throw ValidationError("dataset has more classes than the model predicts");
    }

    std::vector<double> theta = flatten(params);
    std::vector<double> z(spec.n_classes);
    std::vector<double> hidden(spec.hidden);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        forward_logits(spec, theta, data.row(i), hidden, z);
        std::size_t best = 0;
        for (std::size_t c = 1; c < spec.n_classes; ++c) {
            if (z[c] > z[best]) {
                best = c;
            }
        }
        if (static_cast<std::int32_t>(best) == data.labels[i]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

} // namespace sdflmq::model
