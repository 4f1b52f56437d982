#pragma once

#include <cstdint>
#include <vector>

#include "sdflmq/model/dataset.hpp"
#include "sdflmq/model/parameters.hpp"

namespace sdflmq::model {

// Built-in model families. External models travel through the framework as
// opaque ModelParameters blobs; these two exist for the built-in trainers.
enum class ModelFamily {
    kLogisticRegression, // linear.weight [C,F], linear.bias [C]
    kPerceptron,         // tanh hidden layer: hidden.*, output.*
};

struct ModelSpec {
    ModelFamily family = ModelFamily::kLogisticRegression;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::size_t hidden = 0; // perceptron only

    std::size_t parameter_count() const;
};

// Recognizes the tensor layout of a built-in family; throws SchemaError otherwise.
ModelSpec detect_spec(const ModelParameters& params);

ModelParameters init_params(const ModelSpec& spec, std::uint64_t seed);

// Flat double-precision view used by the optimizer and by gradient checks.
// Order follows the sorted tensor order of ModelParameters.
std::vector<double> flatten(const ModelParameters& params);
ModelParameters unflatten(const ModelSpec& spec, const std::vector<double>& theta);

// Mean softmax cross-entropy over the given sample indices.
double batch_loss(const ModelSpec& spec, const std::vector<double>& theta, const Dataset& data,
                  const std::vector<std::size_t>& indices);

// Analytic gradient of batch_loss with respect to theta.
std::vector<double> batch_gradient(const ModelSpec& spec, const std::vector<double>& theta,
                                   const Dataset& data, const std::vector<std::size_t>& indices);

struct TrainResult {
    ModelParameters params;
    std::uint64_t n_samples = 0;
    double final_loss = 0.0;
};

// Mini-batch gradient descent, deterministic per seed.
// Throws TrainingError when the loss leaves the finite range.
TrainResult train_local(const ModelParameters& params, const Dataset& data, std::size_t epochs,
                        double learning_rate, std::uint64_t seed, std::size_t batch_size = 32);

// Fraction of argmax predictions equal to the labels (ties pick the lowest class).
double evaluate(const ModelParameters& params, const Dataset& data);

} // namespace sdflmq::model
