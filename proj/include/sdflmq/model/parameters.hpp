#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdflmq/bytes.hpp"

namespace sdflmq::model {

struct Tensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data; // row-major

    std::size_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

// Ordered named float32 tensors: the unit exchanged, aggregated, and stored.
// Names are unique and kept sorted; every value is finite.
class ModelParameters {
public:
    ModelParameters() = default;
    explicit ModelParameters(std::vector<Tensor> tensors); // sorts, then validates

    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::vector<Tensor>& mutable_tensors() { return tensors_; }

    const Tensor& tensor(const std::string& name) const; // throws SchemaError
    std::size_t element_count() const;
    bool empty() const { return tensors_.empty(); }

    // Same names and shapes, data ignored.
    bool same_schema(const ModelParameters& other) const;
    std::string schema_string() const;

    bool operator==(const ModelParameters&) const = default;

private:
    std::vector<Tensor> tensors_;
};

struct WeightedUpdate {
    ModelParameters params;
    double weight = 1.0; // typically the local sample count
};

// Element-wise weighted mean accumulated in float64, stored back as float32.
ModelParameters fedavg(const std::vector<WeightedUpdate>& updates);

// Deterministic little-endian encoding; round-trips bit-exactly.
Bytes serialize_params(const ModelParameters& params);
ModelParameters deserialize_params(BytesView bytes); // throws ParseError

} // namespace sdflmq::model
