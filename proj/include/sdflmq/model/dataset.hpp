#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sdflmq::model {

// Dense classification dataset: row-major features, one integer label per row.
struct Dataset {
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<float> features; // n_samples * n_features
    std::vector<std::int32_t> labels;

    std::size_t size() const { return labels.size(); }
    const float* row(std::size_t i) const { return features.data() + i * n_features; }

    // Contiguous row range [begin, end).
    Dataset slice(std::size_t begin, std::size_t end) const;
};

// Gaussian class blobs with per-class means separated by at least 4 sigma and
// round-robin class assignment (sample i gets class i % n_classes).
// Deterministic per seed.
Dataset make_synthetic(std::size_t n_classes, std::size_t n_features, std::size_t n_samples,
                       std::uint64_t seed);

// "label,f1,...,fn" rows; throws ParseError on malformed input.
Dataset load_csv(const std::string& path);

// IDX-format loader (MNIST). images_path magic 0x0803, labels_path magic 0x0801.
// Pixel values are scaled to [0,1]. max_samples 0 means all.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_samples = 0);

} // namespace sdflmq::model
