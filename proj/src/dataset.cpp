#include "sdflmq/model/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "sdflmq/errors.hpp"

namespace sdflmq::model {

namespace {

// Box-Muller over explicit uniform draws; std::normal_distribution's sequence
// is implementation-defined, this one is reproducible everywhere.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    double uniform() {
        // (0, 1], keeps log() finite
        return (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    }

    std::mt19937_64 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4)) {
        throw ParseError(std::string("IDX file truncated reading ") + what);
    }
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

} // namespace

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) {
        throw ValidationError("dataset slice out of range");
    }
    Dataset out;
    out.n_features = n_features;
    out.n_classes = n_classes;
    out.features.assign(features.begin() + begin * n_features, features.begin() + end * n_features);
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    return out;
}

Dataset make_synthetic(std::size_t n_classes, std::size_t n_features, std::size_t n_samples,
                       std::uint64_t seed) {
    if (n_classes == 0 || n_features == 0 || n_samples == 0) {
        throw ValidationError("synthetic dataset dimensions must be positive");
    }
    // Class c is centred on axis (c % n_features) at distance 4*(1 + c/n_features),
    // so every pair of means is at least 4 sigma apart (sigma = 1).
    std::vector<std::vector<float>> means(n_classes, std::vector<float>(n_features, 0.0f));
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t axis = c % n_features;
        const float magnitude = 4.0f * (1.0f + static_cast<float>(c / n_features));
        means[c][axis] = magnitude;
    }

    GaussianSource noise(seed);
    Dataset out;
    out.n_features = n_features;
    out.n_classes = n_classes;
    out.features.resize(n_samples * n_features);
    out.labels.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t c = i % n_classes;
        out.labels[i] = static_cast<std::int32_t>(c);
        for (std::size_t f = 0; f < n_features; ++f) {
            out.features[i * n_features + f] =
                means[c][f] + static_cast<float>(noise.next());
        }
    }
    return out;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open dataset file: " + path);
    }
    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    std::int32_t max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::vector<float> values;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stof(cell, &used));
                if (used != cell.size()) {
                    throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw ParseError("bad CSV value '" + cell + "' at " + path + ":" +
                                 std::to_string(line_no));
            }
        }
        if (values.size() < 2) {
            throw ParseError("CSV row needs a label and at least one feature at " + path + ":" +
                             std::to_string(line_no));
        }
        const auto label = static_cast<std::int32_t>(values[0]);
        if (label < 0 || static_cast<float>(label) != values[0]) {
            throw ParseError("CSV label must be a non-negative integer at " + path + ":" +
                             std::to_string(line_no));
        }
        if (out.n_features == 0) {
            out.n_features = values.size() - 1;
        } else if (values.size() - 1 != out.n_features) {
            throw ParseError("inconsistent CSV feature count at " + path + ":" +
                             std::to_string(line_no));
        }
        out.labels.push_back(label);
        out.features.insert(out.features.end(), values.begin() + 1, values.end());
        max_label = std::max(max_label, label);
    }
    if (out.labels.empty()) {
        throw ParseError("empty dataset file: " + path);
    }
    out.n_classes = static_cast<std::size_t>(max_label) + 1;
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_samples) {
    std::ifstream images(images_path, std::ios::binary);
    std::ifstream labels(labels_path, std::ios::binary);
    if (!images) {
        throw ValidationError("cannot open IDX images file: " + images_path);
    }
    if (!labels) {
        throw ValidationError("cannot open IDX labels file: " + labels_path);
    }
    if (read_be32(images, "images magic") != 0x0803) {
        throw ParseError("bad IDX images magic in " + images_path);
    }
    if (read_be32(labels, "labels magic") != 0x0801) {
        throw ParseError("bad IDX labels magic in " + labels_path);
    }
    const std::uint32_t n_images = read_be32(images, "image count");
    const std::uint32_t rows = read_be32(images, "rows");
    const std::uint32_t cols = read_be32(images, "cols");
    const std::uint32_t n_labels = read_be32(labels, "label count");
    if (n_images != n_labels) {
        throw ParseError("IDX image/label count mismatch");
    }
    std::size_t take = n_images;
    if (max_samples != 0) {
        take = std::min<std::size_t>(take, max_samples);
    }

    Dataset out;
    out.n_features = static_cast<std::size_t>(rows) * cols;
    out.n_classes = 10;
    out.features.resize(take * out.n_features);
    out.labels.resize(take);
    std::vector<unsigned char> pixel_row(out.n_features);
    for (std::size_t i = 0; i < take; ++i) {
        if (!images.read(reinterpret_cast<char*>(pixel_row.data()),
                         static_cast<std::streamsize>(pixel_row.size()))) {
            throw ParseError("IDX images file truncated");
        }
        char label = 0;
        if (!labels.read(&label, 1)) {
            throw ParseError("IDX labels file truncated");
        }
        if (label < 0 || label > 9) {
            throw ParseError("IDX label out of range");
        }
        out.labels[i] = label;
        for (std::size_t f = 0; f < out.n_features; ++f) {
            out.features[i * out.n_features + f] = static_cast<float>(pixel_row[f]) / 255.0f;
        }
    }
    return out;
}

} // namespace sdflmq::model
