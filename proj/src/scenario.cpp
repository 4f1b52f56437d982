#include "sdflmq/harness/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sdflmq/errors.hpp"

namespace sdflmq::harness {

namespace {

std::string kind_name(DatasetSpec::Kind kind) {
    switch (kind) {
    case DatasetSpec::Kind::kSynthetic: return "synthetic";
    case DatasetSpec::Kind::kCsv: return "csv";
    case DatasetSpec::Kind::kMnist: return "mnist";
    }
    return "?";
}

DatasetSpec::Kind kind_from_name(const std::string& name) {
    if (name == "synthetic") return DatasetSpec::Kind::kSynthetic;
    if (name == "csv") return DatasetSpec::Kind::kCsv;
    if (name == "mnist") return DatasetSpec::Kind::kMnist;
    throw ConfigError("unknown dataset kind: " + name);
}

} // namespace

DatasetSpec DatasetSpec::parse(const std::string& text) {
    DatasetSpec spec;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "synthetic") {
        spec.kind = Kind::kSynthetic;
        if (!rest.empty()) {
            std::istringstream in(rest);
            char sep1 = 0;
            char sep2 = 0;
            if (!(in >> spec.n_classes >> sep1 >> spec.n_features >> sep2 >>
                  spec.train_samples) ||
                sep1 != ',' || sep2 != ',') {
                throw ConfigError("expected synthetic:<classes>,<features>,<samples>: " + text);
            }
        }
        return spec;
    }
    if (head == "csv") {
        if (rest.empty()) {
            throw ConfigError("csv dataset spec needs a path");
        }
        spec.kind = Kind::kCsv;
        spec.path = rest;
        return spec;
    }
    if (head == "mnist") {
        if (rest.empty()) {
            throw ConfigError("mnist dataset spec needs a directory");
        }
        spec.kind = Kind::kMnist;
        spec.path = rest;
        return spec;
    }
    throw ConfigError("unknown dataset spec: " + text);
}

void ScenarioConfig::validate() const {
    if (n_clients == 0) {
        throw ConfigError("n_clients must be >= 1");
    }
    if (fl_rounds == 0 || epochs == 0) {
        throw ConfigError("fl_rounds and epochs must be >= 1");
    }
    if (model_family != "logistic" && model_family != "mlp") {
        throw ConfigError("model_family must be 'logistic' or 'mlp'");
    }
    if (dataset.per_client_fraction <= 0.0 ||
        static_cast<double>(n_clients) * dataset.per_client_fraction > 1.0 + 1e-9) {
        throw ConfigError("per-client fractions must be positive and sum to at most 1");
    }
}

std::string ScenarioConfig::to_json_string() const {
    nlohmann::json doc = {
        {"n_clients", n_clients},
        {"clustering",
         {{"policy", clustering.name()},
          {"layers", clustering.layers},
          {"fraction", clustering.aggregator_fraction}}},
        {"optimizer", optimizer},
        {"fl_rounds", fl_rounds},
        {"epochs", epochs},
        {"learning_rate", learning_rate},
        {"model", model_family},
        {"hidden", hidden},
        {"batch_size", batch_size},
        {"dataset",
         {{"kind", kind_name(dataset.kind)},
          {"n_classes", dataset.n_classes},
          {"n_features", dataset.n_features},
          {"train_samples", dataset.train_samples},
          {"test_samples", dataset.test_samples},
          {"per_client_fraction", dataset.per_client_fraction},
          {"path", dataset.path}}},
        {"seed", seed},
        {"straggler_timeout_ms", straggler_timeout.count()},
        {"session_id", session_id},
    };
    if (latency.has_value()) {
        doc["latency"] = {
            {"per_message_us",
             std::chrono::duration_cast<std::chrono::microseconds>(latency->per_message).count()},
            {"per_byte_ns", latency->per_byte.count()},
        };
    }
    return doc.dump(2);
}

ScenarioConfig ScenarioConfig::from_json_string(const std::string& text) {
    try {
        auto doc = nlohmann::json::parse(text);
        ScenarioConfig config;
        config.n_clients = doc.at("n_clients").get<std::size_t>();
        if (doc.contains("clustering")) {
            const auto& c = doc.at("clustering");
            const std::string policy = c.at("policy").get<std::string>();
            if (policy == "single") {
                config.clustering = coord::ClusteringPolicy::single();
            } else {
                config.clustering = coord::ClusteringPolicy::hierarchical(
                    c.value("layers", std::size_t{3}), c.value("fraction", 0.3));
            }
        }
        config.optimizer = doc.value("optimizer", std::string("static"));
        config.fl_rounds = doc.at("fl_rounds").get<std::uint32_t>();
        config.epochs = doc.value("epochs", std::size_t{5});
        config.learning_rate = doc.value("learning_rate", 0.05);
        config.model_family = doc.value("model", std::string("mlp"));
        config.hidden = doc.value("hidden", std::size_t{32});
        config.batch_size = doc.value("batch_size", std::size_t{32});
        if (doc.contains("dataset")) {
            const auto& d = doc.at("dataset");
            config.dataset.kind = kind_from_name(d.value("kind", std::string("synthetic")));
            config.dataset.n_classes = d.value("n_classes", std::size_t{10});
            config.dataset.n_features = d.value("n_features", std::size_t{20});
            config.dataset.train_samples = d.value("train_samples", std::size_t{20000});
            config.dataset.test_samples = d.value("test_samples", std::size_t{2000});
            config.dataset.per_client_fraction = d.value("per_client_fraction", 0.01);
            config.dataset.path = d.value("path", std::string{});
        }
        config.seed = doc.value("seed", std::uint64_t{1});
        config.straggler_timeout =
            std::chrono::milliseconds(doc.value("straggler_timeout_ms", std::int64_t{60000}));
        config.session_id = doc.value("session_id", std::string("session_01"));
        if (doc.contains("latency")) {
            transport::LatencyModel model;
            model.per_message =
                std::chrono::microseconds(doc.at("latency").value("per_message_us",
                                                                  std::int64_t{0}));
            model.per_byte =
                std::chrono::nanoseconds(doc.at("latency").value("per_byte_ns", std::int64_t{0}));
            config.latency = model;
        }
        config.validate();
        return config;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scenario JSON: ") + e.what());
    }
}

ScenarioConfig ScenarioConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open scenario file: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_string(buffer.str());
}

bool mnist_present(const std::string& dir) {
    namespace fs = std::filesystem;
    return fs::exists(fs::path(dir) / "train-images-idx3-ubyte") &&
           fs::exists(fs::path(dir) / "train-labels-idx1-ubyte") &&
           fs::exists(fs::path(dir) / "t10k-images-idx3-ubyte") &&
           fs::exists(fs::path(dir) / "t10k-labels-idx1-ubyte");
}

std::pair<model::Dataset, model::Dataset> load_datasets(const DatasetSpec& spec,
                                                        std::uint64_t seed) {
    switch (spec.kind) {
    case DatasetSpec::Kind::kSynthetic: {
        model::Dataset train = model::make_synthetic(spec.n_classes, spec.n_features,
                                                     spec.train_samples, seed);
        model::Dataset test = model::make_synthetic(spec.n_classes, spec.n_features,
                                                    spec.test_samples, seed + 0x9e3779b9ull);
        return {std::move(train), std::move(test)};
    }
    case DatasetSpec::Kind::kCsv: {
        model::Dataset all = model::load_csv(spec.path);
        const std::size_t test_count = std::max<std::size_t>(1, all.size() / 5);
        model::Dataset train = all.slice(0, all.size() - test_count);
        model::Dataset test = all.slice(all.size() - test_count, all.size());
        return {std::move(train), std::move(test)};
    }
    case DatasetSpec::Kind::kMnist: {
        namespace fs = std::filesystem;
        const fs::path dir(spec.path);
        model::Dataset train =
            model::load_idx((dir / "train-images-idx3-ubyte").string(),
                            (dir / "train-labels-idx1-ubyte").string(), spec.train_samples);
        model::Dataset test =
            model::load_idx((dir / "t10k-images-idx3-ubyte").string(),
                            (dir / "t10k-labels-idx1-ubyte").string(), spec.test_samples);
        return {std::move(train), std::move(test)};
    }
    }
    throw ConfigError("unreachable dataset kind");
}

} // namespace sdflmq::harness
