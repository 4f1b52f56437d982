#include "sdflmq/model/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "sdflmq/errors.hpp"

namespace sdflmq::model {

namespace {

void write_u32(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

class Reader {
public:
    explicit Reader(BytesView data) : data_(data) {}

    std::uint32_t read_u32() {
        require(4);
        std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) |
                          (static_cast<std::uint32_t>(data_[pos_ + 1]) << 8) |
                          (static_cast<std::uint32_t>(data_[pos_ + 2]) << 16) |
                          (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }

    std::string read_string(std::size_t n) {
        require(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::vector<float> read_floats(std::size_t n) {
        require(n * 4);
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = static_cast<std::uint32_t>(data_[pos_]) |
                                 (static_cast<std::uint32_t>(data_[pos_ + 1]) << 8) |
                                 (static_cast<std::uint32_t>(data_[pos_ + 2]) << 16) |
                                 (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
            std::memcpy(&out[i], &bits, 4);
            pos_ += 4;
        }
        return out;
    }

    bool exhausted() const { return pos_ == data_.size(); }

private:
    void require(std::size_t n) {
        if (data_.size() - pos_ < n) {
            throw ParseError("truncated parameter blob");
        }
    }

    BytesView data_;
    std::size_t pos_ = 0;
};

} // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

ModelParameters::ModelParameters(std::vector<Tensor> tensors) : tensors_(std::move(tensors)) {
    std::sort(tensors_.begin(), tensors_.end(),
              [](const Tensor& a, const Tensor& b) { return a.name < b.name; });
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const Tensor& t = tensors_[i];
        if (t.name.empty()) {
            throw ValidationError("tensor name must be non-empty");
        }
        if (i > 0 && tensors_[i - 1].name == t.name) {
            throw ValidationError("duplicate tensor name: " + t.name);
        }
        if (t.shape.empty()) {
            throw ValidationError("tensor shape must be non-empty: " + t.name);
        }
        for (auto d : t.shape) {
            if (d == 0) {
                throw ValidationError("tensor dimensions must be positive: " + t.name);
            }
        }
        if (t.data.size() != t.element_count()) {
            throw ValidationError("tensor data length does not match shape: " + t.name);
        }
        for (float v : t.data) {
            if (!std::isfinite(v)) {
                throw ValidationError("tensor contains non-finite value: " + t.name);
            }
        }
    }
}

const Tensor& ModelParameters::tensor(const std::string& name) const {
    auto it = std::lower_bound(tensors_.begin(), tensors_.end(), name,
                               [](const Tensor& t, const std::string& n) { return t.name < n; });
    if (it == tensors_.end() || it->name != name) {
        throw SchemaError("no tensor named '" + name + "'");
    }
    return *it;
}

std::size_t ModelParameters::element_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
        n += t.element_count();
    }
    return n;
}

bool ModelParameters::same_schema(const ModelParameters& other) const {
    if (tensors_.size() != other.tensors_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name != other.tensors_[i].name ||
            tensors_[i].shape != other.tensors_[i].shape) {
            return false;
        }
    }
    return true;
}

std::string ModelParameters::schema_string() const {
    std::ostringstream os;
    for (const auto& t : tensors_) {
        os << t.name << '[';
        for (std::size_t i = 0; i < t.shape.size(); ++i) {
            os << (i ? "x" : "") << t.shape[i];
        }
        os << ']';
    }
    return os.str();
}

ModelParameters fedavg(const std::vector<WeightedUpdate>& updates) {
    if (updates.empty()) {
        throw ValidationError("fedavg requires at least one update");
    }
    const ModelParameters& reference = updates.front().params;
    double total_weight = 0.0;
    for (const auto& u : updates) {
        if (!(u.weight > 0.0)) {
            throw ValidationError("fedavg weights must be positive");
        }
        if (!u.params.same_schema(reference)) {
            throw AggregationError("fedavg update schema mismatch: expected " +
                                   reference.schema_string() + ", got " +
                                   u.params.schema_string());
        }
        total_weight += u.weight;
    }

    std::vector<Tensor> out;
    out.reserve(reference.tensors().size());
    for (std::size_t t = 0; t < reference.tensors().size(); ++t) {
        const Tensor& ref = reference.tensors()[t];
        std::vector<double> acc(ref.data.size(), 0.0);
        for (const auto& u : updates) {
            const auto& data = u.params.tensors()[t].data;
            for (std::size_t i = 0; i < data.size(); ++i) {
                acc[i] += u.weight * static_cast<double>(data[i]);
            }
        }
        Tensor result{ref.name, ref.shape, std::vector<float>(ref.data.size())};
        for (std::size_t i = 0; i < acc.size(); ++i) {
            result.data[i] = static_cast<float>(acc[i] / total_weight);
        }
        out.push_back(std::move(result));
    }
    return ModelParameters(std::move(out));
}

Bytes serialize_params(const ModelParameters& params) {
    Bytes out;
    write_u32(out, static_cast<std::uint32_t>(params.tensors().size()));
    for (const auto& t : params.tensors()) {
        write_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) {
            write_u32(out, d);
        }
        for (float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            write_u32(out, bits);
        }
    }
    return out;
}

ModelParameters deserialize_params(BytesView bytes) {
    Reader reader(bytes);
    const std::uint32_t count = reader.read_u32();
    std::vector<Tensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        const std::uint32_t name_len = reader.read_u32();
        t.name = reader.read_string(name_len);
        const std::uint32_t rank = reader.read_u32();
        if (rank > 16) {
            throw ParseError("implausible tensor rank: " + std::to_string(rank));
        }
        std::size_t elements = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = reader.read_u32();
            if (dim == 0) {
                throw ParseError("zero tensor dimension");
            }
            if (elements > (1ull << 32) / dim) {
                throw ParseError("tensor element count overflows");
            }
            elements *= dim;
            t.shape.push_back(dim);
        }
        t.data = reader.read_floats(elements);
        tensors.push_back(std::move(t));
    }
    if (!reader.exhausted()) {
        throw ParseError("trailing bytes after parameter blob");
    }
    try {
        return ModelParameters(std::move(tensors));
    } catch (const ValidationError& e) {
        throw ParseError(std::string("invalid parameter blob: ") + e.what());
    }
}

} // namespace sdflmq::model
