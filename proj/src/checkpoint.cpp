#include "sleepscore/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <unordered_map>

#include "binio.hpp"

namespace sleepscore {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

NamedShapedArray param_array(const std::string& name, const Tensor& t) {
    const auto v = t.values();
    return NamedShapedArray{name, t.shape(), {v.begin(), v.end()}};
}

NamedShapedArray stat_array(const std::string& name, const std::vector<double>& v) {
    return NamedShapedArray{name, {static_cast<std::int64_t>(v.size())}, v};
}

void put_spec(std::vector<std::uint8_t>& out, const BranchSpec& s) {
    for (const std::int64_t v : {s.conv1_width, s.conv1_stride, s.pool1_size,
                                 s.pool1_stride, s.conv2_width, s.pool2_size,
                                 s.pool2_stride, s.n_filters1, s.n_filters2}) {
        detail::put_i64(out, v);
    }
}

BranchSpec read_spec(detail::BinReader& r) {
    BranchSpec s;
    for (std::int64_t* f : {&s.conv1_width, &s.conv1_stride, &s.pool1_size,
                            &s.pool1_stride, &s.conv2_width, &s.pool2_size,
                            &s.pool2_stride, &s.n_filters1, &s.n_filters2}) {
        *f = r.i64();
    }
    return s;
}

}  // namespace

Checkpoint snapshot(SleepStageNet& model, CheckpointMeta meta) {
    Checkpoint cp;
    cp.config = model.config;
    cp.meta = std::move(meta);
    for (const auto& [name, tensor] : named_params(model)) {
        cp.arrays.push_back(param_array(name, tensor));
    }
    for (const auto& [name, stats] : named_stats(model)) {
        cp.arrays.push_back(stat_array(name, *stats));
    }
    return cp;
}

Checkpoint cnn_snapshot(SleepStageNet& model, CheckpointMeta meta) {
    Checkpoint cp;
    cp.config = model.config;
    cp.meta = std::move(meta);
    for (const auto& [name, tensor] : named_params(model)) {
        if (is_cnn_param(name)) {
            cp.arrays.push_back(param_array(name, tensor));
        }
    }
    for (const auto& [name, stats] : named_stats(model)) {
        if (is_cnn_param(name)) {
            cp.arrays.push_back(stat_array(name, *stats));
        }
    }
    return cp;
}

SleepStageNet restore(const Checkpoint& cp) {
    Rng rng(0);
    SleepStageNet model = build(cp.config, rng);

    std::unordered_map<std::string, const NamedShapedArray*> by_name;
    for (const auto& a : cp.arrays) {
        if (!by_name.emplace(a.name, &a).second) {
            throw std::invalid_argument("checkpoint: parameter '" + a.name +
                                        "' appears twice");
        }
    }
    std::size_t used = 0;
    for (auto& [name, tensor] : named_params(model)) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::invalid_argument("checkpoint: parameter '" + name + "' is missing");
        }
        const NamedShapedArray& a = *it->second;
        if (a.shape != tensor.shape()) {
            throw std::invalid_argument("checkpoint: parameter '" + name + "' has shape " +
                                        shape_str(a.shape) + ", the model expects " +
                                        shape_str(tensor.shape()));
        }
        auto dst = tensor.values();
        std::copy(a.values.begin(), a.values.end(), dst.begin());
        ++used;
    }
    for (auto& [name, stats] : named_stats(model)) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::invalid_argument("checkpoint: statistic '" + name + "' is missing");
        }
        const NamedShapedArray& a = *it->second;
        if (a.values.size() != stats->size()) {
            throw std::invalid_argument("checkpoint: statistic '" + name + "' has " +
                                        std::to_string(a.values.size()) +
                                        " values, the model expects " +
                                        std::to_string(stats->size()));
        }
        *stats = a.values;
        ++used;
    }
    if (used != cp.arrays.size()) {
        throw std::invalid_argument("checkpoint: " +
                                    std::to_string(cp.arrays.size() - used) +
                                    " arrays do not belong to this model");
    }
    return model;
}

NamedArrays flat_arrays(const Checkpoint& cp) {
    NamedArrays out;
    out.reserve(cp.arrays.size());
    for (const auto& a : cp.arrays) {
        out.emplace_back(a.name, a.values);
    }
    return out;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& cp) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    detail::put_u32(out, kVersion);

    const ModelConfig& c = cp.config;
    detail::put_i64(out, c.fs);
    detail::put_i64(out, c.n_classes);
    put_spec(out, c.small);
    put_spec(out, c.large);
    detail::put_i64(out, c.lstm_hidden);
    detail::put_i64(out, c.lstm_layers);
    detail::put_i64(out, c.shortcut_width);
    detail::put_i64(out, c.seq_length);
    detail::put_f64(out, c.dropout_p);

    detail::put_string(out, cp.meta.phase);
    detail::put_i64(out, static_cast<std::int64_t>(cp.meta.seed));
    detail::put_i64(out, cp.meta.pass);
    detail::put_i64(out, cp.meta.step);
    detail::put_u32(out, static_cast<std::uint32_t>(cp.meta.train_subjects.size()));
    for (const auto& s : cp.meta.train_subjects) {
        detail::put_string(out, s);
    }

    detail::put_u32(out, static_cast<std::uint32_t>(cp.arrays.size()));
    for (const auto& a : cp.arrays) {
        detail::put_string(out, a.name);
        detail::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
        std::int64_t count = 1;
        for (const std::int64_t d : a.shape) {
            detail::put_i64(out, d);
            count *= d;
        }
        if (count != static_cast<std::int64_t>(a.values.size())) {
            throw std::invalid_argument("checkpoint: array '" + a.name + "' holds " +
                                        std::to_string(a.values.size()) +
                                        " values but its shape " + shape_str(a.shape) +
                                        " implies " + std::to_string(count));
        }
        for (const double v : a.values) {
            detail::put_f64(out, v);
        }
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::BinReader r(bytes.data(), bytes.size(), "checkpoint");
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: wrong magic, not a checkpoint file");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                                 " is unsupported, expected " + std::to_string(kVersion));
    }

    Checkpoint cp;
    ModelConfig& c = cp.config;
    c.fs = r.i64();
    c.n_classes = r.i64();
    c.small = read_spec(r);
    c.large = read_spec(r);
    c.lstm_hidden = r.i64();
    c.lstm_layers = r.i64();
    c.shortcut_width = r.i64();
    c.seq_length = r.i64();
    c.dropout_p = r.f64();

    cp.meta.phase = r.str();
    cp.meta.seed = static_cast<std::uint64_t>(r.i64());
    cp.meta.pass = r.i64();
    cp.meta.step = r.i64();
    const std::uint32_t n_subjects = r.u32();
    for (std::uint32_t i = 0; i < n_subjects; ++i) {
        cp.meta.train_subjects.push_back(r.str());
    }

    const std::uint32_t n_arrays = r.u32();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        NamedShapedArray a;
        a.name = r.str();
        const std::uint32_t ndim = r.u32();
        std::int64_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(r.i64());
            count *= a.shape.back();
        }
        if (count < 0) {
            throw std::runtime_error("checkpoint: array '" + a.name +
                                     "' has a negative shape " + shape_str(a.shape));
        }
        a.values.resize(static_cast<std::size_t>(count));
        for (auto& v : a.values) {
            v = r.f64();
        }
        cp.arrays.push_back(std::move(a));
    }
    if (!r.done()) {
        throw std::runtime_error("checkpoint: trailing bytes after the last array");
    }
    return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    const auto bytes = encode_checkpoint(cp);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw std::runtime_error("checkpoint: write to " + path + " failed");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("checkpoint: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace sleepscore
