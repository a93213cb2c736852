#include "terse/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "terse/error.hpp"
#include "terse/serialize.hpp"

namespace terse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::full: return "full";
        case EncoderVariant::temporal_only: return "temporal";
        case EncoderVariant::spatial_only: return "spatial";
    }
    return "full";
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
    if (s == "full") return EncoderVariant::full;
    if (s == "temporal" || s == "temporal_only") return EncoderVariant::temporal_only;
    if (s == "spatial" || s == "spatial_only") return EncoderVariant::spatial_only;
    throw ConfigError("unknown encoder variant '" + s + "' (expected full, temporal or spatial)");
}

std::int64_t ModelConfig::feature_dim() const {
    if (variant == EncoderVariant::spatial_only) return length;
    return cnn_filters.empty() ? 0 : cnn_filters.back();
}

void ModelConfig::validate() const {
    if (channels < 1) throw ConfigError("model: channels must be >= 1");
    if (classes < 2) throw ConfigError("model: classes must be >= 2");
    if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
    if (length < 1) throw ConfigError("model: length must be >= 1");
    if (variant == EncoderVariant::spatial_only) return;
    if (cnn_filters.empty() || cnn_filters.size() != cnn_kernels.size()) {
        throw ConfigError("model: cnn_filters and cnn_kernels must be non-empty and of equal length");
    }
    if (pool < 1) throw ConfigError("model: pool must be >= 1");
    const std::int64_t min_len = std::int64_t{1} << cnn_filters.size();
    if (length < min_len) {
        throw ConfigError("model: length " + std::to_string(length) + " too short for a " +
                          std::to_string(cnn_filters.size()) + "-stage pooling pyramid (need >= " +
                          std::to_string(min_len) + ")");
    }
    std::int64_t l = length;
    for (std::size_t i = 0; i < cnn_kernels.size(); ++i) {
        const std::int64_t k = cnn_kernels[i];
        if (k < 1 || cnn_filters[i] < 1) throw ConfigError("model: kernel sizes and filter counts must be >= 1");
        l = l + 2 * (k / 2) - k + 1;
        if (l < pool) {
            throw ConfigError("model: length " + std::to_string(length) + " too short for the pooling pyramid");
        }
        l = (l - pool) / pool + 1;
    }
}

namespace {

Tensor uniform_tensor(const Shape& shape, double bound, Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor::from_vector(shape, std::move(v), true);
}

}  // namespace

ModelBundle ModelBundle::create(const ModelConfig& config, Rng& rng) {
    config.validate();
    ModelBundle m;
    m.config = config;
    const std::int64_t D = config.embed_dim;

    Rng cnn_rng = rng.fork("init.cnn");
    if (config.variant != EncoderVariant::spatial_only) {
        std::int64_t cin = 1;
        for (std::size_t i = 0; i < config.cnn_filters.size(); ++i) {
            const std::int64_t cout = config.cnn_filters[i], k = config.cnn_kernels[i];
            const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
            ConvBlock b;
            b.weight = uniform_tensor({cout, cin, k}, bound, cnn_rng);
            b.bias = uniform_tensor({cout}, bound, cnn_rng);
            b.gamma = Tensor::full({cout}, 1.0f, true);
            b.beta = Tensor::zeros({cout}, true);
            b.bn = ops::BatchNormState(cout);
            b.pad = k / 2;
            m.encoder.cnn.push_back(std::move(b));
            cin = cout;
        }
    }
    Rng gnn_rng = rng.fork("init.gnn");
    const std::int64_t F = config.feature_dim();
    m.encoder.gnn_weight = uniform_tensor({F, D}, 1.0 / std::sqrt(static_cast<double>(F)), gnn_rng);
    m.encoder.gnn_slope = Tensor::full({1}, 0.25f, true);

    Rng cls_rng = rng.fork("init.classifier");
    const double cb = 1.0 / std::sqrt(static_cast<double>(config.channels * D));
    m.classifier.weight = uniform_tensor({config.channels * D, config.classes}, cb, cls_rng);
    m.classifier.bias = uniform_tensor({config.classes}, cb, cls_rng);

    Rng tr_rng = rng.fork("init.restoration");
    const double hb = 1.0 / std::sqrt(static_cast<double>(D));
    m.restoration.w_ih = uniform_tensor({D, 4 * D}, hb, tr_rng);
    m.restoration.w_hh = uniform_tensor({D, 4 * D}, hb, tr_rng);
    m.restoration.b = uniform_tensor({4 * D}, hb, tr_rng);
    m.restoration.w_out = uniform_tensor({D, D}, hb, tr_rng);
    m.restoration.b_out = uniform_tensor({D}, hb, tr_rng);

    Rng sr_rng = rng.fork("init.rewiring");
    m.rewiring.weight = uniform_tensor({D, D}, hb, sr_rng);
    m.rewiring.slope = Tensor::full({1}, 0.25f, true);
    return m;
}

ParamGroup ModelBundle::param_group(const std::string& name) const {
    ParamGroup g{name, {}};
    if (name == group::cnn) {
        for (std::size_t i = 0; i < encoder.cnn.size(); ++i) {
            const auto p = "cnn." + std::to_string(i) + ".";
            const auto& b = encoder.cnn[i];
            g.params.push_back({p + "weight", b.weight});
            g.params.push_back({p + "bias", b.bias});
            g.params.push_back({p + "bn.gamma", b.gamma});
            g.params.push_back({p + "bn.beta", b.beta});
        }
    } else if (name == group::gnn) {
        g.params = {{"gnn.weight", encoder.gnn_weight}, {"gnn.slope", encoder.gnn_slope}};
    } else if (name == group::classifier) {
        g.params = {{"classifier.weight", classifier.weight}, {"classifier.bias", classifier.bias}};
    } else if (name == group::restoration) {
        if (has_aux) {
            g.params = {{"restoration.w_ih", restoration.w_ih},
                        {"restoration.w_hh", restoration.w_hh},
                        {"restoration.b", restoration.b},
                        {"restoration.w_out", restoration.w_out},
                        {"restoration.b_out", restoration.b_out}};
        }
    } else if (name == group::rewiring) {
        if (has_aux) g.params = {{"rewiring.weight", rewiring.weight}, {"rewiring.slope", rewiring.slope}};
    } else {
        throw ConfigError("unknown parameter group '" + name + "'");
    }
    return g;
}

std::vector<ParamGroup> ModelBundle::param_groups() const {
    return {param_group(group::cnn), param_group(group::gnn), param_group(group::classifier),
            param_group(group::restoration), param_group(group::rewiring)};
}

std::vector<ParamGroup> ModelBundle::encoder_groups() const {
    return {param_group(group::cnn), param_group(group::gnn)};
}

void ModelBundle::set_trainable(const std::string& group_name, bool trainable) {
    for (auto& p : param_group(group_name).params) p.tensor.set_requires_grad(trainable);
}

std::vector<ModelBundle::StateEntry> ModelBundle::state() {
    std::vector<StateEntry> out;
    for (const auto& g : param_groups()) {
        for (auto p : g.params) out.push_back({p.name, g.name, p.tensor.shape(), p.tensor.data()});
        if (g.name == group::cnn) {
            for (std::size_t i = 0; i < encoder.cnn.size(); ++i) {
                auto& bn = encoder.cnn[i].bn;
                const auto p = "cnn." + std::to_string(i) + ".bn.";
                const Shape s{static_cast<std::int64_t>(bn.running_mean.size())};
                out.push_back({p + "running_mean", g.name, s, bn.running_mean});
                out.push_back({p + "running_var", g.name, s, bn.running_var});
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> ModelBundle::group_bytes(const std::string& group_name) const {
    std::vector<std::uint8_t> bytes;
    for (const auto& e : const_cast<ModelBundle*>(this)->state()) {
        if (e.group != group_name) continue;
        const auto* p = reinterpret_cast<const std::uint8_t*>(e.values.data());
        bytes.insert(bytes.end(), p, p + e.values.size_bytes());
    }
    return bytes;
}

ModelBundle ModelBundle::clone() const {
    ModelBundle m;
    m.config = config;
    m.has_aux = has_aux;
    m.encoder.cnn = encoder.cnn;
    auto copy = [](const Tensor& t) {
        if (!t.defined()) return t;
        Tensor c = t.clone();
        c.set_requires_grad(t.requires_grad());
        return c;
    };
    for (auto& b : m.encoder.cnn) {
        b.weight = copy(b.weight);
        b.bias = copy(b.bias);
        b.gamma = copy(b.gamma);
        b.beta = copy(b.beta);
    }
    m.encoder.gnn_weight = copy(encoder.gnn_weight);
    m.encoder.gnn_slope = copy(encoder.gnn_slope);
    m.classifier.weight = copy(classifier.weight);
    m.classifier.bias = copy(classifier.bias);
    m.restoration = clone_params(restoration);
    m.rewiring = clone_params(rewiring);
    return m;
}

namespace {

Tensor copy_param(const Tensor& t) {
    if (!t.defined()) return t;
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
}

}  // namespace

RestorationParams clone_params(const RestorationParams& p) {
    return {copy_param(p.w_ih), copy_param(p.w_hh), copy_param(p.b), copy_param(p.w_out), copy_param(p.b_out)};
}

RewiringParams clone_params(const RewiringParams& p) { return {copy_param(p.weight), copy_param(p.slope)}; }

void ModelBundle::save(const std::filesystem::path& path) const {
    auto entries = const_cast<ModelBundle*>(this)->state();
    nlohmann::json manifest;
    manifest["config"] = model_config_to_json(config);
    manifest["has_aux"] = has_aux;
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name},
                           {"group", e.group},
                           {"shape", e.shape},
                           {"dtype", "float32"},
                           {"offset", offset},
                           {"nbytes", e.values.size_bytes()}});
        offset += e.values.size_bytes();
    }
    manifest["tensors"] = tensors;
    const std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_le<std::uint16_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries) {
        os.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size_bytes()));
    }
    if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::string where = "checkpoint " + path.string();
    ByteReader r(bytes, where);
    char magic[sizeof(kCheckpointMagic)];
    r.read_raw(magic, sizeof(magic));
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw DataError(where + ": bad magic");
    const auto version = r.read<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw DataError(where + ": unsupported format version " + std::to_string(version));
    }
    const auto manifest_len = r.read<std::uint64_t>();
    if (manifest_len > r.remaining()) throw DataError(where + ": manifest length exceeds file size");
    std::string text(manifest_len, '\0');
    r.read_raw(text.data(), manifest_len);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": malformed manifest: " + e.what());
    }
    const std::size_t payload_start = r.position();
    const std::size_t payload_size = r.remaining();

    ModelConfig cfg = model_config_from_json(manifest.at("config"));
    Rng dummy(0);
    ModelBundle m = ModelBundle::create(cfg, dummy);
    m.has_aux = manifest.value("has_aux", true);
    auto entries = m.state();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != entries.size()) {
        throw DataError(where + ": expected " + std::to_string(entries.size()) + " tensors, manifest lists " +
                        std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& t = tensors[i];
        const auto name = t.at("name").get<std::string>();
        if (name != entries[i].name) throw DataError(where + ": unexpected tensor '" + name + "'");
        if (t.at("dtype").get<std::string>() != "float32") throw DataError(where + ": tensor '" + name + "' is not float32");
        if (t.at("shape").get<Shape>() != entries[i].shape) {
            throw DataError(where + ": tensor '" + name + "' has shape " + shape_str(t.at("shape").get<Shape>()) +
                            ", model expects " + shape_str(entries[i].shape));
        }
        const auto off = t.at("offset").get<std::uint64_t>();
        const auto nb = t.at("nbytes").get<std::uint64_t>();
        if (nb != entries[i].values.size_bytes() || off > payload_size || nb > payload_size - off) {
            throw DataError(where + ": tensor '" + name + "' payload out of bounds");
        }
        std::memcpy(entries[i].values.data(), bytes.data() + payload_start + off, nb);
    }
    return m;
}

}  // namespace terse
