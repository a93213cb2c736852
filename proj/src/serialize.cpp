#include "terse/serialize.hpp"

#include <fstream>
#include <iterator>

namespace terse {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"channels", c.channels},       {"classes", c.classes},         {"length", c.length},
            {"cnn_filters", c.cnn_filters}, {"cnn_kernels", c.cnn_kernels}, {"pool", c.pool},
            {"embed_dim", c.embed_dim},     {"encoder", to_string(c.variant)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.channels = j.value("channels", c.channels);
        c.classes = j.value("classes", c.classes);
        c.length = j.value("length", c.length);
        c.cnn_filters = j.value("cnn_filters", c.cnn_filters);
        c.cnn_kernels = j.value("cnn_kernels", c.cnn_kernels);
        c.pool = j.value("pool", c.pool);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.variant = encoder_variant_from_string(j.value("encoder", std::string("full")));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

}  // namespace terse
