#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "terse/ops.hpp"
#include "terse/optim.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

namespace terse {

enum class EncoderVariant {
    full,           // temporal CNN -> graph learner -> spatial GNN
    temporal_only,  // temporal CNN, identity graph (no cross-channel mixing)
    spatial_only,   // raw channel signals -> graph learner -> spatial GNN
};

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);

struct ModelConfig {
    std::int64_t channels = 9;
    std::int64_t classes = 6;
    std::int64_t length = 128;
    std::vector<std::int64_t> cnn_filters{64, 128, 128};
    std::vector<std::int64_t> cnn_kernels{8, 5, 3};
    std::int64_t pool = 2;
    std::int64_t embed_dim = 256;
    EncoderVariant variant = EncoderVariant::full;

    // Width of the per-channel feature vector that enters the graph learner.
    std::int64_t feature_dim() const;
    // Throws ConfigError when the CNN pyramid cannot process `length` steps.
    void validate() const;
};

struct ConvBlock {
    Tensor weight;  // [Cout, Cin, K]
    Tensor bias;    // [Cout]
    Tensor gamma;   // [Cout]
    Tensor beta;    // [Cout]
    ops::BatchNormState bn;
    std::int64_t pad = 0;
};

struct EncoderParams {
    std::vector<ConvBlock> cnn;
    Tensor gnn_weight;  // [F, D]
    Tensor gnn_slope;   // [1]
};

struct ClassifierParams {
    Tensor weight;  // [N*D, K]
    Tensor bias;    // [K]
};

// Single-layer LSTM over the node axis plus a per-step output projection.
// Gate order in the packed matrices: input, forget, cell, output.
struct RestorationParams {
    Tensor w_ih;   // [D, 4D]
    Tensor w_hh;   // [D, 4D]
    Tensor b;      // [4D]
    Tensor w_out;  // [D, D]
    Tensor b_out;  // [D]
};

struct RewiringParams {
    Tensor weight;  // [D, D]
    Tensor slope;   // [1]
};

RestorationParams clone_params(const RestorationParams& p);
RewiringParams clone_params(const RewiringParams& p);

namespace group {
inline constexpr const char* cnn = "encoder.cnn";
inline constexpr const char* gnn = "encoder.gnn";
inline constexpr const char* classifier = "classifier";
inline constexpr const char* restoration = "restoration";
inline constexpr const char* rewiring = "rewiring";
}  // namespace group

/// Every parameter of the encoder, classifier and both auxiliary heads.
class ModelBundle {
   public:
    ModelConfig config;
    EncoderParams encoder;
    ClassifierParams classifier;
    RestorationParams restoration;
    RewiringParams rewiring;
    bool has_aux = true;

    // PyTorch-default initialisation drawn from rng.
    static ModelBundle create(const ModelConfig& config, Rng& rng);

    // Deep copy: no buffer is shared with the original.
    ModelBundle clone() const;

    ParamGroup param_group(const std::string& name) const;
    std::vector<ParamGroup> param_groups() const;
    std::vector<ParamGroup> encoder_groups() const;

    // Toggles requires_grad on every tensor of a group.
    void set_trainable(const std::string& group_name, bool trainable);

    struct StateEntry {
        std::string name;
        std::string group;
        Shape shape;
        std::span<float> values;
    };
    // All parameters and BN running statistics in a fixed order.
    std::vector<StateEntry> state();

    // Raw bytes of one group's parameters (BN running stats included for the CNN).
    std::vector<std::uint8_t> group_bytes(const std::string& group_name) const;

    void save(const std::filesystem::path& path) const;
    static ModelBundle load(const std::filesystem::path& path);
};

inline constexpr char kCheckpointMagic[10] = {'T', 'E', 'R', 'S', 'E', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace terse
