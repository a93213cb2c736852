#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "terse/encoder.hpp"

namespace terse {

inline constexpr char kTsdfMagic[5] = {'T', 'S', 'D', 'F', '\0'};
inline constexpr std::uint16_t kTsdfVersion = 1;
inline constexpr int kMetaFormatVersion = 1;

// Header counts above these are rejected before anything is allocated.
inline constexpr std::uint32_t kMaxSamples = 1u << 24;
inline constexpr std::uint32_t kMaxChannels = 1u << 12;
inline constexpr std::uint32_t kMaxLength = 1u << 20;

struct DatasetMeta {
    std::string name;
    std::int64_t channels = 0;
    std::int64_t classes = 0;
    std::int64_t length = 0;
    std::map<std::string, std::int64_t> splits;
    std::string created_by = "terse";
    int format_version = kMetaFormatVersion;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetMeta from_json(const nlohmann::json& j);
};

struct Dataset {
    DatasetMeta meta;
    std::map<std::string, TimeSeriesBatch> splits;

    const TimeSeriesBatch& split(const std::string& name) const;
};

void write_tsdf(const std::filesystem::path& path, const TimeSeriesBatch& batch);
TimeSeriesBatch read_tsdf(const std::filesystem::path& path);

// Writes meta.json and one <split>.tsdf per split; meta.splits is refreshed.
void save_dataset(const std::filesystem::path& dir, Dataset dataset);
DatasetMeta load_meta(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
// One split only, validated against meta.json.
TimeSeriesBatch load_split(const std::filesystem::path& dir, const std::string& split);

struct CsvImportOptions {
    std::string name = "imported";
    std::string split = "train";
    std::int64_t classes = 0;                  // required when labels are given
    std::optional<std::int64_t> channels;      // inferred from the data when unset
    std::optional<std::int64_t> length;
};

// Long-format import: values CSV with header sample_id,channel,t,value and an
// optional labels CSV with header sample_id,label. Samples are ordered by
// ascending sample_id. Writes <split>.tsdf and merges the split into meta.json.
DatasetMeta import_csv(const std::filesystem::path& values_csv, const std::optional<std::filesystem::path>& labels_csv,
                       const std::filesystem::path& out_dir, const CsvImportOptions& options);

struct NormStats {
    std::vector<float> mean;  // per channel
    std::vector<float> std;   // per channel, already floored
};

inline constexpr float kMinStd = 1e-6f;

NormStats fit_normalization(const TimeSeriesBatch& batch);
TimeSeriesBatch apply_normalization(const TimeSeriesBatch& batch, const NormStats& stats);
// Per-channel z-score. Fits on `batch` unless stats are given.
std::pair<TimeSeriesBatch, NormStats> normalize(const TimeSeriesBatch& batch,
                                                const std::optional<NormStats>& stats = std::nullopt);

struct SinusoidArchetype {
    double freq[2];   // cycles per window
    double phase[2];  // radians
    double amp[2];
};

struct DomainTransform {
    double amplitude_scale = 1.0;
    double phase_offset = 0.0;   // radians, added to every component
    double noise = 0.0;          // extra additive Gaussian sigma
    double time_warp = 0.0;      // >= 0: t -> t + w t^2 on the unit interval
    double offset = 0.0;         // per-channel level shift, alternating sign

    bool is_identity() const;
};

struct ShiftSpec {
    std::int64_t channels = 6;
    std::int64_t classes = 4;
    std::int64_t length = 128;
    // [K][N]; filled by make_default_spec.
    std::vector<std::vector<SinusoidArchetype>> archetypes;
    // [N * N] symmetric, unit diagonal, positive definite.
    std::vector<double> correlation;
    double noise = 0.25;         // base noise in both domains
    double freq_jitter = 0.04;   // relative, per sample
    double phase_jitter = 0.6;   // radians, per sample
    double amp_jitter = 0.2;     // relative, per sample
    DomainTransform target;
    // 0 keeps classes balanced; otherwise class k gets weight exp(-imbalance * k).
    double imbalance = 0.0;
    double test_fraction = 0.25;

    void validate() const;
};

// Class archetypes and an equicorrelated-band template drawn from `seed`,
// with the default target transform.
ShiftSpec make_default_spec(std::int64_t channels = 6, std::int64_t classes = 4, std::int64_t length = 128,
                            std::uint64_t seed = 7);

// Starts from make_default_spec and applies the given keys: channels, classes,
// length, archetype_seed, noise, freq_jitter, phase_jitter, amp_jitter,
// imbalance, test_fraction, target {amplitude_scale, phase_offset, noise,
// time_warp, offset}.
ShiftSpec shift_spec_from_json(const nlohmann::json& j);

struct SynthDomains {
    Dataset source;
    Dataset target;
};

// n_per_class samples per class and domain, split into train/test by
// spec.test_fraction. Target labels are for evaluation only.
SynthDomains synth_domains(const ShiftSpec& spec, std::int64_t n_per_class, std::uint64_t seed);

}  // namespace terse
