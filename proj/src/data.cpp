#include "terse/data.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "terse/error.hpp"
#include "terse/rng.hpp"
#include "terse/serialize.hpp"

namespace terse {

namespace fs = std::filesystem;

void DatasetMeta::validate() const {
    if (channels <= 0 || classes <= 0 || length <= 0) {
        throw DataError("meta " + name + ": channels, classes and length must be positive");
    }
    for (const auto& [split, n] : splits)
        if (n < 0) throw DataError("meta " + name + ": split " + split + " has negative count");
}

nlohmann::json DatasetMeta::to_json() const {
    return {{"name", name},     {"channels", channels},     {"classes", classes},
            {"length", length}, {"splits", splits},         {"created_by", created_by},
            {"format_version", format_version}};
}

DatasetMeta DatasetMeta::from_json(const nlohmann::json& j) {
    DatasetMeta m;
    try {
        m.name = j.value("name", std::string());
        m.channels = j.at("channels").get<std::int64_t>();
        m.classes = j.at("classes").get<std::int64_t>();
        m.length = j.at("length").get<std::int64_t>();
        m.splits = j.value("splits", std::map<std::string, std::int64_t>{});
        m.created_by = j.value("created_by", std::string("unknown"));
        m.format_version = j.value("format_version", kMetaFormatVersion);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("meta.json: ") + e.what());
    }
    if (m.format_version != kMetaFormatVersion) {
        throw DataError("meta.json: unsupported format_version " + std::to_string(m.format_version));
    }
    m.validate();
    return m;
}

const TimeSeriesBatch& Dataset::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw DataError("dataset " + meta.name + " has no split '" + name + "'");
    return it->second;
}

void write_tsdf(const fs::path& path, const TimeSeriesBatch& batch) {
    if (!batch.values.defined() || batch.values.rank() != 3) throw DataError("write_tsdf: batch must be [B, N, L]");
    const auto B = batch.values.dim(0), N = batch.values.dim(1), L = batch.values.dim(2);
    if (B > kMaxSamples || N > kMaxChannels || L > kMaxLength) throw DataError("write_tsdf: batch too large");
    if (batch.labels && static_cast<std::int64_t>(batch.labels->size()) != B) {
        throw DataError("write_tsdf: label count does not match batch size");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(kTsdfMagic, sizeof(kTsdfMagic));
    write_le<std::uint16_t>(os, kTsdfVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(B));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(N));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(L));
    write_le<std::uint8_t>(os, batch.labels ? 1 : 0);
    const auto v = batch.values.data();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (batch.labels) {
        os.write(reinterpret_cast<const char*>(batch.labels->data()),
                 static_cast<std::streamsize>(batch.labels->size() * sizeof(std::int32_t)));
    }
    if (!os) throw DataError("write failed: " + path.string());
}

TimeSeriesBatch read_tsdf(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::string where = path.string();
    ByteReader r(bytes, where);
    char magic[sizeof(kTsdfMagic)];
    r.read_raw(magic, sizeof(magic));
    if (std::memcmp(magic, kTsdfMagic, sizeof(magic)) != 0) throw DataError(where + ": bad magic (not a .tsdf file)");
    const auto version = r.read<std::uint16_t>();
    if (version != kTsdfVersion) throw DataError(where + ": unsupported version " + std::to_string(version));
    const auto B = r.read<std::uint32_t>();
    const auto N = r.read<std::uint32_t>();
    const auto L = r.read<std::uint32_t>();
    const auto has_labels = r.read<std::uint8_t>();
    if (B > kMaxSamples || N > kMaxChannels || L > kMaxLength || has_labels > 1) {
        throw DataError(where + ": implausible header");
    }
    const std::uint64_t count = std::uint64_t{B} * N * L;
    const std::uint64_t need = count * sizeof(float) + (has_labels ? std::uint64_t{B} * sizeof(std::int32_t) : 0);
    if (need > r.remaining()) {
        throw DataError(where + ": truncated payload (" + std::to_string(r.remaining()) + " of " +
                        std::to_string(need) + " bytes)");
    }
    if (need < r.remaining()) throw DataError(where + ": trailing bytes after payload");
    std::vector<float> values(count);
    r.read_raw(values.data(), count * sizeof(float));
    TimeSeriesBatch out;
    out.values = Tensor::from_vector({B, N, L}, std::move(values));
    if (has_labels) {
        std::vector<std::int32_t> labels(B);
        r.read_raw(labels.data(), labels.size() * sizeof(std::int32_t));
        out.labels = std::move(labels);
    }
    return out;
}

namespace {

void write_meta(const fs::path& dir, const DatasetMeta& meta) {
    std::ofstream os(dir / "meta.json", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
    os << meta.to_json().dump(2) << "\n";
}

void check_against_meta(const TimeSeriesBatch& b, const DatasetMeta& meta, const std::string& split) {
    if (b.values.dim(1) != meta.channels || b.values.dim(2) != meta.length) {
        throw DataError("split " + split + ": shape " + shape_str(b.values.shape()) + " disagrees with meta [B, " +
                        std::to_string(meta.channels) + ", " + std::to_string(meta.length) + "]");
    }
    auto it = meta.splits.find(split);
    if (it != meta.splits.end() && it->second != b.size()) {
        throw DataError("split " + split + ": " + std::to_string(b.size()) + " samples, meta says " +
                        std::to_string(it->second));
    }
    b.validate(meta.classes);
}

}  // namespace

void save_dataset(const fs::path& dir, Dataset dataset) {
    fs::create_directories(dir);
    dataset.meta.splits.clear();
    for (const auto& [name, batch] : dataset.splits) {
        check_against_meta(batch, dataset.meta, name);
        write_tsdf(dir / (name + ".tsdf"), batch);
        dataset.meta.splits[name] = batch.size();
    }
    dataset.meta.validate();
    write_meta(dir, dataset.meta);
}

DatasetMeta load_meta(const fs::path& dir) {
    const auto path = dir / "meta.json";
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return DatasetMeta::from_json(j);
}

TimeSeriesBatch load_split(const fs::path& dir, const std::string& split) {
    const DatasetMeta meta = load_meta(dir);
    if (!meta.splits.contains(split)) throw DataError("dataset " + dir.string() + " has no split '" + split + "'");
    TimeSeriesBatch b = read_tsdf(dir / (split + ".tsdf"));
    if (b.size() == 0) b.values = Tensor::zeros({0, meta.channels, meta.length});
    check_against_meta(b, meta, split);
    return b;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    d.meta = load_meta(dir);
    for (const auto& [name, n] : d.meta.splits) d.splits[name] = load_split(dir, name);
    return d;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

template <typename T>
T parse_cell(const std::string& s, const std::string& where) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError(where + ": cannot parse '" + s + "'");
    return v;
}

float parse_float(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const float v = std::stof(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw DataError(where + ": invalid value '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw DataError(where + ": invalid value '" + s + "'");
    }
}

void expect_header(std::istream& is, const std::vector<std::string>& want, const fs::path& path) {
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
    if (split_csv_line(line) != want) {
        std::string w;
        for (const auto& c : want) w += (w.empty() ? "" : ",") + c;
        throw DataError(path.string() + ": expected header '" + w + "'");
    }
}

}  // namespace

DatasetMeta import_csv(const fs::path& values_csv, const std::optional<fs::path>& labels_csv, const fs::path& out_dir,
                       const CsvImportOptions& options) {
    std::ifstream is(values_csv);
    if (!is) throw DataError("cannot open " + values_csv.string());
    expect_header(is, {"sample_id", "channel", "t", "value"}, values_csv);

    // sample -> channel -> t -> value
    std::map<std::int64_t, std::map<std::int64_t, std::map<std::int64_t, float>>> rows;
    std::string line;
    std::int64_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::string where = values_csv.filename().string() + ":" + std::to_string(line_no);
        const auto cells = split_csv_line(line);
        if (cells.size() != 4) throw DataError(where + ": expected 4 columns, got " + std::to_string(cells.size()));
        const auto sid = parse_cell<std::int64_t>(cells[0], where);
        const auto ch = parse_cell<std::int64_t>(cells[1], where);
        const auto t = parse_cell<std::int64_t>(cells[2], where);
        if (ch < 0 || t < 0) throw DataError(where + ": negative channel or t");
        auto [it, inserted] = rows[sid][ch].emplace(t, parse_float(cells[3], where));
        if (!inserted) {
            throw DataError(where + ": duplicate entry for sample_id " + std::to_string(sid) + " channel " +
                            std::to_string(ch) + " t " + std::to_string(t));
        }
    }

    std::int64_t N = options.channels.value_or(0), L = options.length.value_or(0);
    for (const auto& [sid, chans] : rows) {
        if (!options.channels) N = std::max(N, chans.rbegin()->first + 1);
        for (const auto& [ch, steps] : chans)
            if (!options.length) L = std::max(L, steps.rbegin()->first + 1);
    }
    if (!rows.empty() && (N <= 0 || L <= 0)) throw DataError("import_csv: could not infer channels/length");

    const auto B = static_cast<std::int64_t>(rows.size());
    std::vector<float> values(static_cast<std::size_t>(B * N * L));
    std::vector<std::int64_t> ids;
    std::int64_t b = 0;
    for (const auto& [sid, chans] : rows) {
        ids.push_back(sid);
        for (std::int64_t ch = 0; ch < N; ++ch) {
            auto it = chans.find(ch);
            if (it == chans.end()) {
                throw DataError("sample_id " + std::to_string(sid) + ": missing channel " + std::to_string(ch));
            }
            const auto& steps = it->second;
            if (static_cast<std::int64_t>(steps.size()) != L || steps.rbegin()->first != L - 1) {
                throw DataError("sample_id " + std::to_string(sid) + " channel " + std::to_string(ch) + ": has " +
                                std::to_string(steps.size()) + " steps, expected t = 0.." + std::to_string(L - 1));
            }
            for (const auto& [t, v] : steps) values[static_cast<std::size_t>((b * N + ch) * L + t)] = v;
        }
        if (chans.rbegin()->first >= N) {
            throw DataError("sample_id " + std::to_string(sid) + ": channel " +
                            std::to_string(chans.rbegin()->first) + " exceeds " + std::to_string(N) + " channels");
        }
        ++b;
    }

    TimeSeriesBatch batch;
    batch.values = Tensor::from_vector({B, N, L}, std::move(values));
    if (labels_csv) {
        std::ifstream ls(*labels_csv);
        if (!ls) throw DataError("cannot open " + labels_csv->string());
        expect_header(ls, {"sample_id", "label"}, *labels_csv);
        std::map<std::int64_t, std::int32_t> labels;
        line_no = 1;
        while (std::getline(ls, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            const std::string where = labels_csv->filename().string() + ":" + std::to_string(line_no);
            const auto cells = split_csv_line(line);
            if (cells.size() != 2) throw DataError(where + ": expected 2 columns");
            const auto sid = parse_cell<std::int64_t>(cells[0], where);
            const auto y = parse_cell<std::int32_t>(cells[1], where);
            if (options.classes <= 0) throw DataError("import_csv: --classes is required with labels");
            if (y < 0 || y >= options.classes) {
                throw DataError(where + ": label " + std::to_string(y) + " for sample_id " + std::to_string(sid) +
                                " outside [0, " + std::to_string(options.classes) + ")");
            }
            if (!labels.emplace(sid, y).second) throw DataError(where + ": duplicate sample_id " + std::to_string(sid));
        }
        std::vector<std::int32_t> ys;
        for (auto sid : ids) {
            auto it = labels.find(sid);
            if (it == labels.end()) throw DataError("sample_id " + std::to_string(sid) + ": no label");
            ys.push_back(it->second);
        }
        if (labels.size() != ids.size()) throw DataError("labels CSV names sample ids absent from the values CSV");
        batch.labels = std::move(ys);
    }

    fs::create_directories(out_dir);
    DatasetMeta meta;
    if (fs::exists(out_dir / "meta.json")) {
        meta = load_meta(out_dir);
        if (B > 0 && (meta.channels != N || meta.length != L)) {
            throw DataError("import_csv: [" + std::to_string(N) + ", " + std::to_string(L) +
                            "] disagrees with existing meta.json");
        }
        if (options.classes > 0) meta.classes = options.classes;
    } else {
        meta.name = options.name;
        meta.channels = N;
        meta.length = L;
        meta.classes = options.classes > 0 ? options.classes : 1;
        meta.created_by = "terse import-csv";
    }
    if (B == 0) batch.values = Tensor::zeros({0, meta.channels, meta.length});
    meta.splits[options.split] = B;
    meta.validate();
    write_tsdf(out_dir / (options.split + ".tsdf"), batch);
    write_meta(out_dir, meta);
    return meta;
}

NormStats fit_normalization(const TimeSeriesBatch& batch) {
    const auto& x = batch.values;
    const auto B = x.dim(0), N = x.dim(1), L = x.dim(2);
    NormStats s{std::vector<float>(N, 0.0f), std::vector<float>(N, 1.0f)};
    if (B == 0) return s;
    const auto v = x.data();
    for (std::int64_t n = 0; n < N; ++n) {
        double sum = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) sum += v[(b * N + n) * L + t];
        const double mu = sum / static_cast<double>(B * L);
        double sq = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) {
                const double d = v[(b * N + n) * L + t] - mu;
                sq += d * d;
            }
        s.mean[n] = static_cast<float>(mu);
        s.std[n] = std::max(static_cast<float>(std::sqrt(sq / static_cast<double>(B * L))), kMinStd);
    }
    return s;
}

TimeSeriesBatch apply_normalization(const TimeSeriesBatch& batch, const NormStats& stats) {
    const auto& x = batch.values;
    const auto B = x.dim(0), N = x.dim(1), L = x.dim(2);
    if (static_cast<std::int64_t>(stats.mean.size()) != N || static_cast<std::int64_t>(stats.std.size()) != N) {
        throw DataError("normalization stats cover " + std::to_string(stats.mean.size()) + " channels, batch has " +
                        std::to_string(N));
    }
    TimeSeriesBatch out{x.clone(), batch.labels};
    auto v = out.values.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n) {
            const float mu = stats.mean[n], inv = 1.0f / std::max(stats.std[n], kMinStd);
            for (std::int64_t t = 0; t < L; ++t) {
                float& e = v[(b * N + n) * L + t];
                e = (e - mu) * inv;
            }
        }
    return out;
}

std::pair<TimeSeriesBatch, NormStats> normalize(const TimeSeriesBatch& batch, const std::optional<NormStats>& stats) {
    NormStats s = stats ? *stats : fit_normalization(batch);
    return {apply_normalization(batch, s), std::move(s)};
}

bool DomainTransform::is_identity() const {
    return amplitude_scale == 1.0 && phase_offset == 0.0 && noise == 0.0 && time_warp == 0.0 && offset == 0.0;
}

void ShiftSpec::validate() const {
    if (classes < 2) throw ConfigError("shift spec: need at least 2 classes");
    if (channels < 3) throw ConfigError("shift spec: need at least 3 channels");
    if (length < 2) throw ConfigError("shift spec: length must be at least 2");
    if (static_cast<std::int64_t>(archetypes.size()) != classes) {
        throw ConfigError("shift spec: expected archetypes for " + std::to_string(classes) + " classes");
    }
    for (const auto& a : archetypes)
        if (static_cast<std::int64_t>(a.size()) != channels) throw ConfigError("shift spec: archetype channel count");
    const auto same = [&](std::size_t i, std::size_t j) {
        for (std::int64_t n = 0; n < channels; ++n)
            for (int c = 0; c < 2; ++c) {
                const auto& p = archetypes[i][n];
                const auto& q = archetypes[j][n];
                if (std::abs(p.freq[c] - q.freq[c]) > 1e-9 || std::abs(p.phase[c] - q.phase[c]) > 1e-9 ||
                    std::abs(p.amp[c] - q.amp[c]) > 1e-9)
                    return false;
            }
        return true;
    };
    for (std::size_t i = 0; i < archetypes.size(); ++i)
        for (std::size_t j = i + 1; j < archetypes.size(); ++j)
            if (same(i, j)) {
                throw ConfigError("shift spec: classes " + std::to_string(i) + " and " + std::to_string(j) +
                                  " have identical archetypes");
            }
    const auto N = static_cast<std::size_t>(channels);
    if (correlation.size() != N * N) throw ConfigError("shift spec: correlation template must be [N, N]");
    for (std::size_t i = 0; i < N; ++i) {
        if (std::abs(correlation[i * N + i] - 1.0) > 1e-9) throw ConfigError("shift spec: correlation diagonal must be 1");
        for (std::size_t j = 0; j < N; ++j)
            if (std::abs(correlation[i * N + j] - correlation[j * N + i]) > 1e-9) {
                throw ConfigError("shift spec: correlation template must be symmetric");
            }
    }
    if (noise < 0 || freq_jitter < 0 || phase_jitter < 0 || amp_jitter < 0 || target.noise < 0) {
        throw ConfigError("shift spec: noise and jitter must be non-negative");
    }
    if (target.time_warp < 0) throw ConfigError("shift spec: time_warp must be non-negative");
    if (target.amplitude_scale <= 0) throw ConfigError("shift spec: amplitude_scale must be positive");
    if (imbalance < 0) throw ConfigError("shift spec: imbalance must be non-negative");
    if (test_fraction < 0 || test_fraction >= 1) throw ConfigError("shift spec: test_fraction must be in [0, 1)");
}

ShiftSpec make_default_spec(std::int64_t channels, std::int64_t classes, std::int64_t length, std::uint64_t seed) {
    ShiftSpec s;
    s.channels = channels;
    s.classes = classes;
    s.length = length;
    Rng rng = Rng(seed).fork("archetypes");
    for (std::int64_t k = 0; k < classes; ++k) {
        std::vector<SinusoidArchetype> row;
        const double base = 2.0 + 2.5 * static_cast<double>(k);
        for (std::int64_t n = 0; n < channels; ++n) {
            SinusoidArchetype a{};
            a.freq[0] = base * rng.uniform(0.9, 1.1);
            a.freq[1] = a.freq[0] * rng.uniform(1.6, 2.4);
            a.phase[0] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            a.phase[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            a.amp[0] = 1.0;
            a.amp[1] = rng.uniform(0.3, 0.7);
            row.push_back(a);
        }
        s.archetypes.push_back(std::move(row));
    }
    // AR(1)-style band: rho^|i-j|.
    const double rho = 0.6;
    s.correlation.resize(static_cast<std::size_t>(channels * channels));
    for (std::int64_t i = 0; i < channels; ++i)
        for (std::int64_t j = 0; j < channels; ++j)
            s.correlation[static_cast<std::size_t>(i * channels + j)] = std::pow(rho, std::abs(i - j));
    s.target.amplitude_scale = 1.6;
    s.target.phase_offset = 1.0;
    s.target.noise = 0.3;
    s.target.time_warp = 0.35;
    s.target.offset = 1.5;
    return s;
}

ShiftSpec shift_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("shift spec: expected an object");
    static const std::set<std::string> keys{"channels",     "classes",   "length",    "archetype_seed",
                                            "noise",        "freq_jitter", "phase_jitter", "amp_jitter",
                                            "imbalance",    "test_fraction", "target"};
    static const std::set<std::string> target_keys{"amplitude_scale", "phase_offset", "noise", "time_warp", "offset"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!keys.contains(it.key())) throw ConfigError("shift spec: unknown key '" + it.key() + "'");
    try {
        ShiftSpec s = make_default_spec(j.value("channels", std::int64_t{6}), j.value("classes", std::int64_t{4}),
                                        j.value("length", std::int64_t{128}), j.value("archetype_seed", std::uint64_t{7}));
        s.noise = j.value("noise", s.noise);
        s.freq_jitter = j.value("freq_jitter", s.freq_jitter);
        s.phase_jitter = j.value("phase_jitter", s.phase_jitter);
        s.amp_jitter = j.value("amp_jitter", s.amp_jitter);
        s.imbalance = j.value("imbalance", s.imbalance);
        s.test_fraction = j.value("test_fraction", s.test_fraction);
        if (j.contains("target")) {
            const auto& t = j["target"];
            if (!t.is_object()) throw ConfigError("shift spec: target must be an object");
            for (auto it = t.begin(); it != t.end(); ++it)
                if (!target_keys.contains(it.key())) throw ConfigError("shift spec: unknown target key '" + it.key() + "'");
            s.target.amplitude_scale = t.value("amplitude_scale", s.target.amplitude_scale);
            s.target.phase_offset = t.value("phase_offset", s.target.phase_offset);
            s.target.noise = t.value("noise", s.target.noise);
            s.target.time_warp = t.value("time_warp", s.target.time_warp);
            s.target.offset = t.value("offset", s.target.offset);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("shift spec: ") + e.what());
    }
}

namespace {

std::vector<std::int64_t> class_counts(const ShiftSpec& spec, std::int64_t n_per_class) {
    const auto K = spec.classes;
    std::vector<std::int64_t> counts(K, n_per_class);
    if (spec.imbalance == 0.0) return counts;
    // Largest-remainder allocation of K * n_per_class samples.
    std::vector<double> w(K);
    double total_w = 0.0;
    for (std::int64_t k = 0; k < K; ++k) total_w += (w[k] = std::exp(-spec.imbalance * static_cast<double>(k)));
    const std::int64_t total = K * n_per_class;
    std::int64_t used = 0;
    std::vector<std::pair<double, std::int64_t>> rem;
    for (std::int64_t k = 0; k < K; ++k) {
        const double exact = static_cast<double>(total) * w[k] / total_w;
        counts[k] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(exact)));
        used += counts[k];
        rem.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; used < total && i < rem.size(); ++i, ++used) ++counts[rem[i].second];
    return counts;
}

struct DomainDraw {
    TimeSeriesBatch train, test;
};

DomainDraw draw_domain(const ShiftSpec& spec, const DomainTransform& tf, const Eigen::MatrixXd& chol,
                       std::int64_t n_per_class, Rng rng) {
    const auto N = spec.channels, L = spec.length, K = spec.classes;
    const auto counts = class_counts(spec, n_per_class);
    std::vector<std::int32_t> train_y, test_y;
    std::vector<float> train_x, test_x;
    const double noise = std::sqrt(spec.noise * spec.noise + tf.noise * tf.noise);
    Eigen::MatrixXd s(N, L);
    for (std::int64_t k = 0; k < K; ++k) {
        const auto n_test = static_cast<std::int64_t>(std::llround(spec.test_fraction * static_cast<double>(counts[k])));
        for (std::int64_t i = 0; i < counts[k]; ++i) {
            const double fj = 1.0 + spec.freq_jitter * rng.normal();
            const double aj = 1.0 + spec.amp_jitter * rng.uniform(-1.0, 1.0);
            for (std::int64_t n = 0; n < N; ++n) {
                const auto& a = spec.archetypes[k][n];
                const double pj = spec.phase_jitter * rng.uniform(-1.0, 1.0);
                for (std::int64_t t = 0; t < L; ++t) {
                    const double u0 = static_cast<double>(t) / static_cast<double>(L);
                    const double u = u0 + tf.time_warp * u0 * u0;
                    double v = 0.0;
                    for (int c = 0; c < 2; ++c) {
                        v += a.amp[c] * std::sin(2.0 * std::numbers::pi * a.freq[c] * fj * u + a.phase[c] + pj +
                                                 tf.phase_offset);
                    }
                    s(n, t) = aj * v;
                }
            }
            const Eigen::MatrixXd mixed = chol * s;
            auto& xs = i < n_test ? test_x : train_x;
            (i < n_test ? test_y : train_y).push_back(static_cast<std::int32_t>(k));
            for (std::int64_t n = 0; n < N; ++n) {
                const double level = tf.offset * (n % 2 == 0 ? 1.0 : -1.0);
                for (std::int64_t t = 0; t < L; ++t) {
                    xs.push_back(static_cast<float>(tf.amplitude_scale * mixed(n, t) + level + noise * rng.normal()));
                }
            }
        }
    }
    const auto shuffled = [&](std::vector<float>& x, std::vector<std::int32_t>& y) {
        const auto B = static_cast<std::int64_t>(y.size());
        const auto perm = rng.permutation(y.size());
        std::vector<float> px(x.size());
        std::vector<std::int32_t> py(y.size());
        for (std::int64_t i = 0; i < B; ++i) {
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[i] * N * L), N * L,
                        px.begin() + static_cast<std::ptrdiff_t>(i * N * L));
            py[i] = y[perm[i]];
        }
        return TimeSeriesBatch{Tensor::from_vector({B, N, L}, std::move(px)), std::move(py)};
    };
    DomainDraw d;
    d.train = shuffled(train_x, train_y);
    d.test = shuffled(test_x, test_y);
    return d;
}

}  // namespace

SynthDomains synth_domains(const ShiftSpec& spec, std::int64_t n_per_class, std::uint64_t seed) {
    spec.validate();
    if (n_per_class < 1) throw ConfigError("synth_domains: n_per_class must be at least 1");
    const auto N = spec.channels;
    Eigen::MatrixXd corr(N, N);
    for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t j = 0; j < N; ++j) corr(i, j) = spec.correlation[static_cast<std::size_t>(i * N + j)];
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) throw ConfigError("shift spec: correlation template is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    const Rng root(seed);
    const auto make = [&](const std::string& name, const DomainTransform& tf, const char* stream) {
        DomainDraw d = draw_domain(spec, tf, chol, n_per_class, root.fork(stream));
        Dataset ds;
        ds.meta.name = name;
        ds.meta.channels = N;
        ds.meta.classes = spec.classes;
        ds.meta.length = spec.length;
        ds.meta.created_by = "terse synth";
        ds.meta.splits = {{"train", d.train.size()}, {"test", d.test.size()}};
        ds.splits["train"] = std::move(d.train);
        ds.splits["test"] = std::move(d.test);
        return ds;
    };
    return SynthDomains{make("synth_source", DomainTransform{}, "source"), make("synth_target", spec.target, "target")};
}

}  // namespace terse
