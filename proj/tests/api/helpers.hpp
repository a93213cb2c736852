#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace api_test {

namespace fs = std::filesystem;

inline const char* kSpec = R"({"channels": 4, "classes": 3, "length": 32})";
inline const char* kConfig =
    R"({"model": {"cnn_filters": [8, 8, 8], "embed_dim": 8},
        "train": {"epochs": 1, "adapt_epochs": 1, "batch_size": 16}, "seeds": [0, 1]})";

inline fs::path fresh_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("terse_api_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

inline std::string slurp_text(const fs::path& p) {
    const auto b = slurp(p);
    return {b.begin(), b.end()};
}

inline void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Hand-rolled .tsdf writer, independent of the library's own.
inline void write_tsdf(const fs::path& p, std::uint32_t B, std::uint32_t N, std::uint32_t L,
                       const std::vector<float>& values, const std::vector<std::int32_t>* labels) {
    std::ofstream os(p, std::ios::binary);
    os.write("TSDF\0", 5);
    const std::uint16_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 2);
    for (std::uint32_t v : {B, N, L}) os.write(reinterpret_cast<const char*>(&v), 4);
    const std::uint8_t has = labels ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has), 1);
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    if (labels) os.write(reinterpret_cast<const char*>(labels->data()), static_cast<std::streamsize>(labels->size() * 4));
}

// A dataset directory with one labelled train split.
inline void write_dataset(const fs::path& dir, std::uint32_t B, std::uint32_t N, std::uint32_t L, std::int32_t K,
                          const std::vector<float>& values, const std::vector<std::int32_t>& labels) {
    fs::create_directories(dir);
    write_tsdf(dir / "train.tsdf", B, N, L, values, &labels);
    spit(dir / "meta.json", "{\"name\": \"hand\", \"channels\": " + std::to_string(N) + ", \"classes\": " +
                                std::to_string(K) + ", \"length\": " + std::to_string(L) +
                                ", \"splits\": {\"train\": " + std::to_string(B) + "}}");
}

}  // namespace api_test
