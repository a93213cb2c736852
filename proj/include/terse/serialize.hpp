#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <json.hpp>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "terse/error.hpp"
#include "terse/model.hpp"

// Little-endian binary helpers and JSON mappings shared by the file formats.
namespace terse {

template <typename T>
void write_le(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Bounds-checked cursor over an in-memory file image.
class ByteReader {
   public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

    template <typename T>
    T read() {
        T v;
        read_raw(&v, sizeof(T));
        return v;
    }

    void read_raw(void* dst, std::size_t n) {
        if (n > remaining()) throw DataError(where_ + ": truncated (wanted " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

   private:
    std::span<const std::uint8_t> bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace terse
