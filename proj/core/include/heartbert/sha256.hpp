#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace heartbert {

// Minimal SHA-256, used for artifact provenance hashes and freeze checks.
class Sha256 {
public:
    Sha256();

    void update(const void* data, size_t len);
    void update(std::string_view bytes) { update(bytes.data(), bytes.size()); }

    std::array<uint8_t, 32> finish();

    static std::string hex_digest(std::string_view bytes);
    static std::string hex_digest_file(const std::string& path);

private:
    void process_block(const uint8_t* block);

    uint32_t state_[8];
    uint64_t total_len_ = 0;
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
};

std::string to_hex(const std::array<uint8_t, 32>& digest);

}  // namespace heartbert
