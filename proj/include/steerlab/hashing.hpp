#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace steerlab {

// Incremental SHA-256 returning lowercase hex.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::string_view bytes);
    Sha256& update(std::span<const float> values);
    Sha256& update(std::span<const int32_t> values);
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view bytes);

// Seeded generator with platform-independent integer draws (the standard
// distributions are implementation-defined).
class SplitRng {
public:
    explicit SplitRng(uint64_t seed) : state_(seed) {}

    uint64_t next();
    // Uniform in [0, bound).
    uint64_t below(uint64_t bound);

private:
    uint64_t state_;
};

}  // namespace steerlab
