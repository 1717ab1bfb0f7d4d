#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace steerlab {

// A tensor read from (or destined for) a safetensors container, widened to
// float32. Supported on read: F32, F16, BF16, F64.
struct NamedTensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    int64_t numel() const;
};

// Reads every tensor in the file. Throws IoError / ParseError.
std::map<std::string, NamedTensor> read_safetensors(const std::filesystem::path& path);

// Writes float32 tensors in the safetensors layout (names sorted, header padded
// to 8 bytes).
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, NamedTensor>& tensors,
                       const std::map<std::string, std::string>& metadata = {});

}  // namespace steerlab
