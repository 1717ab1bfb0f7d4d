#include "steerlab/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "steerlab/errors.hpp"

namespace steerlab {

namespace {

float half_to_float(uint16_t h) {
    const uint32_t sign = uint32_t(h & 0x8000) << 16;
    uint32_t exp = (h >> 10) & 0x1F;
    uint32_t mant = h & 0x3FF;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            exp = 127 - 15 + 1;
            while ((mant & 0x400) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FF;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

size_t dtype_size(const std::string& dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    if (dtype == "F64") return 8;
    throw ParseError("safetensors: unsupported dtype " + dtype);
}

}  // namespace

int64_t NamedTensor::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::map<std::string, NamedTensor> read_safetensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<uint64_t>(in.tellg());
    in.seekg(0);

    uint8_t len_bytes[8];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 8)) {
        throw ParseError("safetensors: truncated header length in " + path.string());
    }
    uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];
    if (header_len > file_size - 8) {
        throw ParseError("safetensors: header length exceeds file size in " + path.string());
    }

    std::string header(header_len, '\0');
    in.read(header.data(), std::streamsize(header_len));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(header);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("safetensors header: ") + e.what());
    }

    const uint64_t data_start = 8 + header_len;
    std::map<std::string, NamedTensor> out;
    std::vector<char> raw;
    for (const auto& [name, info] : meta.items()) {
        if (name == "__metadata__") continue;
        const std::string dtype = info.at("dtype").get<std::string>();
        NamedTensor t;
        t.shape = info.at("shape").get<std::vector<int64_t>>();
        const auto offsets = info.at("data_offsets").get<std::vector<uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0] || data_start + offsets[1] > file_size) {
            throw ParseError("safetensors: bad data_offsets for " + name);
        }
        const size_t elem = dtype_size(dtype);
        const auto n = static_cast<size_t>(t.numel());
        if (offsets[1] - offsets[0] != n * elem) {
            throw ParseError("safetensors: byte length disagrees with shape for " + name);
        }

        t.data.resize(n);
        in.seekg(std::streamoff(data_start + offsets[0]));
        if (dtype == "F32") {
            in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(n * 4));
        } else {
            raw.resize(n * elem);
            in.read(raw.data(), std::streamsize(raw.size()));
            for (size_t i = 0; i < n; ++i) {
                if (dtype == "F16") {
                    uint16_t h;
                    std::memcpy(&h, raw.data() + 2 * i, 2);
                    t.data[i] = half_to_float(h);
                } else if (dtype == "BF16") {
                    uint16_t h;
                    std::memcpy(&h, raw.data() + 2 * i, 2);
                    t.data[i] = std::bit_cast<float>(uint32_t(h) << 16);
                } else {
                    double d;
                    std::memcpy(&d, raw.data() + 8 * i, 8);
                    t.data[i] = static_cast<float>(d);
                }
            }
        }
        if (!in) {
            throw IoError("safetensors: short read for " + name);
        }
        out.emplace(name, std::move(t));
    }
    return out;
}

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, NamedTensor>& tensors,
                       const std::map<std::string, std::string>& metadata) {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (static_cast<size_t>(t.numel()) != t.data.size()) {
            throw ShapeMismatch("safetensors: shape of " + name + " disagrees with its data length");
        }
        const uint64_t bytes = t.data.size() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string text = header.dump();
    while ((text.size() + 8) % 8 != 0) text.push_back(' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    const uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xFF));
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * 4));
    }
    if (!out) {
        throw IoError("short write to " + path.string());
    }
}

}  // namespace steerlab
