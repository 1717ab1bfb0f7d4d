#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace steerlab {

using TokenId = int32_t;

// Byte-level BPE vocabulary in the published GPT-2 layout: a token->id JSON map
// plus an ordered merge list. Immutable once constructed, so a single instance
// can serve any number of threads.
class Tokenizer {
public:
    // Loads vocab.json + merges.txt. Throws IoError / ParseError /
    // InvalidVocabulary.
    static Tokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

    // Builds from in-memory contents (same formats as the files).
    static Tokenizer from_strings(std::string_view vocab_json, std::string_view merges_txt);

    std::vector<TokenId> encode(std::string_view text) const;

    // Throws OutOfRangeId when an id is outside [0, vocab_size).
    std::string decode(std::span<const TokenId> ids) const;
    std::string decode(const std::vector<TokenId>& ids) const { return decode(std::span<const TokenId>(ids)); }

    // Raw vocabulary string (byte-encoded form, e.g. "Ġlove").
    const std::string& token_string(TokenId id) const;
    // -1 when absent.
    TokenId token_id(std::string_view token) const;

    int vocab_size() const noexcept { return static_cast<int>(id_to_token_.size()); }
    size_t merge_count() const noexcept { return merge_ranks_.size(); }
    // Id of "<|endoftext|>" or -1.
    TokenId eos_id() const noexcept { return eos_id_; }

    // Splits text into the pre-token chunks BPE operates on (GPT-2 regex rules).
    static std::vector<std::string_view> pretokenize(std::string_view text);

private:
    Tokenizer() = default;
    void bpe(std::string_view chunk, std::vector<TokenId>& out) const;

    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> merge_ranks_;  // key: "left right"
    std::array<std::string, 256> byte_encoder_;
    std::unordered_map<uint32_t, uint8_t> byte_decoder_;  // code point -> byte
    TokenId eos_id_ = -1;
};

}  // namespace steerlab
