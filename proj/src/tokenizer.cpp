#include "steerlab/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>
#include <unicode/uchar.h>

#include "steerlab/errors.hpp"

namespace steerlab {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(char(cp));
    } else if (cp < 0x800) {
        out.push_back(char(0xC0 | (cp >> 6)));
        out.push_back(char(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(char(0xE0 | (cp >> 12)));
        out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(char(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(char(0xF0 | (cp >> 18)));
        out.push_back(char(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(char(0x80 | (cp & 0x3F)));
    }
}

// Decodes one code point starting at text[i]. Invalid sequences decode as a
// single byte with cp = 0xFFFFFFFF so they fall in the "other" class.
struct CodePoint {
    uint32_t cp;
    size_t len;
};

constexpr uint32_t kInvalid = 0xFFFFFFFFu;

CodePoint decode_utf8(std::string_view s, size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return {b0, 1};
    auto cont = [&](size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    auto at = [&](size_t k) { return uint32_t(static_cast<unsigned char>(s[i + k]) & 0x3F); };
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        const uint32_t cp = (uint32_t(b0 & 0x1F) << 6) | at(1);
        if (cp >= 0x80) return {cp, 2};
    } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        const uint32_t cp = (uint32_t(b0 & 0x0F) << 12) | (at(1) << 6) | at(2);
        if (cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) return {cp, 3};
    } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        const uint32_t cp = (uint32_t(b0 & 0x07) << 18) | (at(1) << 12) | (at(2) << 6) | at(3);
        if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
    }
    return {kInvalid, 1};
}

enum class CharClass { Letter, Number, Space, Other };

// Whitespace set of Python's str.isspace, which is what the reference regex's
// \s matches.
bool is_space(uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x1C: case 0x1D: case 0x1E: case 0x1F: case 0x20:
        case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

CharClass classify(uint32_t cp) {
    if (cp == kInvalid) return CharClass::Other;
    if (cp < 0x80) {
        if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::Letter;
        if (cp >= '0' && cp <= '9') return CharClass::Number;
        return is_space(cp) ? CharClass::Space : CharClass::Other;
    }
    if (is_space(cp)) return CharClass::Space;
    switch (u_charType(static_cast<UChar32>(cp))) {
        case U_UPPERCASE_LETTER:
        case U_LOWERCASE_LETTER:
        case U_TITLECASE_LETTER:
        case U_MODIFIER_LETTER:
        case U_OTHER_LETTER:
            return CharClass::Letter;
        case U_DECIMAL_DIGIT_NUMBER:
        case U_LETTER_NUMBER:
        case U_OTHER_NUMBER:
            return CharClass::Number;
        default:
            return CharClass::Other;
    }
}

// Printable stand-ins for the 256 byte values, same table as the reference
// byte-level BPE.
std::array<uint32_t, 256> byte_to_codepoint() {
    std::array<uint32_t, 256> table{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
        table[b] = direct[b] ? uint32_t(b) : next++;
    }
    return table;
}

}  // namespace

std::vector<std::string_view> Tokenizer::pretokenize(std::string_view text) {
    std::vector<std::string_view> out;
    const size_t n = text.size();
    size_t i = 0;

    auto class_at = [&](size_t pos) { return classify(decode_utf8(text, pos).cp); };
    // Consumes a run of characters of class `cls` starting at pos.
    auto run_end = [&](size_t pos, CharClass cls) {
        while (pos < n) {
            const CodePoint c = decode_utf8(text, pos);
            if (classify(c.cp) != cls) break;
            pos += c.len;
        }
        return pos;
    };

    while (i < n) {
        // Contractions: 's 't 're 've 'm 'll 'd (case-sensitive).
        if (text[i] == '\'' && i + 1 < n) {
            const std::string_view rest = text.substr(i + 1);
            size_t len = 0;
            if (rest.starts_with("re") || rest.starts_with("ve") || rest.starts_with("ll")) {
                len = 3;
            } else if (rest[0] == 's' || rest[0] == 't' || rest[0] == 'm' || rest[0] == 'd') {
                len = 2;
            }
            if (len != 0) {
                out.push_back(text.substr(i, len));
                i += len;
                continue;
            }
        }

        const CodePoint c = decode_utf8(text, i);
        const CharClass cls = classify(c.cp);

        // " ?\p{L}+", " ?\p{N}+", " ?[^\s\p{L}\p{N}]+"
        size_t start = i;
        size_t body = i;
        CharClass body_cls = cls;
        if (text[i] == ' ' && i + 1 < n) {
            const CharClass next = class_at(i + 1);
            if (next != CharClass::Space) {
                body = i + 1;
                body_cls = next;
            }
        }
        if (body_cls != CharClass::Space) {
            const size_t end = run_end(body, body_cls);
            out.push_back(text.substr(start, end - start));
            i = end;
            continue;
        }

        // "\s+(?!\S)" then "\s+"
        size_t end = i;
        size_t last_start = i;
        while (end < n) {
            const CodePoint w = decode_utf8(text, end);
            if (classify(w.cp) != CharClass::Space) break;
            last_start = end;
            end += w.len;
        }
        if (end < n && last_start > i) {
            // Leave the final whitespace character to attach to the next chunk.
            end = last_start;
        }
        out.push_back(text.substr(i, end - i));
        i = end;
    }
    return out;
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    return from_strings(read_file(vocab_json), read_file(merges_txt));
}

Tokenizer Tokenizer::from_strings(std::string_view vocab_json, std::string_view merges_txt) {
    Tokenizer tok;

    const auto table = byte_to_codepoint();
    for (int b = 0; b < 256; ++b) {
        append_utf8(tok.byte_encoder_[b], table[b]);
        tok.byte_decoder_[table[b]] = static_cast<uint8_t>(b);
    }

    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("vocab.json: ") + e.what());
    }
    if (!vocab.is_object()) {
        throw ParseError("vocab.json: expected a JSON object of token -> id");
    }

    const size_t n = vocab.size();
    tok.id_to_token_.assign(n, {});
    std::vector<bool> seen(n, false);
    for (const auto& [token, id_json] : vocab.items()) {
        if (!id_json.is_number_integer()) {
            throw ParseError("vocab.json: id for '" + token + "' is not an integer");
        }
        const auto id = id_json.get<int64_t>();
        if (id < 0 || size_t(id) >= n || seen[size_t(id)]) {
            throw InvalidVocabulary("vocab.json: ids must be dense and unique in [0, vocab_size)");
        }
        seen[size_t(id)] = true;
        tok.id_to_token_[size_t(id)] = token;
        tok.token_to_id_.emplace(token, static_cast<TokenId>(id));
    }
    if (auto it = tok.token_to_id_.find("<|endoftext|>"); it != tok.token_to_id_.end()) {
        tok.eos_id_ = it->second;
    }

    // Each merge must combine symbols that are base bytes or earlier merge outputs.
    std::unordered_set<std::string> constructible(tok.byte_encoder_.begin(), tok.byte_encoder_.end());
    size_t pos = 0;
    int line_no = 0;
    int rank = 0;
    while (pos < merges_txt.size()) {
        size_t eol = merges_txt.find('\n', pos);
        if (eol == std::string_view::npos) eol = merges_txt.size();
        std::string_view line = merges_txt.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line_no == 1 && line.starts_with("#")) continue;
        if (line.empty()) continue;

        const size_t sp = line.find(' ');
        if (sp == std::string_view::npos || sp == 0 || sp + 1 >= line.size() ||
            line.find(' ', sp + 1) != std::string_view::npos) {
            throw ParseError("merges.txt line " + std::to_string(line_no) + ": expected '<left> <right>'");
        }
        const std::string left(line.substr(0, sp));
        const std::string right(line.substr(sp + 1));
        if (!constructible.contains(left) || !constructible.contains(right)) {
            throw InvalidVocabulary("merges.txt line " + std::to_string(line_no) +
                                    ": merge references a symbol not built by earlier merges");
        }
        constructible.insert(left + right);
        tok.merge_ranks_.emplace(left + " " + right, rank++);
    }

    for (const auto& s : tok.byte_encoder_) {
        if (!tok.token_to_id_.contains(s)) {
            throw InvalidVocabulary("vocab.json lacks the base byte symbol '" + s + "'");
        }
    }
    return tok;
}

void Tokenizer::bpe(std::string_view chunk, std::vector<TokenId>& out) const {
    std::vector<std::string> symbols;
    symbols.reserve(chunk.size());
    for (char ch : chunk) {
        symbols.push_back(byte_encoder_[static_cast<unsigned char>(ch)]);
    }

    std::string key;
    while (symbols.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        size_t best = 0;
        for (size_t k = 0; k + 1 < symbols.size(); ++k) {
            key.assign(symbols[k]).append(" ").append(symbols[k + 1]);
            auto it = merge_ranks_.find(key);
            if (it != merge_ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = k;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) break;

        const std::string left = symbols[best];
        const std::string right = symbols[best + 1];
        std::vector<std::string> merged;
        merged.reserve(symbols.size());
        for (size_t k = 0; k < symbols.size();) {
            if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
                merged.push_back(left + right);
                k += 2;
            } else {
                merged.push_back(std::move(symbols[k]));
                ++k;
            }
        }
        symbols = std::move(merged);
    }

    for (const auto& s : symbols) {
        auto it = token_to_id_.find(s);
        if (it != token_to_id_.end()) {
            out.push_back(it->second);
        } else {
            // Merge output missing from the vocab: emit its base byte symbols.
            size_t p = 0;
            while (p < s.size()) {
                const CodePoint c = decode_utf8(s, p);
                out.push_back(token_to_id_.at(s.substr(p, c.len)));
                p += c.len;
            }
        }
    }
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    static constexpr std::string_view kEos = "<|endoftext|>";
    std::vector<TokenId> ids;
    // The end-of-text marker is atomic; text between markers is ordinary.
    while (!text.empty()) {
        const size_t at = eos_id_ >= 0 ? text.find(kEos) : std::string_view::npos;
        for (std::string_view chunk : pretokenize(text.substr(0, at))) bpe(chunk, ids);
        if (at == std::string_view::npos) break;
        ids.push_back(eos_id_);
        text.remove_prefix(at + kEos.size());
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || id >= vocab_size()) {
            throw OutOfRangeId("token id " + std::to_string(id) + " outside [0, " + std::to_string(vocab_size()) + ")");
        }
        const std::string& s = id_to_token_[size_t(id)];
        size_t p = 0;
        while (p < s.size()) {
            const CodePoint c = decode_utf8(s, p);
            auto it = byte_decoder_.find(c.cp);
            if (it != byte_decoder_.end()) {
                out.push_back(static_cast<char>(it->second));
            } else {
                out.append(s, p, c.len);
            }
            p += c.len;
        }
    }
    return out;
}

const std::string& Tokenizer::token_string(TokenId id) const {
    if (id < 0 || id >= vocab_size()) {
        throw OutOfRangeId("token id " + std::to_string(id) + " outside [0, " + std::to_string(vocab_size()) + ")");
    }
    return id_to_token_[size_t(id)];
}

TokenId Tokenizer::token_id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? -1 : it->second;
}

}  // namespace steerlab
