// SPDX-License-Identifier: Apache-2.0
#include "bugprio/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

namespace bugprio {

namespace {

constexpr std::array<std::string_view, special::kCount> kSpecialNames = {"[CLS]", "[EOS]", "[MASK]", "[PAD]"};
constexpr std::string_view kVocabMagic = "bugprio-bbpe";
constexpr int kVocabVersion = 1;

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// Byte -> printable code point table (space becomes U+0120 'Ġ').
struct ByteMap {
    std::array<std::string, 256> to_display;
    std::unordered_map<std::string, unsigned char> from_display;

    ByteMap() {
        std::uint32_t next = 256;
        for (std::uint32_t b = 0; b < 256; ++b) {
            const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
            const std::uint32_t cp = printable ? b : next++;
            append_utf8(to_display[b], cp);
            from_display.emplace(to_display[b], static_cast<unsigned char>(b));
        }
    }
};

const ByteMap& byte_map() {
    static const ByteMap map;
    return map;
}

std::string to_display(std::string_view bytes) {
    std::string out;
    for (unsigned char b : bytes) {
        out += byte_map().to_display[b];
    }
    return out;
}

std::string from_display(std::string_view text) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        const std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : 0;
        if (len == 0 || i + len > text.size()) {
            throw VocabularyError("vocabulary: invalid token text");
        }
        auto it = byte_map().from_display.find(std::string(text.substr(i, len)));
        if (it == byte_map().from_display.end()) {
            throw VocabularyError("vocabulary: token text outside the byte alphabet");
        }
        out += static_cast<char>(it->second);
        i += len;
    }
    return out;
}

enum class CharClass { space, other_space, letter, digit, punct };

CharClass classify(unsigned char c) {
    if (c == ' ') {
        return CharClass::space;
    }
    if (c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        return CharClass::other_space;
    }
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) {
        return CharClass::letter;
    }
    if (c >= '0' && c <= '9') {
        return CharClass::digit;
    }
    return CharClass::punct;
}

bool is_ws(CharClass c) { return c == CharClass::space || c == CharClass::other_space; }

// Applies merges to one piece's byte tokens, lowest rank first.
void merge_piece(std::vector<TokenId>& symbols, const Vocabulary& vocab) {
    while (symbols.size() > 1) {
        std::size_t best_rank = SIZE_MAX;
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            if (auto rank = vocab.merge_rank(symbols[i], symbols[i + 1]); rank && *rank < best_rank) {
                best_rank = *rank;
                best_pos = i;
            }
        }
        if (best_rank == SIZE_MAX) {
            break;
        }
        const Merge& m = vocab.merges()[best_rank];
        std::vector<TokenId> next;
        next.reserve(symbols.size());
        for (std::size_t i = 0; i < symbols.size(); ++i) {
            if (i >= best_pos && i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
                next.push_back(m.result);
                ++i;
            } else {
                next.push_back(symbols[i]);
            }
        }
        symbols.swap(next);
    }
}

}  // namespace

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
    tokens_.reserve(kFirstMergedId);
    for (std::size_t b = 0; b < kByteTokens; ++b) {
        tokens_.emplace_back(1, static_cast<char>(b));
        token_to_id_.emplace(tokens_.back(), static_cast<TokenId>(b));
    }
    for (std::size_t s = 0; s < special::kCount; ++s) {
        tokens_.emplace_back();
    }
}

const std::string& Vocabulary::bytes(TokenId id) const {
    if (!contains(id)) {
        throw VocabularyError("unknown token id " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view bytes) const {
    if (auto it = token_to_id_.find(std::string(bytes)); it != token_to_id_.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::optional<TokenId> Vocabulary::special_id(std::string_view name) const {
    for (std::size_t s = 0; s < special::kCount; ++s) {
        if (kSpecialNames[s] == name) {
            return static_cast<TokenId>(kByteTokens + s);
        }
    }
    return std::nullopt;
}

std::string_view Vocabulary::special_name(TokenId id) {
    if (id < special::kCls || id > special::kPad) {
        return {};
    }
    return kSpecialNames[static_cast<std::size_t>(id - special::kCls)];
}

std::string Vocabulary::display(TokenId id) const {
    if (is_special(id)) {
        return std::string(special_name(id));
    }
    return to_display(bytes(id));
}

std::optional<std::size_t> Vocabulary::merge_rank(TokenId left, TokenId right) const {
    if (auto it = merge_ranks_.find(pair_key(left, right)); it != merge_ranks_.end()) {
        return it->second;
    }
    return std::nullopt;
}

TokenId Vocabulary::add_merge(TokenId left, TokenId right) {
    if (is_special(left) || is_special(right) || !contains(left) || !contains(right)) {
        throw VocabularyError("merge (" + std::to_string(left) + ", " + std::to_string(right) +
                              ") must join two known non-special tokens");
    }
    if (merge_ranks_.contains(pair_key(left, right))) {
        throw VocabularyError("duplicate merge rule");
    }
    std::string joined = tokens_[static_cast<std::size_t>(left)] + tokens_[static_cast<std::size_t>(right)];
    TokenId result;
    if (auto existing = find(joined)) {
        result = *existing;
    } else {
        result = static_cast<TokenId>(tokens_.size());
        token_to_id_.emplace(joined, result);
        tokens_.push_back(std::move(joined));
    }
    merge_ranks_.emplace(pair_key(left, right), merges_.size());
    merges_.push_back({left, right, result});
    return result;
}

std::string Vocabulary::serialize() const {
    std::ostringstream os;
    os << kVocabMagic << ' ' << kVocabVersion << '\n';
    os << "size " << size() << " merges " << merges_.size() << " specials " << special::kCount << '\n';
    os << "merges\n";
    for (const Merge& m : merges_) {
        os << to_display(bytes(m.left)) << ' ' << to_display(bytes(m.right)) << '\n';
    }
    os << "specials\n";
    for (std::size_t s = 0; s < special::kCount; ++s) {
        os << kSpecialNames[s] << ' ' << kByteTokens + s << '\n';
    }
    os << "end\n";
    return os.str();
}

Vocabulary Vocabulary::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line)) {
            throw VocabularyError(std::string("vocabulary: unexpected end of file, expected ") + what);
        }
        return std::istringstream(line);
    };
    {
        auto ls = next_line("header");
        std::string magic;
        int version = 0;
        ls >> magic >> version;
        if (magic != kVocabMagic) {
            throw VocabularyError("vocabulary: not a vocabulary file");
        }
        if (version != kVocabVersion) {
            throw VocabularyError("vocabulary: unsupported version " + std::to_string(version));
        }
    }
    std::size_t size = 0, n_merges = 0, n_specials = 0;
    {
        auto ls = next_line("sizes");
        std::string k1, k2, k3;
        ls >> k1 >> size >> k2 >> n_merges >> k3 >> n_specials;
        if (!ls || k1 != "size" || k2 != "merges" || k3 != "specials") {
            throw VocabularyError("vocabulary: malformed size line");
        }
        if (n_specials != special::kCount) {
            throw VocabularyError("vocabulary: expected " + std::to_string(special::kCount) + " special tokens");
        }
    }
    if (next_line("merges"); line != "merges") {
        throw VocabularyError("vocabulary: missing merges section");
    }
    Vocabulary vocab;
    for (std::size_t i = 0; i < n_merges; ++i) {
        next_line("merge rule");
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
            throw VocabularyError("vocabulary: malformed merge rule on rule " + std::to_string(i + 1));
        }
        auto left = vocab.find(from_display(std::string_view(line).substr(0, sp)));
        auto right = vocab.find(from_display(std::string_view(line).substr(sp + 1)));
        if (!left || !right) {
            throw VocabularyError("vocabulary: merge rule " + std::to_string(i + 1) + " uses an unknown token");
        }
        vocab.add_merge(*left, *right);
    }
    if (next_line("specials"); line != "specials") {
        throw VocabularyError("vocabulary: missing specials section");
    }
    for (std::size_t s = 0; s < special::kCount; ++s) {
        auto ls = next_line("special token");
        std::string name;
        std::size_t id = 0;
        ls >> name >> id;
        if (name != kSpecialNames[s] || id != kByteTokens + s) {
            throw VocabularyError("vocabulary: special token table does not match " + std::string(kSpecialNames[s]) +
                                  "=" + std::to_string(kByteTokens + s));
        }
    }
    if (next_line("end"); line != "end") {
        throw VocabularyError("vocabulary: missing end marker");
    }
    if (vocab.size() != size) {
        throw VocabularyError("vocabulary: header declares " + std::to_string(size) + " tokens, merges produce " +
                              std::to_string(vocab.size()));
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw VocabularyError("cannot write vocabulary " + path.string());
    }
    out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw VocabularyError("cannot read vocabulary " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Vocabulary::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- pre-tokenization

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const CharClass c = classify(static_cast<unsigned char>(text[i]));
        if (c == CharClass::space && i + 1 < n && !is_ws(classify(static_cast<unsigned char>(text[i + 1])))) {
            const CharClass run = classify(static_cast<unsigned char>(text[i + 1]));
            std::size_t j = i + 2;
            while (j < n && classify(static_cast<unsigned char>(text[j])) == run) {
                ++j;
            }
            pieces.push_back(text.substr(i, j - i));
            i = j;
        } else if (is_ws(c)) {
            std::size_t j = i + 1;
            while (j < n && is_ws(classify(static_cast<unsigned char>(text[j])))) {
                ++j;
            }
            // Leave a trailing space for the following word.
            if (j < n && text[j - 1] == ' ' && j - 1 > i) {
                --j;
            }
            pieces.push_back(text.substr(i, j - i));
            i = j;
        } else {
            std::size_t j = i + 1;
            while (j < n && classify(static_cast<unsigned char>(text[j])) == c) {
                ++j;
            }
            pieces.push_back(text.substr(i, j - i));
            i = j;
        }
    }
    return pieces;
}

// ---------------------------------------------------------------- training

Vocabulary train_bpe(const std::vector<std::string>& texts, std::size_t target_vocab_size) {
    if (target_vocab_size <= kFirstMergedId) {
        throw std::invalid_argument("train_bpe: target vocabulary size must exceed " + std::to_string(kFirstMergedId) +
                                    " (256 bytes + " + std::to_string(special::kCount) + " specials), got " +
                                    std::to_string(target_vocab_size));
    }
    if (texts.empty()) {
        throw std::invalid_argument("train_bpe: no training texts");
    }

    std::map<std::string, std::int64_t> piece_counts;
    for (const std::string& t : texts) {
        for (std::string_view piece : pretokenize(t)) {
            ++piece_counts[std::string(piece)];
        }
    }
    std::vector<std::vector<TokenId>> words;
    std::vector<std::int64_t> freq;
    for (const auto& [piece, count] : piece_counts) {
        std::vector<TokenId> sym;
        for (unsigned char b : piece) {
            sym.push_back(static_cast<TokenId>(b));
        }
        words.push_back(std::move(sym));
        freq.push_back(count);
    }

    auto key = [](TokenId l, TokenId r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    };
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
    auto add_pairs = [&](std::size_t w, std::int64_t sign) {
        const auto& s = words[w];
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const std::uint64_t k = key(s[i], s[i + 1]);
            auto& c = pair_counts[k];
            c += sign * freq[w];
            if (c == 0) {
                pair_counts.erase(k);
            }
            if (sign > 0) {
                where[k].push_back(static_cast<std::uint32_t>(w));
            }
        }
    };
    for (std::size_t w = 0; w < words.size(); ++w) {
        add_pairs(w, +1);
    }

    Vocabulary vocab;
    while (vocab.size() < target_vocab_size) {
        std::uint64_t best = 0;
        std::int64_t best_count = 0;
        for (const auto& [k, c] : pair_counts) {
            if (c > best_count) {
                best = k;
                best_count = c;
            } else if (c == best_count) {
                const auto l = static_cast<TokenId>(k >> 32), r = static_cast<TokenId>(k & 0xffffffffU);
                const auto bl = static_cast<TokenId>(best >> 32), br = static_cast<TokenId>(best & 0xffffffffU);
                const auto& lb = vocab.bytes(l);
                const auto& blb = vocab.bytes(bl);
                if (lb < blb || (lb == blb && vocab.bytes(r) < vocab.bytes(br))) {
                    best = k;
                }
            }
        }
        if (best_count < 2) {
            break;
        }
        const auto left = static_cast<TokenId>(best >> 32), right = static_cast<TokenId>(best & 0xffffffffU);
        const TokenId merged = vocab.add_merge(left, right);

        std::vector<std::uint32_t> affected = std::move(where[best]);
        where.erase(best);
        std::sort(affected.begin(), affected.end());
        affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
        for (std::uint32_t w : affected) {
            auto& s = words[w];
            bool present = false;
            for (std::size_t i = 0; i + 1 < s.size() && !present; ++i) {
                present = s[i] == left && s[i + 1] == right;
            }
            if (!present) {
                continue;
            }
            add_pairs(w, -1);
            std::vector<TokenId> next;
            next.reserve(s.size());
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(s[i]);
                }
            }
            s.swap(next);
            add_pairs(w, +1);
        }
    }
    return vocab;
}

// ---------------------------------------------------------------- encode / decode

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    std::vector<TokenId> symbols;
    for (std::string_view piece : pretokenize(text)) {
        symbols.clear();
        for (unsigned char b : piece) {
            symbols.push_back(static_cast<TokenId>(b));
        }
        merge_piece(symbols, vocab);
        out.insert(out.end(), symbols.begin(), symbols.end());
    }
    return out;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : ids) {
        if (!vocab.contains(id)) {
            throw VocabularyError("decode: unknown token id " + std::to_string(id));
        }
        if (!vocab.is_special(id)) {
            out += vocab.bytes(id);
        }
    }
    return out;
}

TokenSequence frame(std::span<const TokenId> ids, std::size_t max_len) {
    if (max_len < 3) {
        throw std::invalid_argument("frame: max_len must be at least 3, got " + std::to_string(max_len));
    }
    const std::size_t keep = std::min(ids.size(), max_len - 2);
    TokenSequence seq;
    seq.ids.reserve(max_len);
    seq.ids.push_back(special::kCls);
    seq.ids.insert(seq.ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
    seq.ids.push_back(special::kEos);
    seq.length = seq.ids.size();
    seq.ids.resize(max_len, special::kPad);
    seq.attention_mask.assign(max_len, 0);
    std::fill_n(seq.attention_mask.begin(), seq.length, std::uint8_t{1});
    return seq;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    const std::vector<TokenId> ids = encode(text, vocab);
    return frame(ids, max_len);
}

}  // namespace bugprio
