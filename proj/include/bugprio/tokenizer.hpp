// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bugprio {

using TokenId = std::int32_t;

/// Special tokens sit right after the 256 byte tokens at fixed ids.
namespace special {
inline constexpr TokenId kCls = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kMask = 258;
inline constexpr TokenId kPad = 259;
inline constexpr std::size_t kCount = 4;
}  // namespace special

inline constexpr std::size_t kByteTokens = 256;
inline constexpr std::size_t kFirstMergedId = kByteTokens + special::kCount;

class VocabularyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Merge {
    TokenId left = 0;
    TokenId right = 0;
    TokenId result = 0;
};

/// Byte-level BPE vocabulary: 256 byte tokens, the special tokens, then one
/// token per learned merge. Immutable once built.
class Vocabulary {
public:
    /// Byte tokens and specials only.
    Vocabulary();

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<Merge>& merges() const noexcept { return merges_; }

    bool is_special(TokenId id) const noexcept {
        return id >= special::kCls && id < static_cast<TokenId>(kFirstMergedId);
    }
    bool contains(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < size(); }

    /// Raw bytes of a non-special token; empty for specials.
    const std::string& bytes(TokenId id) const;
    std::optional<TokenId> find(std::string_view bytes) const;
    std::optional<TokenId> special_id(std::string_view name) const;
    static std::string_view special_name(TokenId id);

    /// Printable form: bytes remapped so a space shows as the word-start marker Ġ.
    std::string display(TokenId id) const;

    /// Rank of a merge rule, or nullopt when the pair is not a rule.
    std::optional<std::size_t> merge_rank(TokenId left, TokenId right) const;

    /// Appends a merge rule; reuses the id of an existing token with the same bytes.
    TokenId add_merge(TokenId left, TokenId right);

    std::string serialize() const;
    static Vocabulary parse(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    /// FNV-1a 64 of the serialized form, as 16 hex digits.
    std::string hash() const;

private:
    static std::uint64_t pair_key(TokenId l, TokenId r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<Merge> merges_;
    std::unordered_map<std::uint64_t, std::size_t> merge_ranks_;
};

/// Splits text into pre-token pieces whose concatenation is the text. A
/// single space before a word belongs to that word (the Ġ convention);
/// letters, digits and punctuation form separate runs.
std::vector<std::string_view> pretokenize(std::string_view text);

/// Greedy highest-frequency pair merging until `target_vocab_size` tokens or no
/// pair occurs at least twice. Ties go to the lexicographically smallest
/// (left bytes, right bytes).
Vocabulary train_bpe(const std::vector<std::string>& texts, std::size_t target_vocab_size);

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab);
/// Byte-exact inverse of encode; special tokens are dropped.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> attention_mask;
    /// Attended positions: CLS, content, EOS.
    std::size_t length = 0;

    std::size_t content_length() const noexcept { return length >= 2 ? length - 2 : 0; }
    bool operator==(const TokenSequence&) const = default;
};

/// [CLS] ids [EOS] then [PAD] up to max_len; the token tail is dropped when too long.
TokenSequence frame(std::span<const TokenId> ids, std::size_t max_len);

/// compose -> encode -> frame in one call.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

}  // namespace bugprio
