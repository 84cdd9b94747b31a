#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gacr {

using Token = std::string;
using TokenList = std::vector<Token>;
using TokenId = std::int32_t;
using IdList = std::vector<TokenId>;

struct DocCodePair {
  std::string id;
  std::string language;
  TokenList doc_tokens;
  TokenList code_tokens;
};

struct CorpusSplit {
  std::string name;
  std::vector<DocCodePair> pairs;
  std::size_t candidate_pool_size = 0;
  std::size_t skipped_lines = 0;
};

/// Word-level vocabulary with fixed special ids.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kNumSpecial = 4;

  Vocabulary();

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;
  const Token& token(TokenId id) const;
  bool contains(std::string_view token) const;
  const std::vector<Token>& tokens() const { return id_to_token_; }

  /// Appends a token at the next free id; existing tokens are returned unchanged.
  TokenId add(const Token& token);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<Token> id_to_token_;
  std::unordered_map<Token, TokenId> token_to_id_;
};

/// Reads CodeSearchNet-style JSON lines. Malformed or empty records are
/// skipped and counted in CorpusSplit::skipped_lines.
CorpusSplit load_corpus(const std::filesystem::path& path, const std::string& split_name);

void save_corpus(const std::filesystem::path& path, const CorpusSplit& split);

Vocabulary build_vocab(const std::vector<const CorpusSplit*>& splits,
                       const std::vector<TokenList>& extra_texts, std::size_t max_size,
                       std::size_t min_freq);

IdList encode_tokens(const Vocabulary& vocab, const TokenList& tokens);

TokenList tokenize_raw(std::string_view text);

}  // namespace gacr
