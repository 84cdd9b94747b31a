#include "gacr/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "gacr/error.hpp"

namespace gacr {

namespace {

bool is_punct(char c) {
  switch (c) {
    case '(': case ')': case '[': case ']': case '{': case '}': case ':': case ',':
    case '.': case '=': case '+': case '-': case '*': case '/': case '<': case '>':
      return true;
    default:
      return false;
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool read_token_array(const nlohmann::json& j, const char* key, TokenList& out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) return false;
  out.clear();
  out.reserve(it->size());
  for (const auto& t : *it) {
    if (!t.is_string()) return false;
    out.push_back(t.get<std::string>());
  }
  return true;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(s);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(Token(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const Token& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(Token(token)) != 0;
}

TokenId Vocabulary::add(const Token& token) {
  auto [it, inserted] = token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  if (inserted) id_to_token_.push_back(token);
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary " + path.string());
  // One JSON string per line so tokens containing whitespace survive.
  for (const auto& t : id_to_token_) out << nlohmann::json(t).dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("vocabulary not found: " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto t = nlohmann::json::parse(line).get<std::string>();
    if (n < kNumSpecial) {
      if (v.id_to_token_[n] != t) throw LoadError("vocabulary special token mismatch at id " + std::to_string(n));
    } else {
      v.add(t);
    }
    ++n;
  }
  if (n < kNumSpecial) throw LoadError("vocabulary truncated: " + path.string());
  return v;
}

CorpusSplit load_corpus(const std::filesystem::path& path, const std::string& split_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("corpus file not found: " + path.string());

  CorpusSplit split;
  split.name = split_name;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    DocCodePair pair;
    bool ok = false;
    try {
      auto j = nlohmann::json::parse(line);
      auto url = j.find("url");
      ok = j.is_object() && url != j.end() && url->is_string() &&
           read_token_array(j, "docstring_tokens", pair.doc_tokens) &&
           read_token_array(j, "code_tokens", pair.code_tokens);
      if (ok) {
        pair.id = url->get<std::string>();
        auto lang = j.find("language");
        pair.language = (lang != j.end() && lang->is_string()) ? lang->get<std::string>() : "unknown";
      }
    } catch (const nlohmann::json::exception&) {
      ok = false;
    }
    ok = ok && !pair.doc_tokens.empty() && !pair.code_tokens.empty() && !seen.count(pair.id);
    if (!ok) {
      ++split.skipped_lines;
      std::cerr << "warning: " << path.string() << ":" << line_no << ": skipped malformed record\n";
      continue;
    }
    seen.insert(pair.id);
    split.pairs.push_back(std::move(pair));
  }
  if (split.pairs.empty()) throw LoadError("no usable records in " + path.string());
  split.candidate_pool_size = split.pairs.size();
  return split;
}

void save_corpus(const std::filesystem::path& path, const CorpusSplit& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus " + path.string());
  for (const auto& p : split.pairs) {
    nlohmann::json j;
    j["url"] = p.id;
    j["language"] = p.language;
    j["docstring_tokens"] = p.doc_tokens;
    j["code_tokens"] = p.code_tokens;
    out << j.dump() << '\n';
  }
}

Vocabulary build_vocab(const std::vector<const CorpusSplit*>& splits,
                       const std::vector<TokenList>& extra_texts, std::size_t max_size,
                       std::size_t min_freq) {
  if (max_size < Vocabulary::kNumSpecial + 1)
    throw ConfigError("vocabulary max_size must be at least 5");

  std::map<Token, std::size_t> freq;
  auto count = [&](const TokenList& tokens) {
    for (const auto& t : tokens) ++freq[t];
  };
  for (const auto* split : splits) {
    for (const auto& p : split->pairs) {
      count(p.doc_tokens);
      count(p.code_tokens);
    }
  }
  for (const auto& t : extra_texts) count(t);

  Vocabulary vocab;
  std::vector<std::pair<Token, std::size_t>> ranked;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq && !vocab.contains(tok)) ranked.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic; stable sort keeps that order on ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.add(tok);
  }
  return vocab;
}

IdList encode_tokens(const Vocabulary& vocab, const TokenList& tokens) {
  IdList ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

TokenList tokenize_raw(std::string_view text) {
  TokenList out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

}  // namespace gacr
