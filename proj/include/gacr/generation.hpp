#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "gacr/corpus.hpp"
#include "gacr/error.hpp"

namespace gacr {

struct GeneratedSnippet {
  std::string source_id;
  std::size_t sample_index = 0;
  std::string raw_text;
  TokenList tokens;
};

enum class Backend { kRemote, kStub };

struct GenerationConfig {
  Backend backend = Backend::kStub;
  std::size_t samples_per_prompt = 3;
  std::size_t max_generated_tokens = 128;
  double temperature = 0.8;
  std::string endpoint_url = "http://127.0.0.1:8000/v1/completions";
  std::string model_name = "code-davinci-002";
  std::string api_key_env = "GACR_GEN_API_KEY";
  std::uint64_t seed = 17;
  std::size_t max_in_flight = 4;
  // Delay before the first retry; doubled for each further retry.
  std::size_t backoff_base_ms = 1000;
  std::size_t max_retries = 3;

  void validate() const;
};

/// Append-only on-disk store of generated snippets keyed by (source_id, sample_index).
class SnippetCache {
 public:
  using Key = std::pair<std::string, std::size_t>;

  SnippetCache() = default;
  explicit SnippetCache(std::filesystem::path path);

  /// Loads existing entries (if the file exists). Later duplicates are ignored.
  static SnippetCache open(const std::filesystem::path& path);

  const GeneratedSnippet* find(const std::string& source_id, std::size_t sample_index) const;
  bool has_all(const std::string& source_id, std::size_t k) const;

  /// Adds the entry in memory and appends it to the backing file (if any).
  /// Thread-safe; appends are serialized.
  void append(GeneratedSnippet snippet);

  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }
  std::vector<GeneratedSnippet> entries() const;

 private:
  std::filesystem::path path_;
  std::map<Key, GeneratedSnippet> entries_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

/// Transport used by the remote backend: POST body in, (status, body) out.
/// The default uses cpp-httplib; tests may inject their own.
using HttpPost = std::function<std::pair<int, std::string>(const std::string& url, const std::string& body,
                                                           const std::string& api_key)>;

HttpPost default_http_post();

/// Keeps identifier characters of a token ([A-Za-z0-9_]); prefixes '_' when
/// the result would start with a digit. May return an empty string.
std::string as_identifier(const Token& token);

/// Renders a Python function from one of four body templates (index mod 4).
/// Every identifier is referenced in the body.
std::string render_function(const std::string& name, const std::vector<std::string>& identifiers,
                            std::size_t template_index);

/// Deterministic offline generator: pure function of (doc tokens, sample index, seed).
std::string stub_generate(const TokenList& doc_tokens, std::size_t sample_index, std::uint64_t seed);

/// Prompt text sent to the remote backend.
std::string build_prompt(const DocCodePair& pair);

/// Returns k snippets for the prompt, filling the cache with any that are missing.
std::vector<GeneratedSnippet> generate(const DocCodePair& prompt, const GenerationConfig& config,
                                       SnippetCache& cache, const HttpPost& post = {});

/// Fills the cache for every pair; remote requests run with at most
/// config.max_in_flight concurrent calls.
void generate_all(const std::vector<DocCodePair>& pairs, const GenerationConfig& config,
                  SnippetCache& cache, const HttpPost& post = {});

struct NameBody {
  TokenList name;
  TokenList body;
};

NameBody split_name_body(const GeneratedSnippet& snippet);

/// First min(len, cap) elements. Works on token strings and token ids alike.
template <typename T>
std::vector<T> truncate_snippet(const std::vector<T>& tokens, std::size_t cap) {
  if (cap == 0) throw ContractError("snippet cap must be at least 1");
  return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(std::min(tokens.size(), cap))};
}

GeneratedSnippet make_snippet(std::string source_id, std::size_t sample_index, std::string raw_text);

}  // namespace gacr
