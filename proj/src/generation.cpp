#include "gacr/generation.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gacr/random.hpp"

namespace gacr {

void GenerationConfig::validate() const {
  if (samples_per_prompt < 1) throw ConfigError("generation: samples_per_prompt must be >= 1");
  if (max_generated_tokens < 1) throw ConfigError("generation: max_generated_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw ConfigError("generation: temperature must be >= 0");
  if (max_in_flight < 1) throw ConfigError("generation: max_in_flight must be >= 1");
}

GeneratedSnippet make_snippet(std::string source_id, std::size_t sample_index, std::string raw_text) {
  GeneratedSnippet s;
  s.source_id = std::move(source_id);
  s.sample_index = sample_index;
  s.tokens = tokenize_raw(raw_text);
  s.raw_text = std::move(raw_text);
  return s;
}

// ---------------------------------------------------------------------------
// SnippetCache

SnippetCache::SnippetCache(std::filesystem::path path) : path_(std::move(path)) {}

SnippetCache SnippetCache::open(const std::filesystem::path& path) {
  SnippetCache cache(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) return cache;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto s = make_snippet(j.at("source_id").get<std::string>(), j.at("sample_index").get<std::size_t>(),
                            j.at("raw_text").get<std::string>());
      Key key{s.source_id, s.sample_index};
      cache.entries_.emplace(std::move(key), std::move(s));
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted append; the entry is regenerated on demand.
      std::cerr << "warning: " << path.string() << ":" << line_no << ": skipped unreadable cache entry\n";
    }
  }
  return cache;
}

const GeneratedSnippet* SnippetCache::find(const std::string& source_id, std::size_t sample_index) const {
  std::lock_guard lock(*mutex_);
  auto it = entries_.find(Key{source_id, sample_index});
  return it == entries_.end() ? nullptr : &it->second;
}

bool SnippetCache::has_all(const std::string& source_id, std::size_t k) const {
  for (std::size_t i = 0; i < k; ++i)
    if (!find(source_id, i)) return false;
  return true;
}

void SnippetCache::append(GeneratedSnippet snippet) {
  std::lock_guard lock(*mutex_);
  Key key{snippet.source_id, snippet.sample_index};
  if (entries_.count(key)) return;
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to snippet cache " + path_.string());
    nlohmann::json j;
    j["source_id"] = snippet.source_id;
    j["sample_index"] = snippet.sample_index;
    j["raw_text"] = snippet.raw_text;
    out << j.dump() << '\n';
  }
  entries_.emplace(std::move(key), std::move(snippet));
}

std::size_t SnippetCache::size() const {
  std::lock_guard lock(*mutex_);
  return entries_.size();
}

std::vector<GeneratedSnippet> SnippetCache::entries() const {
  std::lock_guard lock(*mutex_);
  std::vector<GeneratedSnippet> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(v);
  return out;
}

// ---------------------------------------------------------------------------
// Stub backend

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string as_identifier(const Token& t) {
  std::string out;
  for (char c : t) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_') out.push_back(c);
  }
  if (!out.empty() && std::isdigit(static_cast<unsigned char>(out.front()))) out.insert(out.begin(), '_');
  return out;
}

std::string render_function(const std::string& name, const std::vector<std::string>& idents,
                            std::size_t template_index) {
  std::string body;
  switch (template_index % 4) {
    case 0:
      body = "def " + name + "(" + join(idents, ", ") + "):\n    return [" + join(idents, ", ") + "]\n";
      break;
    case 1:
      body = "def " + name + "(self):\n";
      for (const auto& id : idents) body += "    " + id + " = self." + id + "\n";
      if (!idents.empty()) body += "    return " + idents.back() + "\n";
      break;
    case 2:
      body = "def " + name + "(items):\n    result = []\n";
      for (const auto& id : idents) body += "    result.append(" + id + "(items))\n";
      body += "    return result\n";
      break;
    default: {
      std::string expr = "args";
      for (const auto& id : idents) expr = id + "(" + expr + ")";
      body = "def " + name + "(*args):\n    return " + expr + "\n";
      break;
    }
  }
  return body;
}

std::string stub_generate(const TokenList& doc_tokens, std::size_t sample_index, std::uint64_t seed) {
  std::vector<std::string> idents;
  for (const auto& t : doc_tokens) {
    auto id = as_identifier(t);
    if (!id.empty()) idents.push_back(std::move(id));
  }
  if (idents.empty()) idents.push_back("value");

  const std::string name = join(idents, "_") + "_" + std::to_string(sample_index);

  std::uint64_t h = fnv1a(std::to_string(sample_index), seed);
  for (const auto& t : doc_tokens) h = fnv1a(t + '\x1f', h);
  Rng rng(h);

  return render_function(name, idents, rng.below(4));
}

// ---------------------------------------------------------------------------
// Remote backend

std::string build_prompt(const DocCodePair& pair) {
  std::vector<std::string> words(pair.doc_tokens.begin(), pair.doc_tokens.end());
  return "# " + pair.language + "\n" + join(words, " ") + "\n";
}

HttpPost default_http_post() {
  return [](const std::string& url, const std::string& body, const std::string& api_key) {
    // Split "scheme://host[:port]/path".
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(120);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) return std::pair<int, std::string>{0, "transport error: " + httplib::to_string(res.error())};
    return std::pair<int, std::string>{res->status, res->body};
  };
}

namespace {

std::string remote_fetch(const DocCodePair& prompt, const GenerationConfig& config, const HttpPost& post,
                         const std::string& api_key) {
  const char* env_endpoint = std::getenv("GACR_GEN_ENDPOINT");
  const std::string url = env_endpoint && *env_endpoint ? env_endpoint : config.endpoint_url;

  nlohmann::json req;
  req["model"] = config.model_name;
  req["prompt"] = build_prompt(prompt);
  req["max_tokens"] = config.max_generated_tokens;
  req["temperature"] = config.temperature;
  req["n"] = 1;
  const std::string body = req.dump();

  int last_status = 0;
  std::string last_body;
  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config.backoff_base_ms << (attempt - 1)));
    }
    auto [status, resp] = post(url, body, api_key);
    last_status = status;
    last_body = resp;
    if (status < 200 || status >= 300) continue;
    try {
      auto j = nlohmann::json::parse(resp);
      const auto& choice = j.at("choices").at(0);
      if (choice.contains("text")) return choice.at("text").get<std::string>();
      return choice.at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed completion response: ") + e.what(), status);
    }
  }
  throw BackendError("generation backend failed after " + std::to_string(config.max_retries + 1) +
                         " attempts (HTTP " + std::to_string(last_status) + "): " + last_body.substr(0, 200),
                     last_status);
}

}  // namespace

std::vector<GeneratedSnippet> generate(const DocCodePair& prompt, const GenerationConfig& config,
                                       SnippetCache& cache, const HttpPost& post) {
  config.validate();
  const std::size_t k = config.samples_per_prompt;

  std::vector<GeneratedSnippet> fresh;
  std::optional<std::string> api_key;
  for (std::size_t i = 0; i < k; ++i) {
    if (cache.find(prompt.id, i)) continue;
    if (config.backend == Backend::kStub) {
      fresh.push_back(make_snippet(prompt.id, i, stub_generate(prompt.doc_tokens, i, config.seed)));
      continue;
    }
    if (!api_key) {
      const char* key = std::getenv(config.api_key_env.c_str());
      if (!key || !*key) throw ConfigError("generation: api key variable " + config.api_key_env + " is not set");
      api_key = key;
    }
    fresh.push_back(make_snippet(prompt.id, i, remote_fetch(prompt, config, post ? post : default_http_post(), *api_key)));
  }
  // Only commit once every missing sample succeeded.
  for (auto& s : fresh) cache.append(std::move(s));

  std::vector<GeneratedSnippet> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(*cache.find(prompt.id, i));
  return out;
}

void generate_all(const std::vector<DocCodePair>& pairs, const GenerationConfig& config, SnippetCache& cache,
                  const HttpPost& post) {
  config.validate();
  const std::size_t workers =
      config.backend == Backend::kStub ? 1 : std::min(config.max_in_flight, std::max<std::size_t>(pairs.size(), 1));
  if (workers <= 1) {
    for (const auto& p : pairs) generate(p, config, cache, post);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < pairs.size(); i = next++) {
        try {
          generate(pairs[i], config, cache, post);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          next = pairs.size();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------

NameBody split_name_body(const GeneratedSnippet& snippet) {
  NameBody out;
  const std::string& text = snippet.raw_text;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    const auto line = std::string_view(text).substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    auto tokens = tokenize_raw(line);
    if (!tokens.empty()) {
      out.name = std::move(tokens);
      if (eol != std::string::npos) out.body = tokenize_raw(std::string_view(text).substr(eol + 1));
      return out;
    }
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  return out;
}

}  // namespace gacr
