#include "gacr/run_config.hpp"

#include <fstream>
#include <sstream>

#include "gacr/error.hpp"

namespace gacr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v.front() == '-') throw ConfigError(key + ": expected a count, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace

void set_config_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& v) {
  const std::string full = section + "." + key;
  auto count = [&] { return to_count(full, v); };
  auto real = [&] { return to_real(full, v); };

  if (section == "paths") {
    if (key == "train") return void(c.train_path = v);
    if (key == "test") return void(c.test_path = v);
    if (key == "cache") return void(c.cache_path = v);
    if (key == "work_dir") return void(c.work_dir = v);
  } else if (section == "run") {
    if (key == "seed") return void(c.seed = count());
    if (key == "jobs") return void(c.jobs = count());
  } else if (section == "corpus") {
    if (key == "vocab_max_size") return void(c.vocab_max_size = count());
    if (key == "vocab_min_freq") return void(c.vocab_min_freq = count());
  } else if (section == "encoder") {
    if (key == "num_layers") return void(c.encoder.num_layers = count());
    if (key == "num_heads") return void(c.encoder.num_heads = count());
    if (key == "model_dim") return void(c.encoder.model_dim = count());
    if (key == "ffn_dim") return void(c.encoder.ffn_dim = count());
    if (key == "max_seq_len") return void(c.encoder.max_seq_len = count());
    if (key == "mask") return void(c.encoder.mask_type = parse_mask_type(v));
  } else if (section == "training") {
    if (key == "batch_size") return void(c.train.batch_size = count());
    if (key == "epochs") return void(c.train.epochs = count());
    if (key == "learning_rate") return void(c.train.learning_rate = real());
    if (key == "adam_beta1") return void(c.train.adam_beta1 = real());
    if (key == "adam_beta2") return void(c.train.adam_beta2 = real());
    if (key == "adam_eps") return void(c.train.adam_eps = real());
    if (key == "mode") return void(c.train.mode = parse_query_mode(v));
    if (key == "snippet_cap") return void(c.train.snippet_cap = count());
    if (key == "k") return void(c.train.k = count());
    if (key == "loss") return void(c.train.loss = parse_loss_form(v));
    if (key == "fill_with_stub") return void(c.train.fill_with_stub = to_bool(full, v));
  } else if (section == "generation") {
    if (key == "backend") {
      if (v == "stub") return void(c.generation.backend = Backend::kStub);
      if (v == "remote") return void(c.generation.backend = Backend::kRemote);
      throw ConfigError(full + ": expected stub or remote, got '" + v + "'");
    }
    if (key == "max_generated_tokens") return void(c.generation.max_generated_tokens = count());
    if (key == "temperature") return void(c.generation.temperature = real());
    if (key == "endpoint_url") return void(c.generation.endpoint_url = v);
    if (key == "model_name") return void(c.generation.model_name = v);
    if (key == "api_key_env") return void(c.generation.api_key_env = v);
    if (key == "max_in_flight") return void(c.generation.max_in_flight = count());
    if (key == "backoff_ms") return void(c.generation.backoff_base_ms = count());
    if (key == "max_retries") return void(c.generation.max_retries = count());
  } else if (section == "retrieval") {
    if (key == "top_k") return void(c.top_k = count());
    if (key == "pool_size") return void(c.eval.pool_size = count());
    if (key == "variants") {
      c.variants.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) c.variants.push_back(parse_variant(item));
      }
      return;
    }
  } else {
    throw ConfigError("unknown config section [" + section + "]");
  }
  throw ConfigError("unknown config key " + full);
}

void RunConfig::propagate() {
  encoder.seed = seed;
  train.seed = seed;
  generation.seed = seed;
  eval.seed = seed;
  train.jobs = jobs;
  eval.jobs = jobs;
  generation.samples_per_prompt = train.k;
  eval.k = train.k;
  eval.cap = train.snippet_cap;
  eval.fill_with_stub = train.fill_with_stub;
}

void RunConfig::validate() const {
  if (jobs < 1) throw ConfigError("run.jobs must be >= 1");
  if (vocab_max_size < Vocabulary::kNumSpecial + 1) throw ConfigError("corpus.vocab_max_size must be >= 5");
  EncoderConfig e = encoder;
  if (e.vocab_size == 0) e.vocab_size = 1;  // filled in once the vocabulary exists
  e.validate();
  train.validate();
  generation.validate();
  if (variants.empty()) throw ConfigError("retrieval.variants must name at least one variant");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside a section");
    set_config_value(base, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.propagate();
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace gacr
