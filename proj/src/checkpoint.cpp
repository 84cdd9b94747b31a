#include "gacr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "gacr/error.hpp"
#include "gacr/random.hpp"

namespace gacr {

namespace {

constexpr std::string_view kMagic = "GACR1\n";

void write_array(std::ostream& out, const Matrix& m) {
  static_assert(sizeof(double) == 8);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(m.data()[i]);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    out.write(bytes, 8);
  }
}

void read_array(std::istream& in, Matrix& m, const std::string& name) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw LoadError("checkpoint truncated in array " + name);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    m.data()[i] = std::bit_cast<double>(bits);
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw LoadError("checkpoint truncated before " + what);
  return line;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto& e = ck.encoder;
  const auto& t = ck.train;
  out << kMagic;
  out << "encoder.num_layers " << e.num_layers << '\n'
      << "encoder.num_heads " << e.num_heads << '\n'
      << "encoder.model_dim " << e.model_dim << '\n'
      << "encoder.ffn_dim " << e.ffn_dim << '\n'
      << "encoder.max_seq_len " << e.max_seq_len << '\n'
      << "encoder.vocab_size " << e.vocab_size << '\n'
      << "encoder.mask_type " << to_char(e.mask_type) << '\n'
      << "encoder.seed " << e.seed << '\n'
      << "train.batch_size " << t.batch_size << '\n'
      << "train.epochs " << t.epochs << '\n'
      << "train.learning_rate " << fmt_double(t.learning_rate) << '\n'
      << "train.adam_beta1 " << fmt_double(t.adam_beta1) << '\n'
      << "train.adam_beta2 " << fmt_double(t.adam_beta2) << '\n'
      << "train.adam_eps " << fmt_double(t.adam_eps) << '\n'
      << "train.mode " << to_string(t.mode) << '\n'
      << "train.snippet_cap " << t.snippet_cap << '\n'
      << "train.k " << t.k << '\n'
      << "train.seed " << t.seed << '\n'
      << "train.loss " << to_string(t.loss) << '\n';
  const auto names = ck.params.array_names();
  const auto arrays = ck.params.arrays();
  for (std::size_t a = 0; a < arrays.size(); ++a)
    out << "array " << names[a] << ' ' << arrays[a]->rows() << ' ' << arrays[a]->cols() << '\n';
  out << "params\n";
  for (const Matrix* m : arrays) write_array(out, *m);
  out << "optimizer " << ck.optimizer.step << '\n';
  for (const Matrix* m : ck.optimizer.first_moment.arrays()) write_array(out, *m);
  for (const Matrix* m : ck.optimizer.second_moment.arrays()) write_array(out, *m);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<EncoderConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint not found: " + path.string());
  std::string magic(kMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kMagic)
    throw LoadError("bad magic in checkpoint " + path.string());

  std::map<std::string, std::string> header;
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
  for (;;) {
    const std::string line = expect_line(in, "params section");
    if (line == "params") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "array") {
      std::string name;
      Eigen::Index r = 0, c = 0;
      if (!(ls >> name >> r >> c)) throw LoadError("malformed array line in checkpoint: " + line);
      shapes.emplace_back(name, r, c);
    } else {
      std::string value;
      std::getline(ls >> std::ws, value);
      header[key] = value;
    }
  }

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw LoadError("checkpoint header missing field " + key);
    return it->second;
  };
  auto get_size = [&](const std::string& key) -> std::size_t {
    try {
      return std::stoull(get(key));
    } catch (const std::logic_error&) {
      throw LoadError("checkpoint field " + key + " is not a count");
    }
  };
  auto get_double = [&](const std::string& key) -> double {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw LoadError("checkpoint field " + key + " is not a number");
    }
  };

  Checkpoint ck;
  auto& e = ck.encoder;
  e.num_layers = get_size("encoder.num_layers");
  e.num_heads = get_size("encoder.num_heads");
  e.model_dim = get_size("encoder.model_dim");
  e.ffn_dim = get_size("encoder.ffn_dim");
  e.max_seq_len = get_size("encoder.max_seq_len");
  e.vocab_size = get_size("encoder.vocab_size");
  e.mask_type = parse_mask_type(get("encoder.mask_type"));
  e.seed = get_size("encoder.seed");
  auto& t = ck.train;
  t.batch_size = get_size("train.batch_size");
  t.epochs = get_size("train.epochs");
  t.learning_rate = get_double("train.learning_rate");
  t.adam_beta1 = get_double("train.adam_beta1");
  t.adam_beta2 = get_double("train.adam_beta2");
  t.adam_eps = get_double("train.adam_eps");
  t.mode = parse_query_mode(get("train.mode"));
  t.snippet_cap = get_size("train.snippet_cap");
  t.k = get_size("train.k");
  t.seed = get_size("train.seed");
  t.loss = parse_loss_form(get("train.loss"));

  if (expected) {
    auto check = [&](const char* field, std::size_t stored, std::size_t want) {
      if (stored != want)
        throw LoadError(std::string("checkpoint shape mismatch in ") + field + ": stored " + std::to_string(stored) +
                        ", expected " + std::to_string(want));
    };
    check("num_layers", e.num_layers, expected->num_layers);
    check("num_heads", e.num_heads, expected->num_heads);
    check("model_dim", e.model_dim, expected->model_dim);
    check("ffn_dim", e.ffn_dim, expected->ffn_dim);
    check("max_seq_len", e.max_seq_len, expected->max_seq_len);
    check("vocab_size", e.vocab_size, expected->vocab_size);
  }
  e.validate();

  ck.params = zeros_like(e);
  const auto names = ck.params.array_names();
  auto arrays = ck.params.arrays();
  if (shapes.size() != arrays.size())
    throw LoadError("checkpoint lists " + std::to_string(shapes.size()) + " arrays, config implies " +
                    std::to_string(arrays.size()));
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    const auto& [name, r, c] = shapes[a];
    if (name != names[a] || r != arrays[a]->rows() || c != arrays[a]->cols())
      throw LoadError("checkpoint shape mismatch in array " + names[a]);
  }
  for (std::size_t a = 0; a < arrays.size(); ++a) read_array(in, *arrays[a], names[a]);

  const std::string opt_line = expect_line(in, "optimizer section");
  std::istringstream os(opt_line);
  std::string tag;
  if (!(os >> tag >> ck.optimizer.step) || tag != "optimizer")
    throw LoadError("checkpoint optimizer section malformed");
  ck.optimizer.first_moment = zeros_like(e);
  ck.optimizer.second_moment = zeros_like(e);
  auto m = ck.optimizer.first_moment.arrays();
  auto v = ck.optimizer.second_moment.arrays();
  for (std::size_t a = 0; a < m.size(); ++a) read_array(in, *m[a], "optimizer.m." + names[a]);
  for (std::size_t a = 0; a < v.size(); ++a) read_array(in, *v[a], "optimizer.v." + names[a]);
  return ck;
}

std::uint64_t file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

}  // namespace gacr
