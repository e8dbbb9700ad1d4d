#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "calmix/autograd.hpp"
#include "calmix/data.hpp"
#include "calmix/matrix.hpp"
#include "calmix/rng.hpp"
#include "json.hpp"

namespace calmix {

struct ModelConfig {
  std::size_t vocab_hash_buckets = 1u << 15;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t num_classes = 0;
  uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (vocab_hash_buckets == 0 || embed_dim == 0 || hidden_dim == 0)
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (num_classes < 2)
      throw std::invalid_argument("ModelConfig: need at least two classes");
  }
};

enum class HiddenSource { RealSample, MixupSynthetic };

struct HiddenState {
  Vector values;
  HiddenSource source = HiddenSource::RealSample;
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Joins sentence pairs before hashing. The separator contains a space, which
// whitespace tokenization can never produce, so no real token shares its
// string (hash-bucket collisions remain possible, as for any token pair).
inline constexpr const char* kSeparatorToken = "[sep ]";

// Hashing bag-of-tokens classifier: embedding lookup, mean pool, two
// affine+tanh encoder layers, affine head. Three cut points are exposed so
// the mixup variants can interpolate at the layer each one calls for: the
// pooled embedding, the encoder output, and the logits.
class Classifier {
 public:
  explicit Classifier(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(cfg_.seed, "init");
    table_ = params_.add(
        "embedding",
        init_matrix(cfg_.vocab_hash_buckets, cfg_.embed_dim, cfg_.embed_dim, rng),
        /*row_sparse_grad=*/true);
    w1_ = params_.add("enc_w1",
                      init_matrix(cfg_.hidden_dim, cfg_.embed_dim, cfg_.embed_dim, rng));
    b1_ = params_.add("enc_b1", init_matrix(cfg_.hidden_dim, 1, cfg_.embed_dim, rng));
    w2_ = params_.add("enc_w2",
                      init_matrix(cfg_.hidden_dim, cfg_.hidden_dim, cfg_.hidden_dim, rng));
    b2_ = params_.add("enc_b2", init_matrix(cfg_.hidden_dim, 1, cfg_.hidden_dim, rng));
    wh_ = params_.add("head_w",
                      init_matrix(cfg_.num_classes, cfg_.hidden_dim, cfg_.hidden_dim, rng));
    bh_ = params_.add("head_b", init_matrix(cfg_.num_classes, 1, cfg_.hidden_dim, rng));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ParamId embedding_table() const { return table_; }

  std::vector<std::size_t> token_buckets(const Sample& sample) const {
    std::vector<std::string> a = tokenize(sample.text_a);
    std::vector<std::string> b =
        sample.text_b ? tokenize(*sample.text_b) : std::vector<std::string>{};
    if (a.empty() && b.empty())
      throw std::invalid_argument("embed: sample " + std::to_string(sample.id) +
                                  " has no tokens");
    std::vector<std::size_t> ids;
    ids.reserve(a.size() + b.size() + 1);
    for (const std::string& t : a) ids.push_back(bucket(t));
    if (sample.text_b) {
      ids.push_back(bucket(kSeparatorToken));
      for (const std::string& t : b) ids.push_back(bucket(t));
    }
    return ids;
  }

  Matrix embed(const Sample& sample) const {
    const std::vector<std::size_t> ids = token_buckets(sample);
    const Matrix& table = params_.value(table_);
    Matrix e(ids.size(), cfg_.embed_dim);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto src = table.row(ids[r]);
      std::copy(src.begin(), src.end(), e.row(r).begin());
    }
    return e;
  }

  HiddenState encode(const Matrix& embeddings) const {
    if (embeddings.cols != cfg_.embed_dim)
      throw std::invalid_argument("encode: embedding width mismatch");
    return {encode_pooled(mean_rows_forward(embeddings)),
            HiddenSource::RealSample};
  }

  Vector encode_pooled(const Vector& pooled) const {
    const Vector h1 = tanh_forward(
        affine_forward(params_.value(w1_), pooled, params_.value(b1_).data));
    return tanh_forward(
        affine_forward(params_.value(w2_), h1, params_.value(b2_).data));
  }

  Vector head(const Vector& hidden) const {
    if (hidden.size() != cfg_.hidden_dim)
      throw std::invalid_argument("head: hidden width mismatch");
    return affine_forward(params_.value(wh_), hidden, params_.value(bh_).data);
  }

  struct ForwardResult {
    Vector logits;
    HiddenState hidden;
    Matrix embeddings;
  };

  ForwardResult forward(const Sample& sample) const {
    ForwardResult r;
    r.embeddings = embed(sample);
    r.hidden = encode(r.embeddings);
    r.logits = head(r.hidden.values);
    return r;
  }

  Vector forward_from_hidden(const HiddenState& h) const {
    return head(h.values);
  }

  Vector forward_from_embeddings(const Matrix& embeddings) const {
    return head(encode(embeddings).values);
  }

  struct ForwardNodes {
    NodeId embeddings;
    NodeId pooled;
    NodeId hidden;
    NodeId logits;
  };

  // Tape-recorded twin of forward(); the tape must be bound to params().
  ForwardNodes record_forward(GradTape& tape, const Sample& sample) const {
    ForwardNodes n;
    n.embeddings = tape.gather_rows(table_, token_buckets(sample));
    n.pooled = tape.mean_rows(n.embeddings);
    n.hidden = record_encoder(tape, n.pooled);
    n.logits = record_head(tape, n.hidden);
    return n;
  }

  NodeId record_encoder(GradTape& tape, NodeId pooled) const {
    const NodeId h1 = tape.tanh(tape.affine(w1_, pooled, b1_));
    return tape.tanh(tape.affine(w2_, h1, b2_));
  }

  NodeId record_head(GradTape& tape, NodeId hidden) const {
    return tape.affine(wh_, hidden, bh_);
  }

 private:
  std::size_t bucket(const std::string& token) const {
    return static_cast<std::size_t>(fnv1a64(token) % cfg_.vocab_hash_buckets);
  }

  static Matrix init_matrix(std::size_t rows, std::size_t cols,
                            std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform() * 2.0 * bound - bound;
    return m;
  }

  ModelConfig cfg_;
  ParamStore params_;
  ParamId table_ = 0;
  ParamId w1_ = 0;
  ParamId b1_ = 0;
  ParamId w2_ = 0;
  ParamId b2_ = 0;
  ParamId wh_ = 0;
  ParamId bh_ = 0;
};

struct CheckpointMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr char kCheckpointMagic[9] = "CMIXCKPT";

inline void save_checkpoint(const std::string& path, const Classifier& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["format_version"] = 1;
  const ModelConfig& c = model.config();
  header["config"] = {{"vocab_hash_buckets", c.vocab_hash_buckets},
                      {"embed_dim", c.embed_dim},
                      {"hidden_dim", c.hidden_dim},
                      {"num_classes", c.num_classes},
                      {"seed", c.seed}};
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  const ParamStore& ps = model.params();
  for (ParamId p = 0; p < ps.count(); ++p)
    header["params"].push_back({{"name", ps.name(p)},
                                {"rows", ps.value(p).rows},
                                {"cols", ps.value(p).cols}});
  const std::string hj = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  const uint64_t len = hj.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hj.data(), static_cast<std::streamsize>(hj.size()));
  for (ParamId p = 0; p < ps.count(); ++p) {
    const Matrix& m = ps.value(p);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw std::invalid_argument("checkpoint: write failed for " + path);
}

inline Classifier load_checkpoint(const std::string& path,
                                  nlohmann::json* meta_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw std::invalid_argument("checkpoint: bad magic in " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1u << 24))
    throw std::invalid_argument("checkpoint: bad header length in " + path);
  std::string hj(len, '\0');
  in.read(hj.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::invalid_argument("checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hj);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("checkpoint: corrupt header in " + path + ": " +
                                e.what());
  }
  if (header.value("format_version", 0) != 1)
    throw std::invalid_argument("checkpoint: unsupported version in " + path);

  ModelConfig cfg;
  const nlohmann::json& jc = header.at("config");
  cfg.vocab_hash_buckets = jc.at("vocab_hash_buckets").get<std::size_t>();
  cfg.embed_dim = jc.at("embed_dim").get<std::size_t>();
  cfg.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
  cfg.num_classes = jc.at("num_classes").get<std::size_t>();
  cfg.seed = jc.at("seed").get<uint64_t>();

  Classifier model(cfg);
  ParamStore& ps = model.params();
  const nlohmann::json& jp = header.at("params");
  if (jp.size() != ps.count())
    throw std::invalid_argument("checkpoint: parameter list mismatch in " + path);
  for (ParamId p = 0; p < ps.count(); ++p) {
    Matrix& m = ps.value(p);
    if (jp[p].at("name") != ps.name(p) || jp[p].at("rows") != m.rows ||
        jp[p].at("cols") != m.cols)
      throw std::invalid_argument("checkpoint: parameter shape mismatch in " +
                                  path);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in)
      throw std::invalid_argument("checkpoint: truncated parameters in " + path);
    require_finite(m.data, "checkpoint parameters");
  }
  if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
  return model;
}

inline Classifier load_checkpoint_expecting(const std::string& path,
                                            const ModelConfig& expected,
                                            nlohmann::json* meta_out = nullptr) {
  Classifier model = load_checkpoint(path, meta_out);
  if (!(model.config() == expected))
    throw CheckpointMismatch("checkpoint " + path +
                             " was produced under a different model config");
  return model;
}

}  // namespace calmix
