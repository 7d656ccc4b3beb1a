#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "memdial/autograd.hpp"
#include "memdial/hash.hpp"
#include "memdial/rng.hpp"
#include "memdial/tensor.hpp"
#include "memdial/tokenizer.hpp"

namespace memdial {

struct ModelConfig {
  int vocab_size = tok::kVocabSize;
  int context_len = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 64;
  std::uint64_t seed = 1;

  int head_dim() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }

  void validate() const {
    if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size < 1");
    if (n_layers < 1 || n_heads < 1 || d_model < 1) {
      throw std::invalid_argument("ModelConfig: non-positive dimension");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("ModelConfig: d_model % n_heads != 0");
    if (context_len < 48) throw std::invalid_argument("ModelConfig: context_len must be >= 48");
  }
};

/// Named parameter tensors of the decoder. The flat list order is fixed and
/// doubles as the checkpoint/optimizer layout.
struct Parameters {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor& add(const std::string& name, std::vector<int> shape) {
    names.push_back(name);
    tensors.emplace_back(std::move(shape));
    return tensors.back();
  }

  std::size_t count() const { return tensors.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors) n += t.numel();
    return n;
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("Parameters: unknown tensor " + name);
  }

  const Tensor& get(const std::string& name) const { return tensors[index_of(name)]; }
  Tensor& get(const std::string& name) { return tensors[index_of(name)]; }
};

// Pre-layernorm GELU decoder; layer tensor names are <prefix>.<name>.
inline Parameters make_param_layout(const ModelConfig& cfg) {
  cfg.validate();
  Parameters p;
  p.add("wte", {cfg.vocab_size, cfg.d_model});
  p.add("wpe", {cfg.context_len, cfg.d_model});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.add(pre + "ln1.g", {cfg.d_model});
    p.add(pre + "ln1.b", {cfg.d_model});
    p.add(pre + "attn.wq", {cfg.d_model, cfg.d_model});
    p.add(pre + "attn.bq", {cfg.d_model});
    p.add(pre + "attn.wk", {cfg.d_model, cfg.d_model});
    p.add(pre + "attn.bk", {cfg.d_model});
    p.add(pre + "attn.wv", {cfg.d_model, cfg.d_model});
    p.add(pre + "attn.bv", {cfg.d_model});
    p.add(pre + "attn.wo", {cfg.d_model, cfg.d_model});
    p.add(pre + "attn.bo", {cfg.d_model});
    p.add(pre + "ln2.g", {cfg.d_model});
    p.add(pre + "ln2.b", {cfg.d_model});
    p.add(pre + "mlp.w1", {cfg.d_model, cfg.d_ff()});
    p.add(pre + "mlp.b1", {cfg.d_ff()});
    p.add(pre + "mlp.w2", {cfg.d_ff(), cfg.d_model});
    p.add(pre + "mlp.b2", {cfg.d_model});
  }
  p.add("lnf.g", {cfg.d_model});
  p.add("lnf.b", {cfg.d_model});
  p.add("head.w", {cfg.d_model, cfg.vocab_size});
  p.add("head.b", {cfg.vocab_size});
  return p;
}

/// Deterministic init: weights N(0, 0.02), biases 0, layernorm gains 1.
/// Identical (config, seed) pairs produce bit-identical parameters.
inline Parameters init_params(const ModelConfig& cfg) {
  Parameters p = make_param_layout(cfg);
  Rng rng(mix64(cfg.seed, hash_str64("init_params")));
  const double std_dev = 0.02;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const std::string& name = p.names[i];
    Tensor& t = p.tensors[i];
    const bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool is_bias = !is_gain && t.shape.size() == 1;
    if (is_gain) {
      for (double& v : t.data) v = 1.0;
    } else if (is_bias) {
      // already zero
    } else {
      for (double& v : t.data) v = rng.normal(0.0, std_dev);
    }
  }
  return p;
}

namespace detail {

inline void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty input");
  if (static_cast<int>(tokens.size()) > cfg.context_len) {
    throw std::invalid_argument("forward: input longer than context_len");
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) throw std::invalid_argument("forward: token id out of range");
  }
}

}  // namespace detail

/// Forward pass on a tape. `param_nodes` must hold one leaf per parameter in
/// layout order (so gradients can be read back after backward()).
inline Tape::NodeId forward_tape(Tape& tape, const ModelConfig& cfg,
                                 const std::vector<Tape::NodeId>& param_nodes,
                                 const Parameters& layout,
                                 const std::vector<int>& tokens) {
  detail::check_tokens(cfg, tokens);
  const int T = static_cast<int>(tokens.size());
  const int hd = cfg.head_dim();
  auto P = [&](const std::string& name) { return param_nodes[layout.index_of(name)]; };

  std::vector<int> positions(T);
  for (int t = 0; t < T; ++t) positions[t] = t;

  Tape::NodeId x = tape.add(tape.embedding(P("wte"), tokens),
                            tape.embedding(P("wpe"), positions));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Tape::NodeId h = tape.layernorm(x, P(pre + "ln1.g"), P(pre + "ln1.b"));
    Tape::NodeId q = tape.add_bias(tape.matmul(h, P(pre + "attn.wq")), P(pre + "attn.bq"));
    Tape::NodeId k = tape.add_bias(tape.matmul(h, P(pre + "attn.wk")), P(pre + "attn.bk"));
    Tape::NodeId v = tape.add_bias(tape.matmul(h, P(pre + "attn.wv")), P(pre + "attn.bv"));
    std::vector<Tape::NodeId> heads;
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      const int c0 = hh * hd, c1 = (hh + 1) * hd;
      Tape::NodeId qh = tape.slice_cols(q, c0, c1);
      Tape::NodeId kh = tape.slice_cols(k, c0, c1);
      Tape::NodeId vh = tape.slice_cols(v, c0, c1);
      Tape::NodeId att = tape.causal_softmax(
          tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd))));
      heads.push_back(tape.matmul(att, vh));
    }
    Tape::NodeId o = tape.concat_cols(heads);
    x = tape.add(x, tape.add_bias(tape.matmul(o, P(pre + "attn.wo")), P(pre + "attn.bo")));
    Tape::NodeId h2 = tape.layernorm(x, P(pre + "ln2.g"), P(pre + "ln2.b"));
    Tape::NodeId m = tape.gelu(tape.add_bias(tape.matmul(h2, P(pre + "mlp.w1")), P(pre + "mlp.b1")));
    x = tape.add(x, tape.add_bias(tape.matmul(m, P(pre + "mlp.w2")), P(pre + "mlp.b2")));
  }
  Tape::NodeId xf = tape.layernorm(x, P("lnf.g"), P("lnf.b"));
  return tape.add_bias(tape.matmul(xf, P("head.w")), P("head.b"));
}

/// Pure inference forward; one vocab-size logit row per input position.
/// Mirrors forward_tape exactly (same kernels, same op order).
inline Tensor forward(const ModelConfig& cfg, const Parameters& params,
                      const std::vector<int>& tokens) {
  detail::check_tokens(cfg, tokens);
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model, hd = cfg.head_dim();

  auto linear = [](const Tensor& in, const Tensor& w, const Tensor& b) {
    Tensor out({in.rows(), w.cols()});
    detail::gemm_nn_acc(in, w, out);
    for (int i = 0; i < out.rows(); ++i) {
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) += b.data[j];
    }
    return out;
  };
  auto layernorm = [&](const Tensor& in, const Tensor& g, const Tensor& b) {
    Tensor out({in.rows(), in.cols()});
    const int n = in.cols();
    for (int i = 0; i < in.rows(); ++i) {
      auto xr = in.row(i);
      double mu = 0.0;
      for (double vv : xr) mu += vv;
      mu /= n;
      double var = 0.0;
      for (double vv : xr) var += (vv - mu) * (vv - mu);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < n; ++j) out.at(i, j) = (xr[j] - mu) * inv * g.data[j] + b.data[j];
    }
    return out;
  };

  Tensor x({T, d});
  {
    const Tensor& wte = params.get("wte");
    const Tensor& wpe = params.get("wpe");
    for (int t = 0; t < T; ++t) {
      auto e = wte.row(tokens[t]);
      auto pe = wpe.row(t);
      auto xr = x.row(t);
      for (int j = 0; j < d; ++j) xr[j] = e[j] + pe[j];
    }
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Tensor h = layernorm(x, params.get(pre + "ln1.g"), params.get(pre + "ln1.b"));
    Tensor q = linear(h, params.get(pre + "attn.wq"), params.get(pre + "attn.bq"));
    Tensor k = linear(h, params.get(pre + "attn.wk"), params.get(pre + "attn.bk"));
    Tensor v = linear(h, params.get(pre + "attn.wv"), params.get(pre + "attn.bv"));
    Tensor o({T, d});
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      const int c0 = hh * hd;
      for (int t = 0; t < T; ++t) {
        // causal attention row t over 0..t
        std::vector<double> scores(static_cast<std::size_t>(t) + 1);
        double m = -std::numeric_limits<double>::infinity();
        for (int s = 0; s <= t; ++s) {
          double dot = 0.0;
          for (int j = 0; j < hd; ++j) dot += q.at(t, c0 + j) * k.at(s, c0 + j);
          scores[s] = dot * inv_sqrt;
          m = std::max(m, scores[s]);
        }
        double sum = 0.0;
        for (int s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - m);
          sum += scores[s];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < hd; ++j) {
          double acc = 0.0;
          for (int s = 0; s <= t; ++s) acc += scores[s] * inv * v.at(s, c0 + j);
          o.at(t, c0 + j) = acc;
        }
      }
    }
    Tensor attn_out = linear(o, params.get(pre + "attn.wo"), params.get(pre + "attn.bo"));
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];
    Tensor h2 = layernorm(x, params.get(pre + "ln2.g"), params.get(pre + "ln2.b"));
    Tensor m1 = linear(h2, params.get(pre + "mlp.w1"), params.get(pre + "mlp.b1"));
    for (double& vv : m1.data) vv = detail::gelu_fwd(vv);
    Tensor m2 = linear(m1, params.get(pre + "mlp.w2"), params.get(pre + "mlp.b2"));
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += m2.data[i];
  }
  Tensor xf = layernorm(x, params.get("lnf.g"), params.get("lnf.b"));
  return linear(xf, params.get("head.w"), params.get("head.b"));
}

/// FNV hash over a parameter set's raw bytes (layout order).
inline std::string params_checksum(const Parameters& p) {
  Fnv64 f;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    f.update(p.names[i]);
    f.update_ints(p.tensors[i].shape);
    f.update_bytes(p.tensors[i].data.data(), p.tensors[i].data.size() * sizeof(double));
  }
  return f.hex();
}

}  // namespace memdial
