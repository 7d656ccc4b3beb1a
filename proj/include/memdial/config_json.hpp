#pragma once

#include "memdial/model.hpp"
#include "memdial/objective.hpp"

#include <json.hpp>

namespace memdial {

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size}, {"context_len", c.context_len},
                        {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                        {"d_model", c.d_model},       {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", tok::kVocabSize);
  c.context_len = j.value("context_len", 64);
  c.n_layers = j.value("n_layers", 2);
  c.n_heads = j.value("n_heads", 2);
  c.d_model = j.value("d_model", 64);
  c.seed = j.value("seed", std::uint64_t{1});
  return c;
}

inline nlohmann::json to_json(const DialConfig& c) {
  return nlohmann::json{{"alpha", c.alpha},
                        {"tau", c.tau},
                        {"mode", to_string(c.mode)},
                        {"tau_eff", c.tau_eff}};
}

inline DialConfig dial_config_from_json(const nlohmann::json& j) {
  DialConfig c;
  c.alpha = j.value("alpha", 0.0);
  c.tau = j.value("tau", 0.1);
  c.mode = dial_mode_from_string(j.value("mode", std::string("dial")));
  c.tau_eff = j.value("tau_eff", 1.0);
  return c;
}

}  // namespace memdial
