#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "json.hpp"

#include "hdcs/decoder.hpp"
#include "hdcs/encoder.hpp"
#include "hdcs/errors.hpp"
#include "hdcs/optim.hpp"
#include "hdcs/rng.hpp"

namespace hdcs {

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                       const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown config key \"" + it.key() + "\" in " + context);
  }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Every knob of a run, loadable from a JSON file with CLI overrides on top.
// Unknown keys are rejected; the effective config is echoed verbatim into
// reports and its hash ties checkpoints to their settings.
struct RunConfig {
  std::string formalism = "ccg";
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::size_t error_budget = 0;

  DecodeConfig decode;
  EncoderConfig encoder;
  OptimizerConfig optim;

  std::size_t batch_size = 16;
  std::size_t epochs = 25;
  double warmup_epochs = 1.0;
  double label_smoothing = 0.1;
  double dropout = 0.2;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["formalism"] = formalism;
    j["ratios"] = ratios;
    j["seed"] = seed;
    j["error_budget"] = error_budget;
    j["decode"] = {{"d_n", decode.d_n},
                   {"h_het", decode.h_het},
                   {"d_w", decode.d_w},
                   {"h_seq", decode.h_seq},
                   {"kappa", decode.kappa},
                   {"d_ff", decode.d_ff},
                   {"max_depth", decode.max_depth},
                   {"leaky_slope", decode.leaky_slope},
                   {"no_state_feedback", decode.disable_state_feedback},
                   {"no_node_feedback", decode.disable_node_feedback}};
    j["encoder"] = {{"kind", encoder.kind},
                    {"layers", encoder.layers},
                    {"kappa", encoder.kappa},
                    {"h_seq", encoder.h_seq},
                    {"pool_hidden", encoder.pool_hidden},
                    {"max_positions", encoder.max_positions},
                    {"trigram_subwords", encoder.trigram_subwords},
                    {"source", encoder.source}};
    j["optimizer"] = {{"lr", optim.lr},
                      {"weight_decay", optim.weight_decay},
                      {"beta1", optim.beta1},
                      {"beta2", optim.beta2},
                      {"eps", optim.eps},
                      {"encoder_lr_scale", optim.encoder_lr_scale}};
    j["training"] = {{"batch_size", batch_size},
                     {"epochs", epochs},
                     {"warmup_epochs", warmup_epochs},
                     {"label_smoothing", label_smoothing},
                     {"dropout", dropout}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    detail::check_keys(
        j, {"formalism", "ratios", "seed", "error_budget", "decode", "encoder", "optimizer",
            "training"},
        "top level");
    RunConfig c;
    detail::read_into(j, "formalism", c.formalism);
    detail::read_into(j, "ratios", c.ratios);
    detail::read_into(j, "seed", c.seed);
    detail::read_into(j, "error_budget", c.error_budget);
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      detail::check_keys(d,
                         {"d_n", "h_het", "d_w", "h_seq", "kappa", "d_ff", "max_depth",
                          "leaky_slope", "no_state_feedback", "no_node_feedback"},
                         "decode");
      detail::read_into(d, "d_n", c.decode.d_n);
      detail::read_into(d, "h_het", c.decode.h_het);
      detail::read_into(d, "d_w", c.decode.d_w);
      detail::read_into(d, "h_seq", c.decode.h_seq);
      detail::read_into(d, "kappa", c.decode.kappa);
      detail::read_into(d, "d_ff", c.decode.d_ff);
      detail::read_into(d, "max_depth", c.decode.max_depth);
      detail::read_into(d, "leaky_slope", c.decode.leaky_slope);
      detail::read_into(d, "no_state_feedback", c.decode.disable_state_feedback);
      detail::read_into(d, "no_node_feedback", c.decode.disable_node_feedback);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      detail::check_keys(e,
                         {"kind", "layers", "kappa", "h_seq", "pool_hidden", "max_positions",
                          "trigram_subwords", "source"},
                         "encoder");
      detail::read_into(e, "kind", c.encoder.kind);
      detail::read_into(e, "layers", c.encoder.layers);
      detail::read_into(e, "kappa", c.encoder.kappa);
      detail::read_into(e, "h_seq", c.encoder.h_seq);
      detail::read_into(e, "pool_hidden", c.encoder.pool_hidden);
      detail::read_into(e, "max_positions", c.encoder.max_positions);
      detail::read_into(e, "trigram_subwords", c.encoder.trigram_subwords);
      detail::read_into(e, "source", c.encoder.source);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      detail::check_keys(o, {"lr", "weight_decay", "beta1", "beta2", "eps", "encoder_lr_scale"},
                         "optimizer");
      detail::read_into(o, "lr", c.optim.lr);
      detail::read_into(o, "weight_decay", c.optim.weight_decay);
      detail::read_into(o, "beta1", c.optim.beta1);
      detail::read_into(o, "beta2", c.optim.beta2);
      detail::read_into(o, "eps", c.optim.eps);
      detail::read_into(o, "encoder_lr_scale", c.optim.encoder_lr_scale);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      detail::check_keys(
          t, {"batch_size", "epochs", "warmup_epochs", "label_smoothing", "dropout"}, "training");
      detail::read_into(t, "batch_size", c.batch_size);
      detail::read_into(t, "epochs", c.epochs);
      detail::read_into(t, "warmup_epochs", c.warmup_epochs);
      detail::read_into(t, "label_smoothing", c.label_smoothing);
      detail::read_into(t, "dropout", c.dropout);
    }
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (c.label_smoothing < 0.0 || c.label_smoothing >= 1.0)
      throw ConfigError("label_smoothing must be in [0,1)");
    validate(c.decode);
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    return from_json(j);
  }

  Formalism formalism_enum() const { return formalism_from_string(formalism); }

  // Content hash over the canonical serialization (sorted keys).
  std::string hash() const {
    std::uint64_t h = fnv1a64(to_json().dump());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }
};

}  // namespace hdcs
