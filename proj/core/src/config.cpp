#include "mts3/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mts3/errors.hpp"

namespace mts3 {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw DataError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw DataError("config: unknown key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

json model_json(const Mts3Config& m) {
  return {{"d_z", m.d_z},
          {"d_l", m.d_l},
          {"d_alpha", m.d_alpha},
          {"window", m.window},
          {"dt", m.dt},
          {"enc_width", m.enc_width},
          {"set_width", m.set_width},
          {"dec_width", m.dec_width},
          {"control_width", m.control_width},
          {"activation", nn::to_string(m.activation)},
          {"tau", m.tau == TemporalEncoding::kScalar ? "scalar" : "sinusoidal"},
          {"tau_frequencies", m.tau_frequencies},
          {"init_diag", m.init_diag},
          {"init_offdiag", m.init_offdiag},
          {"init_noise", m.init_noise},
          {"init_belief_var", m.init_belief_var},
          {"cut_fts_gradients", m.cut_fts_gradients},
          {"max_transition_radius", m.max_transition_radius},
          {"no_task", m.variants.no_task},
          {"no_action_abstraction", m.variants.no_action_abstraction},
          {"identity_obs_model", m.variants.identity_obs_model},
          {"no_imputation", m.variants.no_imputation}};
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"clip_norm", t.clip_norm},
          {"patience", t.patience},
          {"val_fraction", t.val_fraction},
          {"context_windows", t.context_windows},
          {"context_steps", t.context_steps},
          {"mask_step_fraction", t.mask_step_fraction},
          {"mask_window_fraction", t.mask_window_fraction},
          {"batches_per_epoch", t.batches_per_epoch},
          {"threads", t.threads},
          {"horizons", t.horizons},
          {"h_sweep", t.h_sweep},
          {"variants", t.variants}};
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> s;
  for (const auto& [k, _] : j.items()) s.insert(k);
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("config: " + m); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr >= 0.0)) fail("lr must be >= 0");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (patience < 1) fail("patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in [0, 1)");
  if (context_windows < 1) fail("context_windows must be >= 1");
  if (!(mask_step_fraction >= 0.0 && mask_step_fraction <= 1.0)) fail("mask_step_fraction must lie in [0, 1]");
  if (!(mask_window_fraction >= 0.0 && mask_window_fraction <= 1.0)) fail("mask_window_fraction must lie in [0, 1]");
  if (batches_per_epoch < 0 || threads < 0) fail("batches_per_epoch and threads must be >= 0");
  for (long h : horizons) {
    if (h < 1) fail("horizons must be >= 1");
  }
  for (int h : h_sweep) {
    if (h < 1) fail("h_sweep entries must be >= 1");
  }
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  reject_unknown(j, {"seed", "model", "train"}, "config");
  read(j, "seed", cfg.seed, "config");

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, keys_of(model_json(cfg.model)), "model");
    Mts3Config& mc = cfg.model;
    read(m, "d_z", mc.d_z, "model");
    read(m, "d_l", mc.d_l, "model");
    read(m, "d_alpha", mc.d_alpha, "model");
    read(m, "window", mc.window, "model");
    read(m, "dt", mc.dt, "model");
    read(m, "enc_width", mc.enc_width, "model");
    read(m, "set_width", mc.set_width, "model");
    read(m, "dec_width", mc.dec_width, "model");
    read(m, "control_width", mc.control_width, "model");
    std::string act = nn::to_string(mc.activation), tau = "scalar";
    read(m, "activation", act, "model");
    read(m, "tau", tau, "model");
    try {
      mc.activation = nn::parse_activation(act);
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("config: ") + e.what());
    }
    if (tau == "scalar") {
      mc.tau = TemporalEncoding::kScalar;
    } else if (tau == "sinusoidal") {
      mc.tau = TemporalEncoding::kSinusoidal;
    } else {
      throw DataError("config: model.tau must be 'scalar' or 'sinusoidal'");
    }
    read(m, "tau_frequencies", mc.tau_frequencies, "model");
    read(m, "init_diag", mc.init_diag, "model");
    read(m, "init_offdiag", mc.init_offdiag, "model");
    read(m, "init_noise", mc.init_noise, "model");
    read(m, "init_belief_var", mc.init_belief_var, "model");
    read(m, "cut_fts_gradients", mc.cut_fts_gradients, "model");
    read(m, "max_transition_radius", mc.max_transition_radius, "model");
    read(m, "no_task", mc.variants.no_task, "model");
    read(m, "no_action_abstraction", mc.variants.no_action_abstraction, "model");
    read(m, "identity_obs_model", mc.variants.identity_obs_model, "model");
    read(m, "no_imputation", mc.variants.no_imputation, "model");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, keys_of(train_json(cfg.train)), "train");
    TrainConfig& tc = cfg.train;
    read(t, "epochs", tc.epochs, "train");
    read(t, "batch_size", tc.batch_size, "train");
    read(t, "lr", tc.lr, "train");
    read(t, "clip_norm", tc.clip_norm, "train");
    read(t, "patience", tc.patience, "train");
    read(t, "val_fraction", tc.val_fraction, "train");
    read(t, "context_windows", tc.context_windows, "train");
    read(t, "context_steps", tc.context_steps, "train");
    read(t, "mask_step_fraction", tc.mask_step_fraction, "train");
    read(t, "mask_window_fraction", tc.mask_window_fraction, "train");
    read(t, "batches_per_epoch", tc.batches_per_epoch, "train");
    read(t, "threads", tc.threads, "train");
    read(t, "horizons", tc.horizons, "train");
    read(t, "h_sweep", tc.h_sweep, "train");
    read(t, "variants", tc.variants, "train");
  }
  cfg.model.seed = cfg.seed;
  cfg.train.validate();
  if (cfg.model.window < 1) throw DataError("config: model.window must be >= 1");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& cfg, int indent) {
  const json j{{"seed", cfg.seed}, {"model", model_json(cfg.model)}, {"train", train_json(cfg.train)}};
  return j.dump(indent);
}

void apply_variant(RunConfig& cfg, const std::string& variant) {
  Variants v;
  if (variant == "no_task") {
    v.no_task = true;
  } else if (variant == "no_action_abstraction") {
    v.no_action_abstraction = true;
  } else if (variant == "identity_obs_model") {
    v.identity_obs_model = true;
  } else if (variant == "no_imputation") {
    v.no_imputation = true;
  } else if (variant != "full") {
    throw DataError("unknown variant '" + variant + "'");
  }
  cfg.model.variants = v;
}

}  // namespace mts3
