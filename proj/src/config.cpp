#include "segrobust/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

#include "segrobust/attacks.hpp"
#include "segrobust/error.hpp"

namespace segrobust {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& section, const std::string& name,
                         std::initializer_list<const char*> known) {
  if (!section.is_object()) {
    throw ConfigError("config section '" + name + "' must be an object");
  }
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : section.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown config key '" + name + "." + key + "'");
    }
  }
}

template <typename T>
void read_field(const json& section, const std::string& name, const char* key,
                T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + name + "." + key +
                      "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> sections = {
        "data", "model", "train", "defense", "attack_grid", "output"};
    if (!sections.contains(key)) {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const json& s = j.at("data");
    reject_unknown_keys(s, "data",
                        {"seed", "n_subjects", "extent", "test_fraction"});
    read_field(s, "data", "seed", cfg.data.seed);
    read_field(s, "data", "n_subjects", cfg.data.n_subjects);
    read_field(s, "data", "extent", cfg.data.extent);
    read_field(s, "data", "test_fraction", cfg.data.test_fraction);
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    reject_unknown_keys(s, "model",
                        {"input_channels", "num_classes", "depth",
                         "base_width", "dropout_rate", "temperature",
                         "leaky_slope"});
    read_field(s, "model", "input_channels", cfg.model.input_channels);
    read_field(s, "model", "num_classes", cfg.model.num_classes);
    read_field(s, "model", "depth", cfg.model.depth);
    read_field(s, "model", "base_width", cfg.model.base_width);
    read_field(s, "model", "dropout_rate", cfg.model.dropout_rate);
    read_field(s, "model", "temperature", cfg.model.temperature);
    read_field(s, "model", "leaky_slope", cfg.model.leaky_slope);
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    reject_unknown_keys(s, "train",
                        {"epochs", "lr", "seed", "augment", "val_interval"});
    read_field(s, "train", "epochs", cfg.train.epochs);
    read_field(s, "train", "lr", cfg.train.lr);
    read_field(s, "train", "seed", cfg.train.seed);
    read_field(s, "train", "augment", cfg.train.augment);
    read_field(s, "train", "val_interval", cfg.train.val_interval);
  }
  if (j.contains("defense")) {
    const json& s = j.at("defense");
    reject_unknown_keys(
        s, "defense", {"kind", "temperature", "epsilon", "mix_alpha", "radius"});
    read_field(s, "defense", "kind", cfg.defense.kind);
    read_field(s, "defense", "temperature", cfg.defense.temperature);
    read_field(s, "defense", "epsilon", cfg.defense.epsilon);
    read_field(s, "defense", "mix_alpha", cfg.defense.mix_alpha);
    read_field(s, "defense", "radius", cfg.defense.radius);
  }
  if (j.contains("attack_grid")) {
    const json& s = j.at("attack_grid");
    reject_unknown_keys(s, "attack_grid",
                        {"method", "epsilons", "alpha", "iterations",
                         "single_epsilon", "target_label", "sweep"});
    read_field(s, "attack_grid", "method", cfg.attack_grid.method);
    read_field(s, "attack_grid", "epsilons", cfg.attack_grid.epsilons);
    read_field(s, "attack_grid", "alpha", cfg.attack_grid.alpha);
    read_field(s, "attack_grid", "iterations", cfg.attack_grid.iterations);
    read_field(s, "attack_grid", "single_epsilon",
               cfg.attack_grid.single_epsilon);
    read_field(s, "attack_grid", "target_label", cfg.attack_grid.target_label);
    read_field(s, "attack_grid", "sweep", cfg.attack_grid.sweep);
  }
  if (j.contains("output")) {
    const json& s = j.at("output");
    reject_unknown_keys(s, "output", {"directory"});
    read_field(s, "output", "directory", cfg.output.directory);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["data"] = {{"seed", data.seed},
               {"n_subjects", data.n_subjects},
               {"extent", data.extent},
               {"test_fraction", data.test_fraction}};
  j["model"] = {{"input_channels", model.input_channels},
                {"num_classes", model.num_classes},
                {"depth", model.depth},
                {"base_width", model.base_width},
                {"dropout_rate", model.dropout_rate},
                {"temperature", model.temperature},
                {"leaky_slope", model.leaky_slope}};
  j["train"] = {{"epochs", train.epochs},
                {"lr", train.lr},
                {"seed", train.seed},
                {"augment", train.augment},
                {"val_interval", train.val_interval}};
  j["defense"] = {{"kind", defense.kind},
                  {"temperature", defense.temperature},
                  {"epsilon", defense.epsilon},
                  {"mix_alpha", defense.mix_alpha},
                  {"radius", defense.radius}};
  j["attack_grid"] = {{"method", attack_grid.method},
                      {"epsilons", attack_grid.epsilons},
                      {"alpha", attack_grid.alpha},
                      {"iterations", attack_grid.iterations},
                      {"single_epsilon", attack_grid.single_epsilon},
                      {"target_label", attack_grid.target_label},
                      {"sweep", attack_grid.sweep}};
  j["output"] = {{"directory", output.directory}};
  return j;
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << to_json().dump(2) << "\n";
  if (!os) throw IoError("write failure on " + path);
}

void ExperimentConfig::validate() const {
  if (data.n_subjects < 2) {
    throw ConfigError("data.n_subjects must be >= 2 (need a split)");
  }
  if (data.extent < 16) throw ConfigError("data.extent must be >= 16");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must lie in (0,1)");
  }
  model.validate();
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (train.val_interval < 1) {
    throw ConfigError("train.val_interval must be >= 1");
  }
  static const std::set<std::string> kinds = {"none", "distillation",
                                             "adversarial", "augmentation"};
  if (!kinds.contains(defense.kind)) {
    throw ConfigError("defense.kind must be one of none | distillation | "
                      "adversarial | augmentation, got '" +
                      defense.kind + "'");
  }
  if (!(defense.temperature > 0)) {
    throw ConfigError("defense.temperature must be positive");
  }
  if (defense.epsilon < 0) throw ConfigError("defense.epsilon must be >= 0");
  if (!(defense.mix_alpha >= 0 && defense.mix_alpha <= 1)) {
    throw ConfigError("defense.mix_alpha must lie in [0,1]");
  }
  if (defense.radius < 0) throw ConfigError("defense.radius must be >= 0");
  parse_attack_method(attack_grid.method);
  if (attack_grid.epsilons.empty()) {
    throw ConfigError("attack_grid.epsilons must not be empty");
  }
  for (double e : attack_grid.epsilons) {
    if (e < 0) throw ConfigError("attack_grid.epsilons must be >= 0");
  }
  if (!(attack_grid.alpha > 0)) {
    throw ConfigError("attack_grid.alpha must be positive");
  }
  if (attack_grid.iterations < 1) {
    throw ConfigError("attack_grid.iterations must be >= 1");
  }
  if (attack_grid.single_epsilon < 0) {
    throw ConfigError("attack_grid.single_epsilon must be >= 0");
  }
  label_code_to_index(static_cast<uint8_t>(attack_grid.target_label));
  if (output.directory.empty()) {
    throw ConfigError("output.directory must not be empty");
  }
}

}  // namespace segrobust
