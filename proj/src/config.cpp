#include "pinlab/config.hpp"

#include "pinlab/random.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace pinlab {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k)) throw ConfigError("unknown key \"" + k + "\" in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

json generator_json(const GeneratorConfig& g, bool all_channels) {
  json ch = json::object();
  for (const auto& [r, c] : g.channels)
    if (all_channels || r <= g.max_resolution) ch[std::to_string(r)] = c;
  json norms;
  if (g.norm_kinds.size() == 1) {
    norms = std::string(norm_kind_name(g.norm_kinds.front()));
  } else {
    norms = json::array();
    for (NormKind k : g.norm_kinds) norms.push_back(std::string(norm_kind_name(k)));
  }
  return {{"max_resolution", g.max_resolution}, {"channels", ch},
          {"latent_dim", g.latent_dim},         {"mapping_layers", g.mapping_layers},
          {"norm", norms},                       {"noise", g.noise_enabled},
          {"seed", g.seed}};
}

NormKind norm_from(const json& j) {
  if (!j.is_string()) throw ConfigError("generator.norm entries must be strings");
  auto k = parse_norm_kind(j.get<std::string>());
  if (!k) throw ConfigError("unknown norm kind \"" + j.get<std::string>() + "\" (IN, PN, PIN, AdaIN)");
  return *k;
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, "config", {"generator", "train", "dataset", "detect_k", "out_dir"});
  RunConfig rc;

  if (root.contains("generator")) {
    const json& g = root["generator"];
    reject_unknown(g, "generator",
                   {"max_resolution", "channels", "latent_dim", "mapping_layers", "norm", "noise", "seed"});
    auto& o = rc.generator;
    read(g, "max_resolution", o.max_resolution, "generator");
    read(g, "latent_dim", o.latent_dim, "generator");
    read(g, "mapping_layers", o.mapping_layers, "generator");
    read(g, "noise", o.noise_enabled, "generator");
    read(g, "seed", o.seed, "generator");
    if (g.contains("channels")) {
      const json& ch = g["channels"];
      if (!ch.is_object()) throw ConfigError("generator.channels must be an object");
      o.channels.clear();
      for (const auto& [k, v] : ch.items()) {
        int r = 0;
        try {
          std::size_t used = 0;
          r = std::stoi(k, &used);
          if (used != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
          throw ConfigError("generator.channels key \"" + k + "\" is not a resolution");
        }
        if (!v.is_number_integer()) throw ConfigError("generator.channels values must be integers");
        o.channels[r] = v.get<int>();
      }
    }
    if (g.contains("norm")) {
      const json& n = g["norm"];
      o.norm_kinds.clear();
      if (n.is_array()) {
        for (const auto& e : n) o.norm_kinds.push_back(norm_from(e));
      } else {
        o.norm_kinds.push_back(norm_from(n));
      }
    }
  }
  try {
    rc.generator.validate();
  } catch (const ConfigMismatch& e) {
    throw ConfigError(std::string("generator: ") + e.what());
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t, "train",
                   {"steps", "batch_size", "learning_rate", "optimizer", "seed", "checkpoint_interval"});
    auto& o = rc.train;
    read(t, "steps", o.steps, "train");
    read(t, "batch_size", o.batch_size, "train");
    read(t, "learning_rate", o.learning_rate, "train");
    read(t, "seed", o.seed, "train");
    read(t, "checkpoint_interval", o.checkpoint_interval, "train");
    if (t.contains("optimizer")) {
      std::string name;
      read(t, "optimizer", name, "train");
      if (name == "adam") o.optimizer = OptimizerKind::Adam;
      else if (name == "sgd") o.optimizer = OptimizerKind::SGD;
      else throw ConfigError("train.optimizer must be \"adam\" or \"sgd\"");
    }
  }
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }

  rc.dataset.resolution = rc.generator.max_resolution;
  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    reject_unknown(d, "dataset", {"n_images", "seed"});
    read(d, "n_images", rc.dataset.n_images, "dataset");
    read(d, "seed", rc.dataset.seed, "dataset");
  }
  try {
    rc.dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }

  read(root, "detect_k", rc.detect_k, "config");
  if (!(rc.detect_k > 0.0)) throw ConfigError("detect_k must be positive");
  read(root, "out_dir", rc.out_dir, "config");
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& rc) {
  json j;
  j["generator"] = generator_json(rc.generator, true);
  j["train"] = {{"steps", rc.train.steps},
                {"batch_size", rc.train.batch_size},
                {"learning_rate", rc.train.learning_rate},
                {"optimizer", rc.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                {"seed", rc.train.seed},
                {"checkpoint_interval", rc.train.checkpoint_interval}};
  j["dataset"] = {{"n_images", rc.dataset.n_images}, {"seed", rc.dataset.seed}};
  j["detect_k"] = rc.detect_k;
  j["out_dir"] = rc.out_dir;
  return j.dump(2) + "\n";
}

std::string canonical_generator_json(const GeneratorConfig& gcfg) {
  return generator_json(gcfg, false).dump();
}

std::uint64_t generator_config_hash(const GeneratorConfig& gcfg) {
  return fnv1a(canonical_generator_json(gcfg));
}

}  // namespace pinlab
