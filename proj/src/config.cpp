#include "oga/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "oga/models.hpp"

namespace oga {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& origin, const std::string& what) {
  throw std::invalid_argument(origin + ": " + what);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& origin, const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      bad(origin, "unknown key '" + scope + it.key() + "'");
    }
  }
}

double get_num(const json& obj, const std::string& key, double fallback,
               const std::string& origin) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) bad(origin, "key '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

int get_int(const json& obj, const std::string& key, int fallback,
            const std::string& origin) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number_integer()) {
    bad(origin, "key '" + key + "' must be an integer");
  }
  return obj.at(key).get<int>();
}

std::string get_str(const json& obj, const std::string& key,
                    const std::string& fallback, const std::string& origin) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) bad(origin, "key '" + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

void get_range(const json& obj, const std::string& key, double& lo, double& hi,
               const std::string& origin) {
  if (!obj.contains(key)) return;
  const json& r = obj.at(key);
  if (!r.is_array() || r.size() != 2 || !r[0].is_number() ||
      !r[1].is_number()) {
    bad(origin, "key '" + key + "' must be a [min,max] pair");
  }
  lo = r[0].get<double>();
  hi = r[1].get<double>();
  if (!(lo <= hi)) bad(origin, "key '" + key + "': min exceeds max");
}

}  // namespace

SceneParams Config::scene_params() const {
  SceneParams p;
  p.image_size = image_size;
  p.atlas_h = atlas_h;
  p.atlas_w = atlas_w;
  p.azimuth_min = azimuth_min;
  p.azimuth_max = azimuth_max;
  p.elevation_min = elevation_min;
  p.elevation_max = elevation_max;
  p.distance_min = distance_min;
  p.distance_max = distance_max;
  p.ambient_min = ambient_min;
  p.ambient_max = ambient_max;
  return p;
}

std::filesystem::path Config::resolved_models_dir() const {
  if (!models_dir.empty()) return models_dir;
  return std::filesystem::path(output_dir) / "models";
}

Config config_from_json_text(const std::string& text,
                             const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(origin + ": " + e.what());
  }
  if (!doc.is_object()) bad(origin, "top level must be a JSON object");
  reject_unknown(doc,
                 {"seed", "atlas", "image_size", "pose_sweep",
                  "illumination_sweep", "pool", "ensemble", "loss_weights",
                  "tau", "oga_patch", "eps_floor", "std_p", "std_block", "lr",
                  "epochs", "steps_per_epoch", "minibatch", "train_views",
                  "eval_views", "similarity_views", "pretrain", "fusion",
                  "optimizer", "output_dir", "models_dir", "compare"},
                 origin, "");
  Config cfg;
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) {
      bad(origin, "key 'seed' must be an integer");
    }
    cfg.seed = doc["seed"].get<uint64_t>();
  }
  if (doc.contains("atlas")) {
    const json& a = doc["atlas"];
    if (!a.is_object()) bad(origin, "key 'atlas' must be an object");
    reject_unknown(a, {"height", "width"}, origin, "atlas.");
    cfg.atlas_h = get_int(a, "height", cfg.atlas_h, origin);
    cfg.atlas_w = get_int(a, "width", cfg.atlas_w, origin);
  }
  cfg.image_size = get_int(doc, "image_size", cfg.image_size, origin);
  if (doc.contains("pose_sweep")) {
    const json& p = doc["pose_sweep"];
    if (!p.is_object()) bad(origin, "key 'pose_sweep' must be an object");
    reject_unknown(p, {"azimuth", "elevation", "distance"}, origin,
                   "pose_sweep.");
    get_range(p, "azimuth", cfg.azimuth_min, cfg.azimuth_max, origin);
    get_range(p, "elevation", cfg.elevation_min, cfg.elevation_max, origin);
    get_range(p, "distance", cfg.distance_min, cfg.distance_max, origin);
  }
  if (doc.contains("illumination_sweep")) {
    const json& p = doc["illumination_sweep"];
    if (!p.is_object()) {
      bad(origin, "key 'illumination_sweep' must be an object");
    }
    reject_unknown(p, {"ambient"}, origin, "illumination_sweep.");
    get_range(p, "ambient", cfg.ambient_min, cfg.ambient_max, origin);
  }
  if (doc.contains("pool")) {
    const json& p = doc["pool"];
    if (!p.is_array() || p.empty()) {
      bad(origin, "key 'pool' must be a non-empty array");
    }
    cfg.pool.clear();
    for (const json& e : p) {
      if (!e.is_object()) bad(origin, "pool entries must be objects");
      reject_unknown(e, {"arch", "seed"}, origin, "pool[].");
      PoolEntry entry;
      entry.arch = get_str(e, "arch", "", origin);
      arch_from_string(entry.arch);  // validates
      if (!e.contains("seed")) bad(origin, "pool entry missing 'seed'");
      entry.seed = e.at("seed").get<uint64_t>();
      cfg.pool.push_back(entry);
    }
  }
  if (doc.contains("ensemble")) {
    const json& e = doc["ensemble"];
    if (e.is_string()) {
      cfg.ensemble = e.get<std::string>();
    } else if (e.is_array()) {
      std::ostringstream os;
      for (size_t i = 0; i < e.size(); ++i) {
        if (!e[i].is_number_integer()) {
          bad(origin, "ensemble indices must be integers");
        }
        if (i) os << ",";
        os << e[i].get<int>();
      }
      cfg.ensemble = os.str();
    } else {
      bad(origin, "key 'ensemble' must be a string or an index array");
    }
  }
  if (doc.contains("loss_weights")) {
    const json& w = doc["loss_weights"];
    if (!w.is_object()) bad(origin, "key 'loss_weights' must be an object");
    reject_unknown(w, {"det", "fea", "smo"}, origin, "loss_weights.");
    cfg.lambda_det = get_num(w, "det", cfg.lambda_det, origin);
    cfg.lambda_fea = get_num(w, "fea", cfg.lambda_fea, origin);
    cfg.lambda_smo = get_num(w, "smo", cfg.lambda_smo, origin);
  }
  cfg.tau = get_num(doc, "tau", cfg.tau, origin);
  cfg.oga_patch = get_int(doc, "oga_patch", cfg.oga_patch, origin);
  cfg.eps_floor = get_num(doc, "eps_floor", cfg.eps_floor, origin);
  cfg.std_p = get_num(doc, "std_p", cfg.std_p, origin);
  cfg.std_block = get_int(doc, "std_block", cfg.std_block, origin);
  cfg.lr = get_num(doc, "lr", cfg.lr, origin);
  cfg.epochs = get_int(doc, "epochs", cfg.epochs, origin);
  cfg.steps_per_epoch = get_int(doc, "steps_per_epoch", cfg.steps_per_epoch,
                                origin);
  cfg.minibatch = get_int(doc, "minibatch", cfg.minibatch, origin);
  cfg.train_views = get_int(doc, "train_views", cfg.train_views, origin);
  cfg.eval_views = get_int(doc, "eval_views", cfg.eval_views, origin);
  cfg.similarity_views =
      get_int(doc, "similarity_views", cfg.similarity_views, origin);
  if (doc.contains("pretrain")) {
    const json& p = doc["pretrain"];
    if (!p.is_object()) bad(origin, "key 'pretrain' must be an object");
    reject_unknown(p, {"steps", "batch", "lr", "eval_every"}, origin,
                   "pretrain.");
    cfg.pretrain_steps = get_int(p, "steps", cfg.pretrain_steps, origin);
    cfg.pretrain_batch = get_int(p, "batch", cfg.pretrain_batch, origin);
    cfg.pretrain_lr = get_num(p, "lr", cfg.pretrain_lr, origin);
    cfg.pretrain_eval_every =
        get_int(p, "eval_every", cfg.pretrain_eval_every, origin);
  }
  cfg.fusion = get_str(doc, "fusion", cfg.fusion, origin);
  cfg.optimizer = get_str(doc, "optimizer", cfg.optimizer, origin);
  cfg.output_dir = get_str(doc, "output_dir", cfg.output_dir, origin);
  cfg.models_dir = get_str(doc, "models_dir", cfg.models_dir, origin);
  if (doc.contains("compare")) {
    const json& c = doc["compare"];
    if (!c.is_object()) bad(origin, "key 'compare' must be an object");
    reject_unknown(c, {"strategies", "patch_sizes"}, origin, "compare.");
    if (c.contains("strategies")) {
      cfg.compare_strategies.clear();
      for (const json& s : c.at("strategies")) {
        if (!s.is_string()) bad(origin, "compare.strategies must be strings");
        cfg.compare_strategies.push_back(s.get<std::string>());
      }
    }
    if (c.contains("patch_sizes")) {
      cfg.compare_patch_sizes.clear();
      for (const json& s : c.at("patch_sizes")) {
        if (!s.is_number_integer()) {
          bad(origin, "compare.patch_sizes must be integers");
        }
        cfg.compare_patch_sizes.push_back(s.get<int>());
      }
    }
  }

  // Range validation.
  if (cfg.atlas_h < 4 || cfg.atlas_w < 6 || cfg.atlas_h % 2 != 0 ||
      cfg.atlas_w % 3 != 0) {
    bad(origin, "atlas must be a 3x2 grid (width % 3 == 0, height % 2 == 0)");
  }
  if (cfg.image_size < 16 || cfg.image_size % 8 != 0) {
    bad(origin, "image_size must be a multiple of 8, at least 16");
  }
  if (!(cfg.azimuth_min >= 0.0 && cfg.azimuth_max <= 360.0)) {
    bad(origin, "pose_sweep.azimuth must lie in [0,360]");
  }
  if (!(cfg.elevation_min >= 0.0 && cfg.elevation_max <= 50.0)) {
    bad(origin, "pose_sweep.elevation must lie in [0,50]");
  }
  if (!(cfg.distance_min > 0.0)) bad(origin, "pose_sweep.distance must be > 0");
  if (!(cfg.ambient_min >= 0.3 && cfg.ambient_max <= 1.0)) {
    bad(origin, "illumination_sweep.ambient must lie in [0.3,1]");
  }
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) bad(origin, "tau must be in (0,1)");
  if (cfg.oga_patch < 0) bad(origin, "oga_patch must be >= 0");
  if (cfg.oga_patch > 0 && (cfg.atlas_h % cfg.oga_patch != 0 ||
                            cfg.atlas_w % cfg.oga_patch != 0)) {
    bad(origin, "oga_patch must divide both atlas dimensions");
  }
  if (!(cfg.eps_floor >= 0.0)) bad(origin, "eps_floor must be >= 0");
  if (!(cfg.std_p >= 0.0 && cfg.std_p <= 1.0)) {
    bad(origin, "std_p must be in [0,1]");
  }
  if (cfg.std_block < 1) bad(origin, "std_block must be >= 1");
  if (!(cfg.lr >= 0.0)) bad(origin, "lr must be >= 0");
  if (cfg.epochs < 0 || cfg.steps_per_epoch < 1 || cfg.minibatch < 1) {
    bad(origin, "epochs must be >= 0; steps_per_epoch and minibatch >= 1");
  }
  if (cfg.train_views < 1 || cfg.eval_views < 1 || cfg.similarity_views < 1) {
    bad(origin, "view counts must be >= 1");
  }
  if (cfg.pretrain_steps < 0 || cfg.pretrain_batch < 1 ||
      cfg.pretrain_eval_every < 1 || !(cfg.pretrain_lr > 0.0)) {
    bad(origin, "invalid pretrain block");
  }
  if (cfg.fusion != "oga" && cfg.fusion != "equal-sum" &&
      cfg.fusion != "norm-average" && cfg.fusion != "conflict-project") {
    bad(origin, "fusion must be oga | equal-sum | norm-average | conflict-project");
  }
  if (cfg.optimizer != "gd" && cfg.optimizer != "normalized-gd" &&
      cfg.optimizer != "adam") {
    bad(origin, "optimizer must be gd | normalized-gd | adam");
  }
  if (cfg.output_dir.empty()) bad(origin, "output_dir must not be empty");
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return config_from_json_text(text.str(), path.string());
}

std::string config_to_json(const Config& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["atlas"] = {{"height", cfg.atlas_h}, {"width", cfg.atlas_w}};
  doc["image_size"] = cfg.image_size;
  doc["pose_sweep"] = {{"azimuth", {cfg.azimuth_min, cfg.azimuth_max}},
                       {"elevation", {cfg.elevation_min, cfg.elevation_max}},
                       {"distance", {cfg.distance_min, cfg.distance_max}}};
  doc["illumination_sweep"] = {{"ambient", {cfg.ambient_min, cfg.ambient_max}}};
  json pool = json::array();
  for (const PoolEntry& e : cfg.pool) {
    pool.push_back({{"arch", e.arch}, {"seed", e.seed}});
  }
  doc["pool"] = pool;
  doc["ensemble"] = cfg.ensemble;
  doc["loss_weights"] = {{"det", cfg.lambda_det},
                         {"fea", cfg.lambda_fea},
                         {"smo", cfg.lambda_smo}};
  doc["tau"] = cfg.tau;
  doc["oga_patch"] = cfg.oga_patch;
  doc["eps_floor"] = cfg.eps_floor;
  doc["std_p"] = cfg.std_p;
  doc["std_block"] = cfg.std_block;
  doc["lr"] = cfg.lr;
  doc["epochs"] = cfg.epochs;
  doc["steps_per_epoch"] = cfg.steps_per_epoch;
  doc["minibatch"] = cfg.minibatch;
  doc["train_views"] = cfg.train_views;
  doc["eval_views"] = cfg.eval_views;
  doc["similarity_views"] = cfg.similarity_views;
  doc["pretrain"] = {{"steps", cfg.pretrain_steps},
                     {"batch", cfg.pretrain_batch},
                     {"lr", cfg.pretrain_lr},
                     {"eval_every", cfg.pretrain_eval_every}};
  doc["fusion"] = cfg.fusion;
  doc["optimizer"] = cfg.optimizer;
  doc["output_dir"] = cfg.output_dir;
  doc["models_dir"] = cfg.models_dir;
  doc["compare"] = {{"strategies", cfg.compare_strategies},
                    {"patch_sizes", cfg.compare_patch_sizes}};
  return doc.dump();
}

std::string config_hash(const Config& cfg) {
  const std::string text = config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : text) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace oga
