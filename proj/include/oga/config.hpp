#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oga/scene.hpp"

namespace oga {

struct PoolEntry {
  std::string arch;
  uint64_t seed = 1;
};

/// Run configuration, loaded from a single JSON document. Unknown keys are
/// rejected and numeric ranges validated at load time.
struct Config {
  uint64_t seed = 42;
  int atlas_h = 128, atlas_w = 192;
  int image_size = 128;
  double azimuth_min = 0.0, azimuth_max = 360.0;
  double elevation_min = 0.0, elevation_max = 50.0;
  double distance_min = 13.0, distance_max = 15.5;
  double ambient_min = 0.55, ambient_max = 1.0;
  std::vector<PoolEntry> pool = {{"conv-a", 101},
                                 {"conv-c", 201},
                                 {"attn-b", 301}};
  std::string ensemble = "greedy:2";  // or explicit indices "0,2"
  double lambda_det = 1.0, lambda_fea = 1.0, lambda_smo = 0.1;
  double tau = 0.3;
  int oga_patch = 16;
  // truncation floor over the attack's Gram spectra; directions carrying
  // under 0.01% of the top eigenvalue are treated as null rather than
  // whitened up to the energy baseline
  double eps_floor = 1e-4;
  double std_p = 0.1;
  int std_block = 8;
  double lr = 0.01;
  int epochs = 10;
  int steps_per_epoch = 50;
  int minibatch = 4;
  int train_views = 200;
  int eval_views = 60;
  int similarity_views = 16;
  int pretrain_steps = 6000;
  int pretrain_batch = 2;
  double pretrain_lr = 6e-3;
  int pretrain_eval_every = 100;
  std::string fusion = "oga";
  std::string optimizer = "adam";
  std::string output_dir = "out";
  std::string models_dir;  // empty -> output_dir + "/models"
  std::vector<std::string> compare_strategies = {"oga", "equal-sum",
                                                 "norm-average",
                                                 "conflict-project"};
  std::vector<int> compare_patch_sizes = {0, 64, 32, 16, 8};

  SceneParams scene_params() const;
  std::filesystem::path resolved_models_dir() const;
};

Config load_config(const std::filesystem::path& path);
Config config_from_json_text(const std::string& text,
                             const std::string& origin);

/// Canonical JSON serialization (sorted keys) used for hashing.
std::string config_to_json(const Config& cfg);

/// FNV-1a hash of the canonical serialization, as a hex string.
std::string config_hash(const Config& cfg);

}  // namespace oga
