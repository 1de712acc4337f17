#include "oga/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "oga/config.hpp"
#include "oga/io.hpp"
#include "oga/pretrain.hpp"
#include "oga/similarity.hpp"
#include "oga/trainer.hpp"

namespace oga {

namespace fs = std::filesystem;

namespace {

void write_run_info(const Config& cfg, const std::string& command) {
  nlohmann::json info;
  info["command"] = command;
  info["config_hash"] = config_hash(cfg);
  info["seed"] = cfg.seed;
  std::ofstream out(fs::path(cfg.output_dir) / (command + ".info.json"));
  out << info.dump(2) << "\n";
}

std::vector<ModelSpec> pool_specs(const Config& cfg) {
  std::vector<ModelSpec> specs;
  for (const PoolEntry& e : cfg.pool) {
    specs.push_back(ModelSpec{arch_from_string(e.arch), e.seed,
                              cfg.image_size});
  }
  return specs;
}

std::vector<Model> load_pool(const Config& cfg) {
  std::vector<Model> models;
  for (const ModelSpec& spec : pool_specs(cfg)) {
    Model probe = build_model(spec);
    fs::path dir = cfg.resolved_models_dir() / probe.name();
    if (!fs::exists(dir / "manifest.json")) {
      throw std::runtime_error("missing model files for " + probe.name() +
                               " under " + cfg.resolved_models_dir().string() +
                               " (run the pretrain subcommand first)");
    }
    models.push_back(load_model(dir));
  }
  return models;
}

SimilarityMatrix pool_similarity(const Config& cfg,
                                 const std::vector<Model>& models,
                                 const Mesh& mesh) {
  SceneParams params = cfg.scene_params();
  auto views = make_views(params, mesh, cfg.similarity_views,
                          derive_seed(cfg.seed, "similarity-views"));
  Rng rng(derive_seed(cfg.seed, "similarity-texture"));
  Tensor texture =
      Tensor::uniform({cfg.atlas_h, cfg.atlas_w, 3}, rng, 0.25, 0.75);
  return similarity_matrix(models, views, params, mesh, texture, cfg.tau);
}

std::vector<int> resolve_ensemble(const Config& cfg,
                                  const std::vector<Model>& models,
                                  const Mesh& mesh) {
  const std::string& spec = cfg.ensemble;
  if (spec.rfind("greedy:", 0) == 0) {
    const int n = std::stoi(spec.substr(7));
    SimilarityMatrix m = pool_similarity(cfg, models, mesh);
    return greedy_select(m, n);
  }
  std::vector<int> indices;
  size_t pos = 0;
  while (pos < spec.size()) {
    size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    indices.push_back(std::stoi(spec.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  for (int i : indices) {
    if (i < 0 || i >= int(models.size())) {
      throw std::invalid_argument("ensemble index out of range: " +
                                  std::to_string(i));
    }
  }
  if (indices.empty()) throw std::invalid_argument("empty ensemble");
  return indices;
}

void write_checkpoint(const fs::path& base, const Tensor& texture, int step,
                      const Config& cfg) {
  write_ogaf(base, texture);
  nlohmann::json sidecar;
  sidecar["step"] = step;
  sidecar["seed"] = cfg.seed;
  sidecar["config_hash"] = config_hash(cfg);
  fs::path meta = base;
  meta.replace_extension(".json");
  std::ofstream out(meta);
  out << sidecar.dump(2) << "\n";
}

void write_history_csv(const fs::path& path,
                       const std::vector<StepRecord>& history) {
  CsvWriter csv(path);
  if (history.empty()) {
    csv.row({"step", "epoch", "smooth", "fused_norm"});
    return;
  }
  std::vector<std::string> header = {"step", "epoch"};
  for (const LossReport& r : history.front().models) {
    header.push_back(r.model + "_det");
    header.push_back(r.model + "_fea");
  }
  header.push_back("smooth");
  header.push_back("fused_norm");
  for (size_t k = 0; k < history.front().omega.size(); ++k) {
    header.push_back("omega_" + std::to_string(k));
  }
  csv.row(header);
  for (const StepRecord& rec : history) {
    std::vector<std::string> row = {CsvWriter::num(int64_t(rec.step)),
                                    CsvWriter::num(int64_t(rec.epoch))};
    for (const LossReport& r : rec.models) {
      row.push_back(CsvWriter::num(r.task));
      row.push_back(CsvWriter::num(r.feature));
    }
    row.push_back(CsvWriter::num(rec.models.front().smooth));
    row.push_back(CsvWriter::num(rec.fused_norm));
    for (double w : rec.omega) row.push_back(CsvWriter::num(w));
    csv.row(row);
  }
}

void write_eval_csv(const fs::path& dir, const EvalResult& result) {
  CsvWriter csv(dir / "eval.csv");
  csv.row({"model", "task", "asr", "ap", "mean_confidence",
           "mean_task_loss"});
  for (const ModelEval& ev : result.models) {
    std::string task = ev.task == Task::kDetect
                           ? "detect"
                           : (ev.task == Task::kSegment ? "segment" : "depth");
    csv.row({ev.model, task, CsvWriter::num(ev.asr), CsvWriter::num(ev.ap),
             CsvWriter::num(ev.mean_confidence),
             CsvWriter::num(ev.mean_task_loss)});
  }
  csv.row({"ensemble-mean", "detect",
           CsvWriter::num(result.ensemble_mean_asr), "", "", ""});

  CsvWriter conf(dir / "confidences.csv");
  conf.row({"view", "model", "confidence"});
  for (const ModelEval& ev : result.models) {
    for (size_t vi = 0; vi < ev.per_view_confidence.size(); ++vi) {
      conf.row({CsvWriter::num(int64_t(vi)), ev.model,
                CsvWriter::num(ev.per_view_confidence[vi])});
    }
  }
}

AttackOptions attack_options(const Config& cfg) {
  AttackOptions opts;
  opts.lr = cfg.lr;
  opts.tau = cfg.tau;
  opts.lambda_det = cfg.lambda_det;
  opts.lambda_fea = cfg.lambda_fea;
  opts.lambda_smo = cfg.lambda_smo;
  opts.std_p = cfg.std_p;
  opts.std_block = cfg.std_block;
  opts.oga_patch = cfg.oga_patch;
  opts.eps_floor = cfg.eps_floor;
  opts.fusion = cfg.fusion;
  opts.optimizer = cfg.optimizer;
  opts.seed = cfg.seed;
  return opts;
}

struct PreparedAttack {
  std::vector<Model> models;       // full pool
  std::vector<int> ensemble;       // indices into the pool
  std::vector<SceneView> train_views;
  SceneParams params;
};

PreparedAttack prepare_attack(const Config& cfg, const Mesh& mesh) {
  PreparedAttack prep;
  prep.models = load_pool(cfg);
  prep.ensemble = resolve_ensemble(cfg, prep.models, mesh);
  prep.params = cfg.scene_params();
  prep.train_views = make_views(prep.params, mesh, cfg.train_views,
                                derive_seed(cfg.seed, "train-views"));
  return prep;
}

AttackRun execute_attack(const Config& cfg, const PreparedAttack& prep,
                         const Mesh& mesh, const AttackOptions& opts) {
  std::vector<std::unique_ptr<SurrogateObjective>> owned;
  std::vector<const Objective*> objectives;
  for (int idx : prep.ensemble) {
    owned.push_back(std::make_unique<SurrogateObjective>(
        prep.models[size_t(idx)], opts));
    objectives.push_back(owned.back().get());
  }
  AttackRunConfig rc;
  rc.epochs = cfg.epochs;
  rc.steps_per_epoch = cfg.steps_per_epoch;
  rc.minibatch = cfg.minibatch;
  rc.options = opts;
  return run_attack(objectives, prep.train_views, prep.params, mesh, rc);
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_pretrain(const Config& cfg) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "pretrain");
  SceneParams params = cfg.scene_params();
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  auto train = make_views(params, mesh, cfg.train_views,
                          derive_seed(cfg.seed, "pretrain-train"));
  auto held = make_views(params, mesh, std::max(cfg.eval_views, 30),
                         derive_seed(cfg.seed, "pretrain-heldout"));
  PretrainOptions opts;
  opts.budget = cfg.pretrain_steps;
  opts.batch = cfg.pretrain_batch;
  opts.lr = cfg.pretrain_lr;
  opts.eval_every = cfg.pretrain_eval_every;
  opts.seed = cfg.seed;
  opts.tau = cfg.tau;

  CsvWriter csv(fs::path(cfg.output_dir) / "pretrain.csv");
  csv.row({"model", "status", "steps", "target_conf", "background_conf",
           "seg_iou", "depth_relerr"});
  for (const ModelSpec& spec : pool_specs(cfg)) {
    Model model = build_model(spec);
    PretrainMetrics metrics = pretrain(model, params, mesh, train, held, opts);
    save_model(cfg.resolved_models_dir() / model.name(), model);
    csv.row({model.name(), metrics.status,
             CsvWriter::num(int64_t(metrics.steps_used)),
             CsvWriter::num(metrics.target_conf),
             CsvWriter::num(metrics.background_conf),
             CsvWriter::num(metrics.seg_iou),
             CsvWriter::num(metrics.depth_relerr)});
    std::cout << model.name() << ": " << metrics.status << " after "
              << metrics.steps_used << " steps (target "
              << metrics.target_conf << ", background "
              << metrics.background_conf << ")\n";
  }
  return 0;
}

int cmd_similarity(const Config& cfg) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "similarity");
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  std::vector<Model> models = load_pool(cfg);
  SimilarityMatrix m = pool_similarity(cfg, models, mesh);
  CsvWriter csv(fs::path(cfg.output_dir) / "similarity.csv");
  std::vector<std::string> header;
  for (const Model& model : models) header.push_back(model.name());
  csv.row(header);
  for (int a = 0; a < m.n; ++a) {
    std::vector<std::string> row;
    for (int b = 0; b < m.n; ++b) row.push_back(CsvWriter::num(m.at(a, b)));
    csv.row(row);
  }
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "similarity.csv")
            << "\n";
  return 0;
}

int cmd_select(const Config& cfg) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "select");
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  std::vector<Model> models = load_pool(cfg);
  std::vector<int> chosen = resolve_ensemble(cfg, models, mesh);
  nlohmann::json doc;
  doc["indices"] = chosen;
  std::vector<std::string> names;
  for (int i : chosen) names.push_back(models[size_t(i)].name());
  doc["models"] = names;
  doc["config_hash"] = config_hash(cfg);
  std::ofstream out(fs::path(cfg.output_dir) / "ensemble.json");
  out << doc.dump(2) << "\n";
  std::cout << "selected:";
  for (const std::string& n : names) std::cout << " " << n;
  std::cout << "\n";
  return 0;
}

int cmd_attack(const Config& cfg) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "attack");
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  PreparedAttack prep = prepare_attack(cfg, mesh);
  AttackRun run = execute_attack(cfg, prep, mesh, attack_options(cfg));

  fs::path outdir(cfg.output_dir);
  fs::create_directories(outdir / "checkpoints");
  write_checkpoint(outdir / "checkpoints" / "texture_initial.ogaf",
                   run.initial_texture, 0, cfg);
  for (size_t e = 0; e < run.epoch_checkpoints.size(); ++e) {
    char name[64];
    std::snprintf(name, sizeof(name), "texture_epoch_%03d.ogaf", int(e + 1));
    write_checkpoint(outdir / "checkpoints" / name, run.epoch_checkpoints[e],
                     int((e + 1) * size_t(cfg.steps_per_epoch)), cfg);
  }
  write_checkpoint(outdir / "texture_final.ogaf", run.final_texture,
                   cfg.epochs * cfg.steps_per_epoch, cfg);
  write_history_csv(outdir / "history.csv", run.history);
  std::cout << "attack finished: " << run.history.size() << " steps, texture "
            << (outdir / "texture_final.ogaf") << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, const std::string& texture_path) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "eval");
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  std::vector<Model> models = load_pool(cfg);
  fs::path tex_file = texture_path.empty()
                          ? fs::path(cfg.output_dir) / "texture_final.ogaf"
                          : fs::path(texture_path);
  if (!fs::exists(tex_file)) {
    throw std::runtime_error("texture file not found: " + tex_file.string());
  }
  Tensor texture = read_ogaf(tex_file);
  SceneParams params = cfg.scene_params();
  auto views = make_views(params, mesh, cfg.eval_views,
                          derive_seed(cfg.seed, "eval-views"));
  EvalResult result = evaluate(texture, models, views, params, mesh, cfg.tau);
  write_eval_csv(cfg.output_dir, result);
  for (const ModelEval& ev : result.models) {
    std::cout << ev.model << ": asr=" << ev.asr << " ap=" << ev.ap
              << " mean_conf=" << ev.mean_confidence
              << " task_loss=" << ev.mean_task_loss << "\n";
  }
  std::cout << "ensemble-mean asr=" << result.ensemble_mean_asr << "\n";
  return 0;
}

int cmd_compare_fusion(const Config& cfg) {
  DirLock lock(cfg.output_dir);
  write_run_info(cfg, "compare-fusion");
  Mesh mesh = Mesh::unit_cube(cfg.atlas_h, cfg.atlas_w);
  PreparedAttack prep = prepare_attack(cfg, mesh);
  auto eval_views = make_views(prep.params, mesh, cfg.eval_views,
                               derive_seed(cfg.seed, "eval-views"));
  std::vector<Model> ensemble_models;
  for (int i : prep.ensemble) ensemble_models.push_back(prep.models[size_t(i)]);

  CsvWriter csv(fs::path(cfg.output_dir) / "comparison.csv");
  csv.row({"label", "strategy", "patch", "ensemble_mean_asr",
           "wall_seconds"});
  auto run_one = [&](const std::string& label, const std::string& strategy,
                     int patch) {
    AttackOptions opts = attack_options(cfg);
    opts.fusion = strategy;
    opts.oga_patch = patch;
    const auto start = std::chrono::steady_clock::now();
    AttackRun run = execute_attack(cfg, prep, mesh, opts);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    EvalResult result = evaluate(run.final_texture, ensemble_models,
                                 eval_views, prep.params, mesh, cfg.tau);
    csv.row({label, strategy, CsvWriter::num(int64_t(patch)),
             CsvWriter::num(result.ensemble_mean_asr), CsvWriter::num(secs)});
    std::cout << label << ": asr=" << result.ensemble_mean_asr << " ("
              << secs << " s)\n";
  };
  for (const std::string& strategy : cfg.compare_strategies) {
    run_one(strategy, strategy, cfg.oga_patch);
  }
  for (int patch : cfg.compare_patch_sizes) {
    const std::string label =
        patch == 0 ? "oga-no-patch" : "oga-patch-" + std::to_string(patch);
    run_one(label, "oga", patch);
  }
  return 0;
}

struct RenderArgs {
  double azimuth = 30.0, elevation = 20.0, distance = 12.0, ambient = 0.7;
  std::vector<double> light = {0.0, 0.0, 1.0};
  double offset_x = 0.0, offset_y = 0.0;
  std::string texture_path;
  uint64_t seed = 42;
  int image_size = 128;
  int atlas_h = 128, atlas_w = 192;
  std::string out_dir = "render_out";
};

int cmd_render(const RenderArgs& args) {
  Mesh mesh = Mesh::unit_cube(args.atlas_h, args.atlas_w);
  Tensor texture;
  if (!args.texture_path.empty()) {
    texture = read_ogaf(args.texture_path);
    if (texture.rank() != 3 || texture.shape[0] != args.atlas_h ||
        texture.shape[1] != args.atlas_w || texture.shape[2] != 3) {
      throw std::runtime_error("texture shape does not match the atlas");
    }
  } else {
    Rng rng(derive_seed(args.seed, "render-texture"));
    texture = Tensor::uniform({args.atlas_h, args.atlas_w, 3}, rng, 0.25,
                              0.75);
  }
  if (args.light.size() != 3) {
    throw std::invalid_argument("--light needs three components");
  }
  double ln = std::sqrt(args.light[0] * args.light[0] +
                        args.light[1] * args.light[1] +
                        args.light[2] * args.light[2]);
  if (ln <= 0.0) throw std::invalid_argument("--light must be nonzero");
  Illumination illum{args.ambient,
                     {args.light[0] / ln, args.light[1] / ln,
                      args.light[2] / ln}};
  Pose pose{args.azimuth, args.elevation, args.distance};
  RenderOutput out = rasterize(mesh, texture, pose, illum, args.image_size,
                               args.image_size, args.offset_x, args.offset_y);
  fs::create_directories(args.out_dir);
  fs::path dir(args.out_dir);
  write_ppm(dir / "image.ppm", out.image);
  write_ppm(dir / "mask.ppm", out.screen_mask);
  Tensor depth_vis = out.depth;
  const double dmax = depth_vis.max();
  if (dmax > 0.0) {
    for (double& v : depth_vis.data) v /= dmax;
  }
  write_ppm(dir / "depth.ppm", depth_vis);
  write_ppm(dir / "visibility.ppm", out.texel_visibility);
  Tensor background =
      make_background(derive_seed(args.seed, "render-bg"), args.image_size,
                      args.image_size);
  write_ppm(dir / "composite.ppm",
            composite(out.image, background, out.screen_mask));
  std::cout << "wrote renders to " << dir << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"joint multi-model adversarial texture attack workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string texture_path;
  RenderArgs render_args;

  CLI::App* pretrain = app.add_subcommand("pretrain",
                                          "train the surrogate model pool");
  pretrain->add_option("--config", config_path, "config JSON")->required();

  CLI::App* similarity = app.add_subcommand(
      "similarity", "pairwise gradient cosine similarity matrix");
  similarity->add_option("--config", config_path, "config JSON")->required();

  CLI::App* select =
      app.add_subcommand("select", "greedy surrogate ensemble selection");
  select->add_option("--config", config_path, "config JSON")->required();

  CLI::App* attack =
      app.add_subcommand("attack", "optimize the adversarial texture");
  attack->add_option("--config", config_path, "config JSON")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a texture (ASR/AP)");
  eval->add_option("--config", config_path, "config JSON")->required();
  eval->add_option("--texture", texture_path, "texture .ogaf file");

  CLI::App* compare = app.add_subcommand(
      "compare-fusion", "run the attack under each fusion strategy");
  compare->add_option("--config", config_path, "config JSON")->required();

  CLI::App* render = app.add_subcommand("render", "dump render images");
  render->add_option("--azimuth", render_args.azimuth, "degrees [0,360)");
  render->add_option("--elevation", render_args.elevation, "degrees [0,50]");
  render->add_option("--distance", render_args.distance, "scale factor > 0");
  render->add_option("--ambient", render_args.ambient, "ambient in [0.3,1]");
  render->add_option("--light", render_args.light, "light direction x y z")
      ->expected(3);
  render->add_option("--offset-x", render_args.offset_x, "screen offset px");
  render->add_option("--offset-y", render_args.offset_y, "screen offset px");
  render->add_option("--texture", render_args.texture_path, "texture .ogaf");
  render->add_option("--seed", render_args.seed, "texture seed");
  render->add_option("--image-size", render_args.image_size, "image edge px");
  render->add_option("--atlas-height", render_args.atlas_h, "atlas rows");
  render->add_option("--atlas-width", render_args.atlas_w, "atlas cols");
  render->add_option("--out", render_args.out_dir, "output directory");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*render) return cmd_render(render_args);
    Config cfg = load_config(config_path);
    if (*pretrain) return cmd_pretrain(cfg);
    if (*similarity) return cmd_similarity(cfg);
    if (*select) return cmd_select(cfg);
    if (*attack) return cmd_attack(cfg);
    if (*eval) return cmd_eval(cfg, texture_path);
    if (*compare) return cmd_compare_fusion(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace oga
