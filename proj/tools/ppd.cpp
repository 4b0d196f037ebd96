// Command-line surface: dataset generation, training, evaluation, mesh
// export and latent/state interpolation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ppd/datagen.hpp"
#include "ppd/eval.hpp"
#include "ppd/fields.hpp"
#include "ppd/nets.hpp"
#include "ppd/threads.hpp"
#include "ppd/trainer.hpp"
#include "ppd/version.hpp"

namespace fs = std::filesystem;
using ppd::json;

namespace {

struct GenArgs {
  std::string category = "toy-laptop";
  int samples = 20, poses = 50, test_samples = 0, test_poses = -1;
  std::string out;
  uint64_t seed = 1;
  std::string grid = "16,32";
  int surface_points = 4096, occ_points = 4096;
  bool force = false;
};

struct TrainArgs {
  std::string data, out, config_path;
  std::optional<int> stage1, stage2, batch;
  std::optional<double> lr;
  std::optional<uint64_t> seed;
  std::optional<int> surface_points, occ_points, adv_points, checkpoint_every;
  std::optional<std::string> precision;
};

struct EvalArgs {
  std::string data, ckpt, report, csv;
  std::string metrics = "iou,epe,chamfer,fscore,joint";
  std::string label_source = "canonical";
  std::string expect_parts;  // "fixed,revolute,prismatic"
  int vote_points = 1024, eval_points = 2048;
  double tau = 0.01;
  uint64_t seed = 1;
};

struct ExportArgs {
  std::string ckpt, data, obj;
  int instance = 0, grid = 32;
};

struct InterpArgs {
  std::string ckpt, data, out, mode = "shape";
  int source = 0, target = 0, steps = 5;
  int grid = 32;
};

int run_gen(const GenArgs& a) {
  ppd::GenConfig cfg;
  cfg.category = ppd::category_from(a.category);
  cfg.samples = a.samples;
  cfg.poses = a.poses;
  cfg.test_samples = a.test_samples;
  cfg.test_poses = a.test_poses;
  cfg.seed = a.seed;
  cfg.surface_points = a.surface_points;
  cfg.occ_points = a.occ_points;
  if (a.grid != "16,32" && a.grid != "16" && a.grid != "32")
    throw std::runtime_error("gen: --grid must be one of 16 | 32 | 16,32");
  ppd::generate_dataset(cfg, a.out, a.force);
  std::cout << "wrote dataset to " << a.out << "\n";
  return 0;
}

ppd::TrainConfig make_train_config(const TrainArgs& a) {
  ppd::TrainConfig cfg;
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in)
      throw std::runtime_error("train: cannot open config " + a.config_path);
    cfg = ppd::train_config_from_json(json::parse(in));
  }
  if (a.stage1) cfg.stage1_steps = *a.stage1;
  if (a.stage2) cfg.stage2_steps = *a.stage2;
  if (a.batch) cfg.batch = *a.batch;
  if (a.lr) cfg.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.surface_points) cfg.surface_points = *a.surface_points;
  if (a.occ_points) cfg.occ_points = *a.occ_points;
  if (a.adv_points) cfg.adv_points = *a.adv_points;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.precision) cfg.precision = *a.precision;
  cfg.validate();
  return cfg;
}

template <class T>
int run_train_typed(const ppd::TrainConfig& cfg, const TrainArgs& a) {
  auto data = ppd::load_dataset(a.data);
  auto st = ppd::TrainState<T>::init(cfg);
  json echo = {{"version", ppd::kVersion},
               {"dataset", a.data},
               {"command", "train"}};
  fs::create_directories(a.out);
  {
    std::ofstream cfg_out(fs::path(a.out) / "config.json");
    json full = ppd::to_json(cfg);
    full["version"] = ppd::kVersion;
    full["dataset"] = a.data;
    cfg_out << full.dump(2) << "\n";
  }
  std::string final_path = ppd::fit(st, data, a.out, echo);
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  ppd::TrainConfig cfg = make_train_config(a);
  if (cfg.precision == "f32") return run_train_typed<float>(cfg, a);
  return run_train_typed<double>(cfg, a);
}

std::vector<ppd::Vec3> record_surface(const ppd::InstanceRecord& rec,
                                      int limit) {
  std::vector<ppd::Vec3> pts;
  const int P = static_cast<int>(rec.surface.size() / 3);
  const int take = limit > 0 ? std::min(P, limit) : P;
  for (int i = 0; i < take; ++i)
    pts.push_back({rec.surface[i * 3], rec.surface[i * 3 + 1],
                   rec.surface[i * 3 + 2]});
  return pts;
}

template <class T>
int run_eval_typed(const EvalArgs& a) {
  json ckpt_echo;
  auto model = ppd::CheckpointIo::load<T>(a.ckpt, &ckpt_echo);
  auto data = ppd::load_dataset(a.data);

  if (!a.expect_parts.empty()) {
    int f, r, p;
    if (std::sscanf(a.expect_parts.c_str(), "%d,%d,%d", &f, &r, &p) != 3)
      throw std::runtime_error("eval: --expect-parts wants F,R,P");
    const auto& b = model.budget();
    if (b.fixed != f || b.revolute != r || b.prismatic != p)
      throw std::runtime_error(
          "eval: part budget mismatch: checkpoint has " +
          std::to_string(b.fixed) + "," + std::to_string(b.revolute) + "," +
          std::to_string(b.prismatic) + ", flags expect " + a.expect_parts);
  }

  ppd::EvalOptions opt;
  opt.vote_points = a.vote_points;
  opt.eval_points = a.eval_points;
  opt.tau = a.tau;

  std::set<std::string> want;
  {
    std::stringstream ss(a.metrics);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok != "iou" && tok != "epe" && tok != "chamfer" &&
          tok != "fscore" && tok != "joint" && tok != "occiou")
        throw std::runtime_error("eval: unknown metric '" + tok + "'");
      want.insert(tok);
    }
  }

  auto train_ids = data.record_ids("train");
  auto test_ids = data.record_ids("test");
  if (test_ids.empty()) test_ids = train_ids;
  int n_labels = static_cast<int>(data.samples[0].shape.parts.size());

  std::vector<int> map_ids;
  if (a.label_source == "canonical") {
    for (int rid : train_ids)
      if (data.records[rid].canonical) map_ids.push_back(rid);
  } else if (a.label_source == "all") {
    map_ids = train_ids;
  } else {
    throw std::runtime_error("eval: --label-source must be canonical or all");
  }

  json report;
  report["version"] = ppd::kVersion;
  report["checkpoint"] = a.ckpt;
  report["dataset"] = a.data;
  report["label_source"] = a.label_source;
  report["config"] = {{"vote_points", a.vote_points},
                      {"eval_points", a.eval_points},
                      {"tau", a.tau},
                      {"metrics", a.metrics},
                      {"seed", a.seed}};
  json metrics = json::object();
  json per_instance = json::array();

  std::optional<ppd::PartLabelMap> map;
  auto need_map = [&] {
    if (!map)
      map = ppd::build_label_map(model, data, map_ids, opt, n_labels);
  };

  if (want.count("iou")) {
    need_map();
    metrics["label_iou"] = ppd::label_iou(model, *map, data, test_ids, opt,
                                          n_labels);
  }
  if (want.count("epe")) {
    need_map();
    double acc = 0, base = 0;
    long n = 0;
    for (int rid : test_ids) {
      if (data.records[rid].canonical) continue;
      int canon = data.canonical_record_of_sample(data.records[rid].sample_id);
      double e = ppd::epe(model, data, rid, canon, opt);
      double b = ppd::epe(model, data, rid, canon, opt, true);
      per_instance.push_back({{"record", rid}, {"epe", e}, {"epe_identity", b}});
      acc += e;
      base += b;
      ++n;
    }
    metrics["epe"] = {{"raw", n ? acc / n : 0.0},
                      {"x100", n ? 100.0 * acc / n : 0.0}};
    metrics["epe_identity_baseline"] = {{"raw", n ? base / n : 0.0},
                                        {"x100", n ? 100.0 * base / n : 0.0}};
  }
  if (want.count("chamfer") || want.count("fscore")) {
    double ch = 0, fs_acc = 0;
    long n = 0;
    ppd::Rng rng(a.seed ^ 0xc4a3f3);
    for (int rid : test_ids) {
      const auto& rec = data.records[rid];
      auto pose = ppd::decode_instance(model, record_surface(rec, a.eval_points),
                                       opt.use_rz);
      auto grid = ppd::sample_grid(model, pose, 32);
      auto mesh = ppd::marching_cubes(grid, 0.5);
      auto pred_pts = ppd::sample_mesh_surface(mesh, 10000, rng);
      std::vector<ppd::Vec3> gt_pts;
      std::vector<uint8_t> gt_lab;
      ppd::Rng gtrng(rng.next_u64());
      std::vector<double> states(rec.states.begin(), rec.states.end());
      ppd::surface_sample(data.samples[rec.sample_id].shape, states, 10000,
                          gtrng, &gt_pts, &gt_lab);
      auto cf = ppd::chamfer_and_fscore(pred_pts, gt_pts, a.tau);
      per_instance.push_back({{"record", rid},
                              {"chamfer_l1", cf.chamfer},
                              {"fscore", cf.fscore}});
      ch += cf.chamfer;
      fs_acc += cf.fscore;
      ++n;
    }
    if (want.count("chamfer"))
      metrics["chamfer_l1"] = {{"raw", n ? ch / n : 0.0},
                               {"x100", n ? 100.0 * ch / n : 0.0}};
    if (want.count("fscore")) {
      metrics["fscore"] = n ? fs_acc / n : 0.0;
      metrics["fscore_tau"] = a.tau;
    }
  }
  if (want.count("joint")) {
    need_map();
    metrics["joint"] = ppd::joint_accuracy(model, *map, data, test_ids, opt)
                           .to_json();
  }
  if (want.count("occiou")) {
    metrics["occupancy_iou"] = ppd::occupancy_iou(model, data, test_ids, opt);
  }
  report["metrics"] = metrics;

  std::ofstream out(a.report);
  if (!out) throw std::runtime_error("eval: cannot write report " + a.report);
  out << report.dump(2) << "\n";
  std::cout << report["metrics"].dump(2) << "\n";

  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    csv << "record,metric,value\n";
    for (const auto& row : per_instance)
      for (auto it = row.begin(); it != row.end(); ++it)
        if (it.key() != "record")
          csv << row["record"].get<int>() << "," << it.key() << ","
              << it.value().dump() << "\n";
  }
  return 0;
}

int run_eval(const EvalArgs& a) {
  if (ppd::CheckpointIo::dtype_of(a.ckpt) == "f32")
    return run_eval_typed<float>(a);
  return run_eval_typed<double>(a);
}

template <class T>
int run_export_typed(const ExportArgs& a) {
  auto model = ppd::CheckpointIo::load<T>(a.ckpt);
  auto data = ppd::load_dataset(a.data);
  if (a.instance < 0 || a.instance >= static_cast<int>(data.records.size()))
    throw std::runtime_error("export: instance " + std::to_string(a.instance) +
                             " out of range (dataset has " +
                             std::to_string(data.records.size()) + ")");
  const auto& rec = data.records[a.instance];
  auto pose = ppd::decode_instance(model, record_surface(rec, 0), true);
  auto groups = ppd::export_part_meshes(model, pose, a.grid);
  if (groups.empty())
    std::cerr << "export: empty reconstruction, writing empty OBJ\n";
  std::string comment = std::string("version ") + ppd::kVersion +
                        " instance " + std::to_string(a.instance) + " grid " +
                        std::to_string(a.grid);
  ppd::write_obj(a.obj, groups, comment);
  std::cout << "wrote " << a.obj << " with " << groups.size() << " part groups\n";
  return 0;
}

int run_export(const ExportArgs& a) {
  if (ppd::CheckpointIo::dtype_of(a.ckpt) == "f32")
    return run_export_typed<float>(a);
  return run_export_typed<double>(a);
}

template <class T>
int run_interp_typed(const InterpArgs& a) {
  auto model = ppd::CheckpointIo::load<T>(a.ckpt);
  auto data = ppd::load_dataset(a.data);
  for (int id : {a.source, a.target})
    if (id < 0 || id >= static_cast<int>(data.records.size()))
      throw std::runtime_error("interp: instance " + std::to_string(id) +
                               " out of range");
  auto src = ppd::decode_instance(
      model, record_surface(data.records[a.source], 0), true);
  auto tgt = ppd::decode_instance(
      model, record_surface(data.records[a.target], 0), true);
  ppd::InterpMode mode =
      a.mode == "shape" ? ppd::InterpMode::kShape : ppd::InterpMode::kState;
  fs::create_directories(a.out);
  json meta;
  meta["version"] = ppd::kVersion;
  meta["mode"] = a.mode;
  meta["source"] = a.source;
  meta["target"] = a.target;
  meta["steps"] = a.steps;
  json latents = json::array();
  for (int k = 0; k < a.steps; ++k) {
    double t = a.steps == 1 ? 0.0 : double(k) / (a.steps - 1);
    auto pose = ppd::interpolate_pose(src, tgt, mode, t, model.part_table());
    auto groups = ppd::export_part_meshes(model, pose, a.grid);
    char name[64];
    std::snprintf(name, sizeof(name), "interp_%03d.obj", k);
    ppd::write_obj((fs::path(a.out) / name).string(), groups,
                   "t=" + std::to_string(t));
    latents.push_back({{"t", t}, {"z_s", pose.z_s}, {"states", pose.states}});
  }
  meta["path"] = latents;
  std::ofstream mo(fs::path(a.out) / "meta.json");
  mo << meta.dump(2) << "\n";
  std::cout << "wrote " << a.steps << " interpolation frames to " << a.out
            << "\n";
  return 0;
}

int run_interp(const InterpArgs& a) {
  if (ppd::CheckpointIo::dtype_of(a.ckpt) == "f32")
    return run_interp_typed<float>(a);
  return run_interp_typed<double>(a);
}

}  // namespace

int main(int argc, char** argv) {
  ppd::configure_threads();
  CLI::App app{"pose-aware part decomposition toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ppd::kVersion);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "generate a procedural dataset");
  gen->add_option("--category", ga.category,
                  "toy-laptop | toy-drawer | toy-eyeglasses");
  gen->add_option("--samples", ga.samples, "training samples");
  gen->add_option("--poses", ga.poses, "poses per training sample");
  gen->add_option("--test-samples", ga.test_samples, "held-out samples");
  gen->add_option("--test-poses", ga.test_poses, "poses per held-out sample");
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_option("--seed", ga.seed, "dataset seed");
  gen->add_option("--grid", ga.grid, "occupancy grids (16,32)");
  gen->add_option("--surface-points", ga.surface_points);
  gen->add_option("--occ-points", ga.occ_points);
  gen->add_flag("--force", ga.force, "overwrite a non-empty directory");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--config", ta.config_path, "JSON config file");
  train->add_option("--stage1-steps", ta.stage1);
  train->add_option("--stage2-steps", ta.stage2);
  train->add_option("--batch", ta.batch);
  train->add_option("--lr", ta.lr);
  train->add_option("--seed", ta.seed);
  train->add_option("--surface-points", ta.surface_points);
  train->add_option("--occ-points", ta.occ_points);
  train->add_option("--adv-points", ta.adv_points);
  train->add_option("--checkpoint-every", ta.checkpoint_every);
  train->add_option("--precision", ta.precision, "f32 | f64");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--ckpt", ea.ckpt)->required();
  ev->add_option("--metrics", ea.metrics,
                 "comma list: iou,epe,chamfer,fscore,joint,occiou");
  ev->add_option("--label-source", ea.label_source, "canonical | all");
  ev->add_option("--report", ea.report, "output JSON")->required();
  ev->add_option("--csv", ea.csv, "optional per-instance CSV");
  ev->add_option("--expect-parts", ea.expect_parts,
                 "assert the checkpoint part budget (F,R,P)");
  ev->add_option("--vote-points", ea.vote_points);
  ev->add_option("--eval-points", ea.eval_points);
  ev->add_option("--tau", ea.tau, "F-score threshold");
  ev->add_option("--seed", ea.seed);

  ExportArgs xa;
  auto* ex = app.add_subcommand("export", "export a reconstruction as OBJ");
  ex->add_option("--ckpt", xa.ckpt)->required();
  ex->add_option("--data", xa.data)->required();
  ex->add_option("--instance", xa.instance, "record index")->required();
  ex->add_option("--grid", xa.grid);
  ex->add_option("--obj", xa.obj, "output OBJ path")->required();

  InterpArgs ia;
  auto* in = app.add_subcommand("interp", "interpolate shape or joint state");
  in->add_option("--ckpt", ia.ckpt)->required();
  in->add_option("--data", ia.data)->required();
  in->add_option("--source", ia.source)->required();
  in->add_option("--target", ia.target)->required();
  in->add_option("--mode", ia.mode, "shape | state")
      ->check(CLI::IsMember({"shape", "state"}));
  in->add_option("--steps", ia.steps);
  in->add_option("--grid", ia.grid);
  in->add_option("--out", ia.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (*gen) return run_gen(ga);
    if (*train) return run_train(ta);
    if (*ev) return run_eval(ea);
    if (*ex) return run_export(xa);
    if (*in) return run_interp(ia);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
