// npt: data generation, training, evaluation and pose transfer from the shell.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "npt/gradcheck.hpp"
#include "npt/trainer.hpp"

using namespace npt;
namespace fs = std::filesystem;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void result(const std::string& sub, bool pass, const std::string& kv) {
  std::cout << "RESULT " << sub << (pass ? " PASS" : " FAIL") << (kv.empty() ? "" : " " + kv) << std::endl;
}

// ---- dataset flags ---------------------------------------------------------

struct DataFlags {
  synth::DatasetSpec spec;
  std::string ranges_file;
  std::string dir;
};

void add_spec_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--identities", f.spec.train_identities, "training identities")->check(CLI::PositiveNumber);
  app->add_option("--poses", f.spec.train_poses, "training poses")->check(CLI::PositiveNumber);
  app->add_option("--eval-identities", f.spec.eval_identities, "held-out identities")->check(CLI::PositiveNumber);
  app->add_option("--seen-pairs", f.spec.seen_pairs_per_identity, "seen-pose pairs per held-out identity")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--unseen-pairs", f.spec.unseen_pairs_per_identity, "unseen-pose pairs per held-out identity")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--ranges", f.ranges_file, "joint range JSON file")->check(CLI::ExistingFile);
}

synth::Dataset dataset_from(const DataFlags& f, std::uint64_t seed) {
  if (!f.dir.empty()) {
    if (!fs::exists(fs::path(f.dir) / "manifest.json")) throw RuntimeFailure("no manifest.json in " + f.dir);
    return synth::load_dataset(f.dir);
  }
  auto spec = f.spec;
  spec.seed = seed;
  if (!f.ranges_file.empty()) spec.ranges = synth::ranges_from_json(read_text(f.ranges_file));
  return synth::make_dataset(spec);
}

// ---- training flags --------------------------------------------------------

struct TrainFlags {
  std::string config_file;
  double lr = 0;
  int batch = 0, epochs = 0, checkpoint_every = 0;
  double lambda_edge = 0;
  std::string variant, widths, precision;
  std::uint64_t seed = 0, model_seed = 0;
  CLI::Option *o_lr{}, *o_batch{}, *o_epochs{}, *o_every{}, *o_lambda{}, *o_variant{}, *o_widths{}, *o_precision{},
      *o_seed{}, *o_model_seed{};
};

void add_train_flags(CLI::App* app, TrainFlags& f, bool with_variant) {
  app->add_option("--config", f.config_file, "JSON file with training settings (flags override)")
      ->check(CLI::ExistingFile);
  f.o_lr = app->add_option("--lr", f.lr, "learning rate");
  f.o_batch = app->add_option("--batch", f.batch, "batch size");
  f.o_epochs = app->add_option("--epochs", f.epochs, "epochs");
  f.o_lambda = app->add_option("--lambda-edge", f.lambda_edge, "edge-length loss weight");
  if (with_variant) f.o_variant = app->add_option("--variant", f.variant, "full, concat1, no_spadain or maxpool");
  f.o_widths = app->add_option("--widths", f.widths, "desk, paper or c1,c2,c3,w2,w3");
  f.o_precision = app->add_option("--precision", f.precision, "f32 or f64");
  f.o_seed = app->add_option("--seed", f.seed, "training seed (pair sampling, shuffles, init)");
  f.o_model_seed = app->add_option("--model-seed", f.model_seed, "initialization seed (defaults to --seed)");
  f.o_every = app->add_option("--checkpoint-every", f.checkpoint_every, "epochs between checkpoints");
}

TrainConfig train_config(const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config_file.empty()) cfg = train_config_from_json(read_text(f.config_file), cfg);
  if (f.o_lr->count()) cfg.lr = f.lr;
  if (f.o_batch->count()) cfg.batch_size = f.batch;
  if (f.o_epochs->count()) cfg.epochs = f.epochs;
  if (f.o_lambda->count()) cfg.lambda_edge = f.lambda_edge;
  if (f.o_variant && f.o_variant->count()) cfg.model.variant = parse_variant(f.variant);
  if (f.o_widths->count()) cfg.model.widths = parse_widths(f.widths);
  if (f.o_precision->count()) cfg.precision = parse_precision(f.precision);
  if (f.o_seed->count()) {
    cfg.seed = f.seed;
    cfg.model.seed = f.seed;
  }
  if (f.o_model_seed->count()) cfg.model.seed = f.model_seed;
  if (f.o_every->count()) cfg.checkpoint_every = f.checkpoint_every;
  cfg.validate();
  return cfg;
}

void print_epoch(const std::string& prefix, const EpochMetrics& m) {
  std::fprintf(stderr, "%sepoch %d rec=%.5g edge=%.5g total=%.5g seen_pmd=%.5g unseen_pmd=%.5g %.1fs\n", prefix.c_str(),
               m.epoch, m.rec, m.edge, m.total, m.seen_pmd, m.unseen_pmd, m.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural pose transfer: synthetic data, training, evaluation and inference"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // gen-data
  DataFlags gen;
  std::uint64_t gen_seed = 7;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic pair dataset");
  add_spec_flags(c_gen, gen);
  c_gen->add_option("--seed", gen_seed, "master seed");
  c_gen->add_option("--out", gen.dir, "output directory")->required();

  // train
  DataFlags train_data;
  TrainFlags train_flags;
  std::string train_out;
  std::uint64_t train_data_seed = 7;
  bool train_no_timing = false;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--data", train_data.dir, "dataset directory (from gen-data)");
  c_train->add_option("--data-seed", train_data_seed, "seed for an in-memory dataset when --data is absent");
  add_spec_flags(c_train, train_data);
  add_train_flags(c_train, train_flags, true);
  c_train->add_flag("--no-timing", train_no_timing, "write 0 in the seconds column (byte-reproducible metrics)");
  c_train->add_option("--out", train_out, "output directory for checkpoints and metrics.csv")->required();

  // eval
  DataFlags eval_data;
  std::string eval_ckpt, eval_csv;
  std::uint64_t eval_data_seed = 7;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out pairs");
  c_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  c_eval->add_option("--data", eval_data.dir, "dataset directory");
  c_eval->add_option("--data-seed", eval_data_seed, "seed for an in-memory dataset when --data is absent");
  add_spec_flags(c_eval, eval_data);
  c_eval->add_option("--per-sample", eval_csv, "write per-sample PMDs to this CSV");

  // transfer
  std::string tr_pose, tr_id, tr_ckpt, tr_out, tr_ply;
  auto* c_transfer = app.add_subcommand("transfer", "transfer the pose of one mesh onto another");
  c_transfer->add_option("--pose", tr_pose, "pose mesh (OBJ)")->required();
  c_transfer->add_option("--identity", tr_id, "identity mesh (OBJ)")->required();
  c_transfer->add_option("--checkpoint", tr_ckpt, "checkpoint file")->required();
  c_transfer->add_option("--out", tr_out, "output OBJ")->required();
  c_transfer->add_option("--colored-ply", tr_ply, "also write a PLY colored by vertex index");

  // ablate
  DataFlags abl_data;
  TrainFlags abl_flags;
  std::string abl_csv;
  std::vector<std::string> abl_only;
  std::uint64_t abl_data_seed = 7;
  auto* c_ablate = app.add_subcommand("ablate", "train every ablation under one budget and compare");
  c_ablate->add_option("--data", abl_data.dir, "dataset directory");
  c_ablate->add_option("--data-seed", abl_data_seed, "seed for an in-memory dataset when --data is absent");
  add_spec_flags(c_ablate, abl_data);
  add_train_flags(c_ablate, abl_flags, false);
  c_ablate->add_option("--only", abl_only, "subset of full,no_edge,no_spadain,concat1,maxpool")->delimiter(',');
  c_ablate->add_option("--csv", abl_csv, "also write the table as CSV to this file");

  // grad-check
  std::uint64_t gc_seed = 1;
  int gc_coords = 6;
  std::string gc_widths = "desk";
  auto* c_grad = app.add_subcommand("grad-check", "finite-difference check of every primitive and the model");
  c_grad->add_option("--seed", gc_seed, "seed");
  c_grad->add_option("--coords", gc_coords, "sampled coordinates per parameter tensor (0 = all)");
  c_grad->add_option("--widths", gc_widths, "desk, paper or c1,c2,c3,w2,w3");

  // probe
  DataFlags probe_data;
  std::string probe_ckpt;
  double probe_noise = 0.01;
  int probe_shuffles = 10;
  std::uint64_t probe_seed = 1, probe_data_seed = 7;
  auto* c_probe = app.add_subcommand("probe", "noise and vertex-order robustness of a checkpoint");
  c_probe->add_option("--checkpoint", probe_ckpt, "checkpoint file")->required();
  c_probe->add_option("--data", probe_data.dir, "dataset directory");
  c_probe->add_option("--data-seed", probe_data_seed, "seed for an in-memory dataset when --data is absent");
  add_spec_flags(c_probe, probe_data);
  c_probe->add_option("--noise", probe_noise, "Gaussian noise std on normalized pose vertices")
      ->check(CLI::NonNegativeNumber);
  c_probe->add_option("--shuffles", probe_shuffles, "pose-mesh shuffles")->check(CLI::PositiveNumber);
  c_probe->add_option("--seed", probe_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const synth::KinematicBody body;

    if (*c_gen) {
      auto spec = gen.spec;
      spec.seed = gen_seed;
      if (!gen.ranges_file.empty()) spec.ranges = synth::ranges_from_json(read_text(gen.ranges_file));
      const auto ds = synth::make_dataset(spec);
      synth::write_dataset(ds, body, gen.dir);
      result("gen-data", true,
             "identities=" + std::to_string(ds.train_identities.size()) + " poses=" + std::to_string(ds.train_poses.size()) +
                 " eval_identities=" + std::to_string(ds.eval_identities.size()) + " samples=" +
                 std::to_string(ds.samples.size()) + " vertices=" + std::to_string(body.template_mesh().vertex_count()));
      return 0;
    }

    if (*c_train) {
      auto cfg = train_config(train_flags);
      const auto ds = dataset_from(train_data, train_data_seed);
      cfg.checkpoint_dir = train_out;
      fs::create_directories(train_out);
      auto res = train(ds, body, cfg, [](const EpochMetrics& m) { print_epoch("", m); });
      res.log.write_csv(fs::path(train_out) / "metrics.csv", !train_no_timing);
      write_file_atomic(fs::path(train_out) / "config.json", train_config_json(cfg));
      const auto& e = res.final_eval;
      result("train", true,
             "epochs=" + std::to_string(cfg.epochs) + " variant=" + variant_name(cfg.model.variant) +
                 " seen_pmd=" + num(e.seen_pmd) + " unseen_pmd=" + num(e.unseen_pmd) +
                 " baseline_seen_pmd=" + num(e.baseline_seen_pmd) + " baseline_unseen_pmd=" + num(e.baseline_unseen_pmd) +
                 " checkpoint=" + (fs::path(train_out) / "final.npt").string());
      return 0;
    }

    if (*c_eval) {
      if (!fs::exists(eval_ckpt)) throw RuntimeFailure("checkpoint not found: " + eval_ckpt);
      const auto ck = load_checkpoint(eval_ckpt);
      const auto ds = dataset_from(eval_data, eval_data_seed);
      const auto e = evaluate(ck.params, ck.config, prepare_eval_set(ds, body));
      if (!eval_csv.empty()) {
        std::string csv = "index,split,pmd,baseline_pmd\n";
        for (std::size_t i = 0; i < e.samples.size(); ++i) {
          csv += std::to_string(i) + "," + synth::split_name(e.samples[i].split) + "," + num(e.samples[i].pmd) + "," +
                 num(e.samples[i].baseline_pmd) + "\n";
        }
        write_file_atomic(eval_csv, csv);
      }
      result("eval", true,
             "seen_pmd=" + num(e.seen_pmd) + " unseen_pmd=" + num(e.unseen_pmd) + " baseline_seen_pmd=" +
                 num(e.baseline_seen_pmd) + " baseline_unseen_pmd=" + num(e.baseline_unseen_pmd) +
                 " samples=" + std::to_string(e.samples.size()));
      return 0;
    }

    if (*c_transfer) {
      if (!fs::exists(tr_ckpt)) throw RuntimeFailure("checkpoint not found: " + tr_ckpt);
      const auto pose = read_obj(tr_pose);
      const auto id = read_obj(tr_id);
      if (pose.vertex_count() != id.vertex_count()) {
        throw RuntimeFailure("vertex count mismatch: pose mesh has " + std::to_string(pose.vertex_count()) +
                             " vertices, identity mesh has " + std::to_string(id.vertex_count()));
      }
      const auto ck = load_checkpoint(tr_ckpt);
      const auto np = normalize_unit_sphere(pose);
      const auto ni = normalize_unit_sphere(id);
      const auto out = predict(to_tensor<float>(np.mesh), to_tensor<float>(ni.mesh), ck.params, ck.config);
      Mesh result_mesh = from_tensor(out, 0, id);
      for (auto& v : result_mesh.vertices) v = ni.restore(v);
      write_obj(result_mesh, tr_out);
      if (!tr_ply.empty()) write_ply_colored(result_mesh, index_colors(result_mesh.vertex_count()), tr_ply);
      result("transfer", true, "vertices=" + std::to_string(result_mesh.vertex_count()) + " out=" + tr_out);
      return 0;
    }

    if (*c_ablate) {
      const auto cfg = train_config(abl_flags);
      const auto ds = dataset_from(abl_data, abl_data_seed);
      const auto table = run_ablation_suite(ds, body, cfg, abl_only, nullptr,
                                            [](const std::string& name, const EpochMetrics& m) { print_epoch(name + " ", m); });
      std::cout << table.text() << "\n" << table.csv();
      if (!abl_csv.empty()) write_file_atomic(abl_csv, table.csv());
      bool pass = true;
      std::string kv;
      auto has = [&](const char* n) {
        return std::any_of(table.rows.begin(), table.rows.end(), [&](const AblationRow& r) { return r.name == n; });
      };
      auto seen = [&](const char* n) { return table.at(n).seen_pmd; };
      auto relation = [&](const char* key, bool ok) {
        pass = pass && ok;
        kv += std::string(kv.empty() ? "" : " ") + key + "=" + (ok ? "yes" : "no");
      };
      if (has("full") && has("no_edge")) relation("full_le_1.15_no_edge", seen("full") <= 1.15 * seen("no_edge"));
      if (has("full") && has("no_spadain")) relation("full_lt_no_spadain", seen("full") < seen("no_spadain"));
      if (has("full") && has("concat1")) relation("full_lt_concat1", seen("full") < seen("concat1"));
      if (has("full") && has("maxpool")) relation("full_le_maxpool", seen("full") <= seen("maxpool"));
      if (has("no_spadain") && has("concat1")) relation("no_spadain_lt_concat1", seen("no_spadain") < seen("concat1"));
      result("ablate", pass, kv);
      return pass ? 0 : 2;
    }

    if (*c_grad) {
      GradCheckOptions opts;
      opts.seed = gc_seed;
      opts.coords_per_tensor = gc_coords;
      opts.widths = parse_widths(gc_widths);
      opts.variants = {Variant::full, Variant::concat1, Variant::no_spadain, Variant::maxpool};
      double worst = 0;
      std::string worst_name;
      Index coords = 0;
      for (const auto& e : run_grad_check_suite(opts)) {
        std::printf("%-60s max_rel_error=%.3e coords=%lld\n", e.name.c_str(), e.result.max_rel_error,
                    static_cast<long long>(e.result.coordinates_checked));
        coords += e.result.coordinates_checked;
        if (e.result.max_rel_error >= worst) {
          worst = e.result.max_rel_error;
          worst_name = e.name;
        }
      }
      std::fflush(stdout);
      const bool pass = worst < 1e-4;
      result("grad-check", pass, "max_rel_error=" + num(worst) + " worst=" + worst_name + " coords=" + std::to_string(coords));
      return pass ? 0 : 2;
    }

    if (*c_probe) {
      if (!fs::exists(probe_ckpt)) throw RuntimeFailure("checkpoint not found: " + probe_ckpt);
      const auto ck = load_checkpoint(probe_ckpt);
      const auto ds = dataset_from(probe_data, probe_data_seed);
      const auto eval_set = prepare_eval_set(ds, body);
      double clean = 0, noisy = 0, spread = 0, id_err = 0;
      int n = 0;
      std::uint64_t k = 0;
      for (const auto& s : eval_set) {
        if (s.split != synth::Split::seen_pose) continue;
        const auto r = robustness_probe(ck.params, ck.config, s, probe_noise, probe_shuffles, synth::child_seed(probe_seed, k++));
        clean += r.clean_pmd;
        noisy += r.noisy_pmd;
        spread = std::max(spread, r.shuffle_pmd_spread);
        id_err = std::max(id_err, r.identity_shuffle_error);
        ++n;
      }
      if (n == 0) throw RuntimeFailure("dataset has no seen-pose pairs to probe");
      clean /= n;
      noisy /= n;
      const double rel = clean > 0 ? (noisy - clean) / clean : 0.0;
      const bool pass = rel < 0.5 && spread < 0.5 * clean && id_err < 1e-6;
      result("probe", pass,
             "clean_pmd=" + num(clean) + " noisy_pmd=" + num(noisy) + " noise_rel_increase=" + num(rel) +
                 " shuffle_spread=" + num(spread) + " joint_shuffle_error=" + num(id_err) + " pairs=" + std::to_string(n));
      return pass ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
