// Acceptance suite: one PASS/FAIL line per criterion. Exits 0 once every
// criterion has been evaluated (the lines are the verdict); --strict makes the
// exit code the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "npt/gradcheck.hpp"
#include "npt/trainer.hpp"

namespace fs = std::filesystem;
using namespace npt;

namespace {

struct Report {
  int failures = 0;

  void line(int id, const std::string& title, bool pass, const std::string& detail) {
    std::printf("[%-4s] %2d %-26s %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor3<double> random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor3<double> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Mesh random_mesh(std::mt19937_64& rng, Index nv, Index nf) {
  std::uniform_real_distribution<double> u(-10, 10);
  std::uniform_int_distribution<Index> pick(0, nv - 1);
  Mesh m;
  for (Index i = 0; i < nv; ++i) m.vertices.emplace_back(u(rng), u(rng), u(rng));
  while (m.face_count() < nf) {
    Face f{pick(rng), pick(rng), pick(rng)};
    if (f[0] != f[1] && f[1] != f[2] && f[0] != f[2]) m.faces.push_back(f);
  }
  return m;
}

// ---------------------------------------------------------------------------

void gradients(Report& rep) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opts;
  const auto entries = run_grad_check_suite(opts);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& e : entries) {
    if (e.result.max_rel_error >= worst) {
      worst = e.result.max_rel_error;
      worst_name = e.name;
    }
  }
  rep.line(1, "gradient correctness", worst < 1e-4 && secs < 30,
           fmt("checks=%zu max_rel_err=%.3e (%s) seconds=%.1f", entries.size(), worst, worst_name.c_str(), secs));
}

void spadain_statistics(Report& rep) {
  std::mt19937_64 rng(21);
  ModelConfig cfg;
  const auto params = init_params<double>(cfg, 21);
  double worst_mean = 0, worst_std = 0;
  long units = 0, rows = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index v = 12 + static_cast<Index>(rng() % 53);
    const auto pose = random_tensor({2, 3, v}, rng, -1, 1);
    const auto id = random_tensor({2, 3, v}, rng, -1, 1);
    Tape<double> tape;
    ParamBinder<double> bind(tape, false);
    SpadainTrace<double> trace;
    forward(tape.leaf(pose, false), tape.leaf(id, false), params, cfg, bind, &trace);
    for (std::size_t u = 0; u < trace.normalized.size(); ++u) {
      const auto& in = trace.inputs[u].value();
      const auto& out = trace.normalized[u].value();
      ++units;
      for (Index n = 0; n < in.n(); ++n) {
        for (Index c = 0; c < in.c(); ++c) {
          double mi = 0, mo = 0;
          for (Index k = 0; k < v; ++k) {
            mi += in(n, c, k);
            mo += out(n, c, k);
          }
          mi /= static_cast<double>(v);
          mo /= static_cast<double>(v);
          double vi = 0, vo = 0;
          for (Index k = 0; k < v; ++k) {
            vi += (in(n, c, k) - mi) * (in(n, c, k) - mi);
            vo += (out(n, c, k) - mo) * (out(n, c, k) - mo);
          }
          vi /= static_cast<double>(v);
          vo /= static_cast<double>(v);
          worst_mean = std::max(worst_mean, std::abs(mo));
          if (vi >= 1e-2) {
            worst_std = std::max(worst_std, std::abs(std::sqrt(vo) - 1));
            ++rows;
          }
        }
      }
    }
  }
  rep.line(2, "SPAdaIN statistics", worst_mean < 1e-10 && worst_std < 2e-3 && rows > 0,
           fmt("unit_evals=%ld max|mean|=%.2e max|std-1|=%.2e rows_with_var>=1e-2=%ld", units, worst_mean, worst_std,
               rows));
}

/// Joint permutation of both inputs versus permutation of the identity alone.
struct Equivariance {
  double joint = 0;
  double id_only = 0;
};

Equivariance equivariance(const ModelParams<double>& params, const ModelConfig& cfg, const Tensor3<double>& pose,
                          const Tensor3<double>& id, std::mt19937_64& rng, int trials) {
  Equivariance e;
  const auto base = predict(pose, id, params, cfg);
  for (int t = 0; t < trials; ++t) {
    const auto perm = VertexPermutation::random(id.v(), rng);
    const auto expected = permute_columns(base, perm.indices());
    const auto joint = predict(permute_columns(pose, perm.indices()), permute_columns(id, perm.indices()), params, cfg);
    const auto id_only = predict(pose, permute_columns(id, perm.indices()), params, cfg);
    for (Index k = 0; k < expected.size(); ++k) {
      e.joint = std::max(e.joint, std::abs(joint[k] - expected[k]));
      e.id_only = std::max(e.id_only, std::abs(id_only[k] - expected[k]));
    }
  }
  return e;
}

void identity_equivariance(Report& rep, const ModelParams<float>* trained, const PreparedPair* sample) {
  std::mt19937_64 rng(31);
  ModelConfig cfg;
  std::string detail;
  bool pass = true;

  const auto untrained = init_params<double>(cfg, 31);
  const auto pose = random_tensor({2, 3, 40}, rng, -1, 1);
  const auto id = random_tensor({2, 3, 40}, rng, -1, 1);
  const auto u = equivariance(untrained, cfg, pose, id, rng, 20);
  pass = pass && u.joint < 1e-6;
  detail += fmt("untrained: joint=%.2e id_only=%.2e", u.joint, u.id_only);

  if (trained && sample) {
    const auto t = equivariance(trained->cast<double>(), cfg, sample->pose, sample->id, rng, 20);
    pass = pass && t.joint < 1e-6;
    detail += fmt("; trained: joint=%.2e id_only=%.2e", t.joint, t.id_only);
  }
  rep.line(3, "identity-order equivariance", pass, detail + " (20 permutations; joint = pose and identity permuted together)");
}

void skeleton_oracle(Report& rep) {
  const synth::KinematicBody body;
  std::mt19937_64 rng(41);
  double worst_oracle = 0, min_copy = 1e300;
  int distinct = 0;
  bool ratio_ok = true;
  for (int s = 0; s < 100; ++s) {
    const auto sample = synth::make_pair_sample(body, rng);
    const double oracle = pmd(synth::skeleton_oracle_transfer(sample, body), sample.gt_mesh);
    const double copy = pmd(sample.id_mesh, sample.gt_mesh);
    worst_oracle = std::max(worst_oracle, oracle);
    if (sample.beta_id.angles != sample.beta_pose.angles) {
      ++distinct;
      min_copy = std::min(min_copy, copy);
      if (!(copy > 10 * oracle)) ratio_ok = false;
    }
  }
  rep.line(6, "skeleton oracle", worst_oracle < 1e-12 && ratio_ok,
           fmt("samples=100 max_oracle_pmd=%.2e distinct_pose_pairs=%d min_copy_identity_pmd=%.2e", worst_oracle, distinct,
               min_copy));
}

void loss_identities(Report& rep) {
  std::mt19937_64 rng(81);
  double worst_rec = 0;
  for (int t = 0; t < 50; ++t) {
    const Index v = 3 + static_cast<Index>(rng() % 60);
    const auto a = random_tensor({1, 3, v}, rng, -1, 1);
    const auto b = random_tensor({1, 3, v}, rng, -1, 1);
    Tape<double> tape;
    const double rec = reconstruction_loss(tape.leaf(a, false), tape.leaf(b, false)).value()[0];
    worst_rec = std::max(worst_rec, std::abs(rec - static_cast<double>(v) * pmd(a, b).mean));
  }

  Mesh tri;
  tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, std::sqrt(3.0) / 2, 0)};
  tri.faces = {Face{0, 1, 2}};
  const std::vector<EdgeList> edges{build_edge_list(tri)};
  Tape<double> tape;
  const double edge = edge_length_loss(tape.leaf(to_tensor<double>(tri), false), std::span<const EdgeList>(edges)).value()[0];

  bool bit_consistent = true;
  for (int t = 0; t < 50; ++t) {
    const Index v = 4 + static_cast<Index>(rng() % 30);
    const auto pred = random_tensor({2, 3, v}, rng, -1, 1);
    const auto gt = random_tensor({2, 3, v}, rng, -1, 1);
    EdgeList ring;
    for (Index k = 0; k < v; ++k) {
      ring.from.insert(ring.from.end(), {k, (k + 1) % v});
      ring.to.insert(ring.to.end(), {(k + 1) % v, k});
    }
    const std::vector<EdgeList> shared{ring};
    Tape<double> tp;
    const auto terms = total_loss(tp.leaf(pred, false), tp.leaf(gt, false), std::span<const EdgeList>(shared));
    const double rec = terms.rec.value()[0], ed = terms.edge.value()[0], total = terms.total.value()[0];
    if (!(total == rec + 5e-4 * ed && terms.values.total == total && terms.values.rec == rec && terms.values.edge == ed &&
          combine_losses(rec, ed, 5e-4).total == total)) {
      bit_consistent = false;
    }
  }
  rep.line(8, "loss identities", worst_rec < 1e-9 && edge == 6.0 && bit_consistent,
           fmt("max|rec-V*pmd|=%.2e equilateral_edge=%.17g total_bit_consistent=%s", worst_rec, edge,
               bit_consistent ? "yes" : "no"));
}

void io_round_trips(Report& rep, const fs::path& work) {
  std::mt19937_64 rng(91);
  bool structure = true;
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    auto m = random_mesh(rng, 5 + static_cast<Index>(rng() % 200), 1 + static_cast<Index>(rng() % 300));
    const auto path = work / "roundtrip.obj";
    write_obj(m, path);
    const auto back = read_obj(path);
    if (back.faces != m.faces || back.vertex_count() != m.vertex_count()) {
      structure = false;
      continue;
    }
    for (Index k = 0; k < m.vertex_count(); ++k) worst = std::max(worst, (back.vertices[k] - m.vertices[k]).cwiseAbs().maxCoeff());
  }

  ModelConfig cfg;
  const auto params = init_params<float>(cfg, 92);
  const auto path = work / "roundtrip.npt";
  save_checkpoint(params, cfg, path);
  const auto loaded = load_checkpoint(path, cfg);
  bool bits = encode_checkpoint(loaded.params, cfg) == slurp(path);
  std::vector<const Tensor3<float>*> a, b;
  params.visit(cfg, std::function<void(const std::string&, const Tensor3<float>&)>(
                        [&](const std::string&, const Tensor3<float>& t) { a.push_back(&t); }));
  loaded.params.visit(cfg, std::function<void(const std::string&, const Tensor3<float>&)>(
                               [&](const std::string&, const Tensor3<float>& t) { b.push_back(&t); }));
  bits = bits && a.size() == b.size();
  for (std::size_t k = 0; bits && k < a.size(); ++k) {
    bits = a[k]->shape() == b[k]->shape() &&
           std::memcmp(a[k]->data().data(), b[k]->data().data(), static_cast<std::size_t>(a[k]->size()) * sizeof(float)) == 0;
  }
  rep.line(9, "I/O round-trips", structure && worst < 1e-8 && bits,
           fmt("obj_meshes=50 structure=%s max_coord_err=%.2e checkpoint_bit_identical=%s tensors=%zu",
               structure ? "exact" : "MISMATCH", worst, bits ? "yes" : "no", a.size()));
}

void determinism(Report& rep, const fs::path& work) {
  const std::string cli = NPT_CLI_PATH;
  std::vector<fs::path> dirs{work / "det_a", work / "det_b"};
  bool ran = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& d : dirs) {
    fs::remove_all(d);
    const std::string cmd = "NPT_THREADS=1 \"" + cli + "\" train --data-seed 5 --identities 3 --poses 8 --eval-identities 1" +
                            " --seen-pairs 2 --unseen-pairs 2 --epochs 2 --checkpoint-every 1 --seed 17 --no-timing" +
                            " --out \"" + d.string() + "\" > \"" + (work / "det.log").string() + "\" 2>&1";
    ran = ran && std::system(cmd.c_str()) == 0;
  }
  const double secs = seconds_since(t0);
  bool same = ran;
  std::vector<std::string> files{"metrics.csv", "epoch_0001.npt", "final.npt"};
  for (const auto& f : files) {
    const auto x = slurp(dirs[0] / f), y = slurp(dirs[1] / f);
    same = same && !x.empty() && x == y;
  }
  rep.line(10, "determinism", same,
           fmt("two CLI train runs, seed 17, 2 epochs: metrics.csv, epoch_0001.npt, final.npt %s (%.1f s)",
               same ? "byte-identical" : (ran ? "DIFFER" : "run failed"), secs));
}

// ---------------------------------------------------------------------------

struct Trained {
  AblationTable table;
  TrainResult full;
  double full_seconds = 0;
  std::vector<PreparedPair> eval_set;
};

void desk_learning(Report& rep, const Trained& t) {
  const auto& r = t.full.final_eval;
  const double seen_ratio = r.seen_pmd / r.baseline_seen_pmd;
  const double unseen_ratio = r.unseen_pmd / r.baseline_unseen_pmd;
  const bool pass = seen_ratio < 0.3 && unseen_ratio < 0.8 && t.full_seconds < 20 * 60;
  rep.line(4, "desk-scale learning", pass,
           fmt("seen=%.5f (%.3fx copy-identity %.5f, need <0.3) unseen=%.5f (%.3fx copy-identity %.5f, need <0.8) "
               "train_seconds=%.0f",
               r.seen_pmd, seen_ratio, r.baseline_seen_pmd, r.unseen_pmd, unseen_ratio, r.baseline_unseen_pmd,
               t.full_seconds));
}

void ablation_ordering(Report& rep, const Trained& t) {
  const auto s = [&](const char* n) { return t.table.at(n).seen_pmd; };
  const bool a = s("full") <= 1.15 * s("no_edge");
  const bool b = s("full") < s("no_spadain");
  const bool c = s("full") < s("concat1");
  const bool d = s("full") <= s("maxpool");
  const bool e = s("no_spadain") < s("concat1");
  rep.line(5, "ablation ordering", a && b && c && d && e,
           fmt("seen: full=%.5f no_edge=%.5f no_spadain=%.5f concat1=%.5f maxpool=%.5f | "
               "full<=1.15*no_edge:%s full<no_spadain:%s full<concat1:%s full<=maxpool:%s no_spadain<concat1:%s",
               s("full"), s("no_edge"), s("no_spadain"), s("concat1"), s("maxpool"), a ? "y" : "n", b ? "y" : "n",
               c ? "y" : "n", d ? "y" : "n", e ? "y" : "n"));
}

void robustness(Report& rep, const Trained& t) {
  const ModelConfig cfg = TrainConfig{}.model;
  double clean = 0, noisy = 0, spread = 0, worst_spread = 0;
  int n = 0;
  for (const auto& p : t.eval_set) {
    if (p.split != synth::Split::seen_pose) continue;
    const auto r = robustness_probe(t.full.params, cfg, p, 0.01, 10, 71 + static_cast<std::uint64_t>(n));
    clean += r.clean_pmd;
    noisy += r.noisy_pmd;
    spread += r.shuffle_pmd_spread;
    worst_spread = std::max(worst_spread, r.shuffle_pmd_spread);
    ++n;
  }
  clean /= n;
  noisy /= n;
  spread /= n;
  const double rel = (noisy - clean) / clean;
  rep.line(7, "robustness probe", rel < 0.5 && spread < 0.5 * clean,
           fmt("seen samples=%d clean=%.5f noisy(sigma=0.01)=%.5f increase=%.1f%% (need <50%%) "
               "mean_shuffle_spread=%.5f (need <%.5f) max_shuffle_spread=%.5f",
               n, clean, noisy, 100 * rel, spread, 0.5 * clean, worst_spread));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--strict]\n", argv[0]);
      return 64;
    }
  }
  const auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  ::setenv("NPT_THREADS", "1", 1);

  const fs::path work = fs::temp_directory_path() / "npt_acceptance";
  fs::create_directories(work);
  Report rep;

  if (want(1)) gradients(rep);
  if (want(2)) spadain_statistics(rep);
  if (want(6)) skeleton_oracle(rep);
  if (want(8)) loss_identities(rep);
  if (want(9)) io_round_trips(rep, work);
  if (want(10)) determinism(rep, work);

  std::optional<Trained> trained;
  if (want(4) || want(5) || want(7)) {
    const synth::DatasetSpec spec;
    const synth::KinematicBody body(spec.body);
    const auto ds = synth::make_dataset(spec);
    TrainConfig cfg;
    std::printf("training desk preset: %d identities x %d poses, %d epochs, lr %g, batch %d, widths %s\n",
                spec.train_identities, spec.train_poses, cfg.epochs, cfg.lr, cfg.batch_size,
                widths_string(cfg.model.widths).c_str());
    std::fflush(stdout);
    trained.emplace();
    std::vector<std::string> subset{"full"};
    if (want(5)) subset = ablation_names();
    trained->table = run_ablation_suite(ds, body, cfg, subset, &trained->full,
                                        [](const std::string& name, const EpochMetrics& m) {
                                          std::printf("  %-10s epoch %2d rec=%.4f edge=%.4f total=%.4f %.1fs\n",
                                                      name.c_str(), m.epoch, m.rec, m.edge, m.total, m.seconds);
                                          std::fflush(stdout);
                                        });
    trained->full_seconds = trained->table.at("full").seconds;
    trained->eval_set = prepare_eval_set(ds, body);
    std::printf("%s", trained->table.text().c_str());
    if (want(4)) desk_learning(rep, *trained);
    if (want(5)) ablation_ordering(rep, *trained);
    if (want(7)) robustness(rep, *trained);
  }

  if (want(3)) {
    const PreparedPair* sample = nullptr;
    if (trained) {
      for (const auto& p : trained->eval_set) {
        if (p.split == synth::Split::seen_pose) {
          sample = &p;
          break;
        }
      }
    }
    identity_equivariance(rep, trained ? &trained->full.params : nullptr, sample);
  }

  std::printf("acceptance: %d failing criteria\n", rep.failures);
  return strict ? rep.failures : 0;
}
