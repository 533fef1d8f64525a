// Command-line front end: data generation, training, evaluation, gradient
// checks, model inspection and mapper benchmarks.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "l2g/config.hpp"
#include "l2g/data.hpp"
#include "l2g/experiments.hpp"
#include "l2g/mapper.hpp"
#include "l2g/metrics.hpp"
#include "l2g/model.hpp"
#include "l2g/train.hpp"

namespace fs = std::filesystem;
using namespace l2g;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

// Usage, configuration and data problems.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, mode);
  if (!out) throw UsageError("cannot write " + path.string());
  return out;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path.string());
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  std::size_t classes = 3, count = 200, hw = 32;
  std::uint64_t seed = 0;
  double difficulty = 1.0;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  SegDataset ds;
  try {
    ds = gen_synthetic(a.classes, a.count, a.hw, a.hw, a.seed, a.difficulty, fs::path(a.out).stem().string());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  {
    std::ofstream probe = open_output(a.out, std::ios::binary | std::ios::trunc);
  }
  save_dataset(ds, a.out);
  std::vector<std::size_t> pixels(ds.classes, 0);
  for (const SegSample& s : ds.samples)
    for (std::uint8_t l : s.labels) ++pixels[l];
  const double total = double(ds.size() * ds.height * ds.width);
  std::cout << "wrote " << a.out << "\n"
            << "  samples " << ds.size() << ", " << ds.channels << "x" << ds.height << "x" << ds.width << ", "
            << ds.classes << " classes, seed " << ds.seed << ", difficulty " << a.difficulty << "\n";
  for (std::size_t c = 0; c < ds.classes; ++c)
    std::cout << "  class " << c << " pixel fraction " << fmt(double(pixels[c]) / total) << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string resume;
  int threads = -1;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = load_run_config(a.config);
  require_file(rc.train_data, "train_data");
  if (!rc.val_data.empty()) require_file(rc.val_data, "val_data");
  if (!a.resume.empty()) require_file(a.resume, "checkpoint");
  fs::create_directories(rc.output_dir);

  const SegDataset train_set = load_dataset(rc.train_data);
  SegDataset val_set;
  if (!rc.val_data.empty()) val_set = load_dataset(rc.val_data);

  TrainOptions to = rc.train_options();
  if (a.threads >= 0) to.threads = static_cast<std::size_t>(a.threads);

  Rng rng(rc.seed);
  std::optional<SegModel> model;
  std::optional<Optimizer> opt;
  int start_epoch = 0;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    if (model_config_to_json(ck.config) != model_config_to_json(rc.model)) {
      throw UsageError("model settings in " + a.config + " differ from checkpoint " + a.resume);
    }
    model.emplace(restore_model(ck));
    opt.emplace(restore_optimizer(ck, *model));
    rng.set_state(ck.rng_state);
    start_epoch = ck.epoch;
  } else {
    model.emplace(rc.model, rng);
    opt.emplace(rc.optimizer, model->parameters());
  }

  const fs::path log_path = rc.output_dir / "train_log.csv";
  const fs::path ckpt_path = rc.output_dir / "checkpoint.l2gc";
  const bool append = start_epoch > 0 && fs::exists(log_path);
  std::ofstream log = open_output(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) write_log_header(log);
  {
    std::ofstream cfg = open_output(rc.output_dir / "config.json");
    cfg << run_config_to_json(rc) << "\n";
  }

  to.on_epoch = [&](const EpochLog& row) {
    write_log_row(log, row);
    log.flush();
    save_checkpoint(ckpt_path, *model, *opt, rng, row.epoch);
    std::cout << "epoch " << row.epoch << "  loss " << fmt(row.train_loss) << "  val DSC "
              << fmt(row.val_dsc) << "  val HD " << fmt(row.val_hd, 3) << "  (" << fmt(row.wall_seconds, 2)
              << " s)" << std::endl;
  };
  const std::vector<EpochLog> logs =
      train(*model, *opt, train_set, val_set.size() ? &val_set : nullptr, to, rng, start_epoch);
  if (logs.empty()) save_checkpoint(ckpt_path, *model, *opt, rng, start_epoch);
  if (!logs.empty()) {
    std::cout << "final val DSC " << fmt(logs.back().val_dsc) << " HD " << fmt(logs.back().val_hd, 3) << "\n";
  }
  std::cout << "checkpoint " << ckpt_path.string() << "\nlog " << log_path.string() << "\n";
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, out;
  double percentile = 95.0;
  int threads = 0;
};

SegModel load_model_for(const std::string& ckpt_path, const SegDataset& ds) {
  SegModel model = restore_model(load_checkpoint(ckpt_path));
  const ModelConfig& c = model.config();
  if (ds.height != c.height || ds.width != c.width || ds.channels != c.channels || ds.classes != c.classes) {
    throw UsageError("data " + std::to_string(ds.channels) + "x" + std::to_string(ds.height) + "x" +
                     std::to_string(ds.width) + " with " + std::to_string(ds.classes) +
                     " classes does not match model " + std::to_string(c.channels) + "x" +
                     std::to_string(c.height) + "x" + std::to_string(c.width) + " with " +
                     std::to_string(c.classes) + " classes");
  }
  return model;
}

int cmd_eval(const EvalArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(a.data, "data");
  if (!(a.percentile > 0.0 && a.percentile <= 100.0)) throw UsageError("--percentile must be in (0, 100]");
  const SegDataset ds = load_dataset(a.data);
  SegModel model = load_model_for(a.ckpt, ds);
  const MetricReport r = evaluate_model(model, ds, a.percentile, static_cast<std::size_t>(a.threads));
  if (!a.out.empty()) {
    std::ofstream out = open_output(a.out);
    r.write_csv(out);
  }
  r.write_table(std::cout);
  return kExitOk;
}

// gradcheck -----------------------------------------------------------------

struct GradArgs {
  std::string scale = "tiny";
  std::vector<std::uint64_t> seeds = {0};
  bool inject_fault = false;
};

int cmd_gradcheck(const GradArgs& a) {
  const GradCheckScale scale = a.scale == "small" ? GradCheckScale::kSmall : GradCheckScale::kTiny;
  bool all = true;
  std::cout << std::left << std::setw(8) << "seed" << std::setw(12) << "group" << std::setw(28) << "parameter"
            << std::setw(8) << "probes" << std::setw(14) << "max_rel_err" << "result\n";
  for (std::uint64_t seed : a.seeds) {
    for (const GradCheckGroup& grp : run_gradcheck_suite(scale, seed, a.inject_fault)) {
      for (const GradCheckEntry& e : grp.report.entries) {
        std::ostringstream err;
        err << std::scientific << std::setprecision(2) << e.max_rel_error;
        std::cout << std::setw(8) << seed << std::setw(12) << grp.group << std::setw(28) << e.name << std::setw(8)
                  << e.probes << std::setw(14) << err.str() << (e.passed ? "pass" : "FAIL") << "\n";
      }
      all = all && grp.report.passed();
    }
  }
  std::cout << (all ? "all groups pass" : "gradient check FAILED") << "\n";
  return all ? kExitOk : kExitCheckFailed;
}

// inspect -------------------------------------------------------------------

struct InspectArgs {
  std::string ckpt, data, out;
  std::size_t sample = 0;
};

void write_matrix(const fs::path& path, const Tensor& m) {
  std::ofstream out = open_output(path);
  out << std::setprecision(17);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out << m(i, j) << (j + 1 < m.cols() ? ',' : '\n');
}

int cmd_inspect(const InspectArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(a.data, "data");
  const SegDataset ds = load_dataset(a.data);
  if (a.sample >= ds.size()) {
    throw UsageError("sample " + std::to_string(a.sample) + " out of range (dataset has " +
                     std::to_string(ds.size()) + ")");
  }
  SegModel model = load_model_for(a.ckpt, ds);
  const ModelConfig& c = model.config();
  Graph g;
  const ForwardResult r = model.forward(g, ds.samples[a.sample].image);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (std::size_t k = 0; k < r.plans.size(); ++k) write_matrix(dir / ("plan_ref" + std::to_string(k) + ".csv"), r.plans[k].value());
  write_matrix(dir / "position_weights.csv", position_weights(c.tokens(), c.bins, c.sigma_pos));
  {
    std::ofstream out = open_output(dir / "code_usage.csv");
    out << "code,count\n";
    for (std::size_t k = 0; k < r.diagnostics.code_usage.size(); ++k) out << k << ',' << r.diagnostics.code_usage[k] << '\n';
  }
  {
    const auto labels = predict_labels(r.logits.value());
    std::ofstream out = open_output(dir / "prediction.csv");
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t x = 0; x < c.width; ++x) out << int(labels[y * c.width + x]) << (x + 1 < c.width ? ',' : '\n');
  }
  std::cout << "wrote " << r.plans.size() << " transport plans, position weights, code usage and prediction to "
            << dir.string() << "\n";
  for (std::size_t k = 0; k < r.plans.size(); ++k)
    std::cout << "  reference " << k << " marginal residual " << r.diagnostics.transport_residuals[k] << "\n";
  return kExitOk;
}

// bench ---------------------------------------------------------------------

struct BenchArgs {
  BenchOptions options;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  for (std::size_t n : a.options.sizes)
    if (n == 0) throw UsageError("--sizes must be positive");
  for (std::size_t t : a.options.bins)
    if (t == 0) throw UsageError("--bins must be positive");
  const std::vector<BenchRow> rows = bench_mapper(a.options);
  if (!a.out.empty()) {
    std::ofstream out = open_output(a.out);
    write_bench_csv(out, rows);
  }
  write_bench_csv(std::cout, rows);
  if (a.options.sizes.size() >= 2) {
    for (std::size_t t : a.options.bins)
      for (double eps : a.options.epsilons)
        for (int it : a.options.iterations) {
          std::vector<double> x, y;
          for (const BenchRow& r : rows)
            if (r.t == t && r.epsilon == eps && r.iterations == it) {
              x.push_back(double(r.n));
              y.push_back(std::max(r.seconds, 1e-9));
            }
          std::cout << "t=" << t << " eps=" << eps << " iters=" << it << " log-log slope in n: "
                    << fmt(loglog_slope(x, y), 3) << "\n";
        }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"l2g: local-to-global segmentation bottleneck toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic segmentation dataset");
  g->add_option("--classes", gen.classes, "Number of classes including background")->capture_default_str();
  g->add_option("--count", gen.count, "Number of samples")->capture_default_str();
  g->add_option("--hw", gen.hw, "Image height and width")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--difficulty", gen.difficulty, "Noise scale")->capture_default_str();
  g->add_option("--out", gen.out, "Output .l2gs file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a run config");
  t->add_option("--config", tr.config, "Run config JSON")->required();
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--threads", tr.threads, "Worker threads (overrides config and L2G_THREADS)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--percentile", ev.percentile, "Hausdorff percentile")->capture_default_str();
  e->add_option("--out", ev.out, "Per-sample metrics CSV");
  e->add_option("--threads", ev.threads, "Worker threads (0 reads L2G_THREADS)");

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--scale", gr.scale)->check(CLI::IsMember({"tiny", "small"}))->capture_default_str();
  gc->add_option("--seed", gr.seeds, "One or more seeds")->expected(1, -1);
  gc->add_flag("--inject-fault", gr.inject_fault, "Add a loss term hidden from the analytic pass");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Dump transport plans, usage and prediction for one sample");
  i->add_option("--ckpt", in.ckpt)->required();
  i->add_option("--data", in.data)->required();
  i->add_option("--sample", in.sample)->capture_default_str();
  i->add_option("--out", in.out)->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Time alignment and pooling against the number of codes");
  b->add_option("--sizes", be.options.sizes)->delimiter(',')->capture_default_str();
  b->add_option("--bins", be.options.bins)->delimiter(',')->capture_default_str();
  b->add_option("--eps", be.options.epsilons)->delimiter(',')->capture_default_str();
  b->add_option("--iters", be.options.iterations)->delimiter(',')->capture_default_str();
  b->add_option("--anchors", be.options.anchors)->capture_default_str();
  b->add_option("--repeats", be.options.repeats)->capture_default_str();
  b->add_option("--seed", be.options.seed)->capture_default_str();
  b->add_option("--out", be.out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*gc) return cmd_gradcheck(gr);
    if (*i) return cmd_inspect(in);
    if (*b) return cmd_bench(be);
  } catch (const DivergenceError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitDiverged;
  } catch (const NumericalError& err) {
    std::cerr << "error: numerical failure: " << err.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
