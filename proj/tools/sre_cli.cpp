// sre: train, evaluate, traverse and query scale-ranking models on the
// synthetic blob world.
//
// exit codes: 0 ok, 2 usage or config error, 3 numerical divergence,
//             4 corrupt checkpoint, 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sre/sre.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCorrupt = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot open " + path.string() + " for writing");
  return os;
}

sre::Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return sre::load_checkpoint(path);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
  return out;
}

double parse_double(const std::string& flag, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError(flag + ": cannot parse '" + text + "' as a number");
  }
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string init;
  bool quiet = false;
};

sre::TrainConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed,
                                const std::string& init) {
  if (!fs::exists(path)) throw sre::ConfigError("", "config file not found: " + path);
  sre::TrainConfig config = sre::load_run_config(path);
  if (seed) config.seed = *seed;
  if (!init.empty()) config.init = sre::parse_init_mode(init);
  return config;
}

void write_log(const std::vector<sre::LogRow>& rows, const fs::path& path) {
  auto os = open_out(path);
  os << "iter,loss_sre,loss_d,alignment\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt_exact(r.loss_sre) << ',' << fmt_exact(r.loss_d) << ',' << fmt_exact(r.alignment)
       << '\n';
  }
}

int cmd_train(const TrainArgs& args) {
  const sre::TrainConfig config = resolve_config(args.config, args.seed, args.init);
  const fs::path out(args.out);
  fs::create_directories(out);
  const auto result = sre::train(config, [&](const sre::LogRow& row) {
    if (!args.quiet) {
      std::cerr << "iter " << row.iter << "  loss_sre " << fmt(row.loss_sre) << "  loss_d " << fmt(row.loss_d)
                << "  alignment " << fmt(row.alignment) << '\n';
    }
  });
  sre::save_checkpoint(result.initial, (out / "initial_checkpoint.srev1").string());
  sre::save_checkpoint(result.final, (out / "checkpoint.srev1").string());
  write_log(result.log, out / "train_log.csv");
  std::cout << "wrote " << (out / "checkpoint.srev1").string() << " (alignment "
            << fmt(result.alignment.empty() ? 0.0 : result.alignment.back()) << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string metrics = "mig,factorvae,dci,betavae,rescoring";
  std::size_t samples = 5000;
  std::string out = "metrics.csv";
  std::optional<std::uint64_t> seed;
};

const std::vector<std::string> kMetricNames = {"mig", "factorvae", "dci", "betavae", "rescoring"};

int cmd_eval(const EvalArgs& args) {
  const auto names = split(args.metrics, ',');
  if (names.empty()) throw UsageError("--metrics: no metric requested");
  for (const auto& n : names) {
    if (std::find(kMetricNames.begin(), kMetricNames.end(), n) == kMetricNames.end()) {
      throw UsageError("--metrics: unknown metric '" + n + "' (known: mig, factorvae, dci, betavae, rescoring)");
    }
  }
  if (args.samples < 1000) throw UsageError("--samples: need at least 1000 samples");

  const sre::Checkpoint ckpt = read_checkpoint(args.checkpoint);
  const sre::MixingMap world = ckpt.world();
  const std::uint64_t seed = args.seed.value_or(ckpt.seed);
  sre::MetricSettings settings;
  settings.seed = seed;
  const sre::Encoder encoder = sre::network_encoder(world, ckpt.sre);

  std::optional<sre::EvalDataset> dataset;
  auto data = [&]() -> const sre::EvalDataset& {
    if (!dataset) dataset = sre::build_eval_dataset(world, encoder, args.samples, seed);
    return *dataset;
  };

  const fs::path out(args.out);
  auto os = open_out(out);
  os << "metric,value,seed,config_hash\n";
  const double shift = 3.0;
  const std::size_t rescoring_samples = 2000;
  for (const auto& name : names) {
    double value = 0.0;
    if (name == "mig") value = sre::mig(data(), settings);
    else if (name == "factorvae") value = sre::factor_vae_score(data(), world, encoder, settings);
    else if (name == "dci") value = sre::dci_disentanglement(data(), settings);
    else if (name == "betavae") value = sre::beta_vae_score(data(), world, encoder, settings);
    else {
      const auto r = sre::rescoring_matrix(world, ckpt.direction_matrix, shift, rescoring_samples, seed);
      const auto matches = sre::greedy_match(ckpt.direction_matrix, sre::ground_truth_directions(world));
      value = sre::diagonal_ratio(r, matches);
      fs::path matrix_path = out;
      matrix_path.replace_filename(out.stem().string() + "_rescoring.csv");
      auto ms = open_out(matrix_path);
      ms << "direction,center_x,center_y,radius,brightness\n";
      for (std::size_t i = 0; i < r.rows; ++i) {
        ms << i;
        for (std::size_t j = 0; j < r.cols; ++j) ms << ',' << fmt_exact(r.at(i, j));
        ms << '\n';
      }
    }
    os << name << ',' << fmt_exact(value) << ',' << seed << ',' << ckpt.config_hash << '\n';
    std::cout << name << ' ' << fmt(value) << '\n';
  }

  nlohmann::ordered_json meta;
  meta["config_hash"] = ckpt.config_hash;
  meta["samples"] = args.samples;
  meta["seed"] = seed;
  meta["bins"] = settings.bins;
  meta["binning"] = "equal-width over observed range";
  meta["votes"] = settings.votes;
  meta["probe"] = settings.probe;
  meta["logistic_epochs"] = settings.logistic_epochs;
  meta["logistic_learning_rate"] = settings.logistic_learning_rate;
  meta["rescoring_shift"] = shift;
  meta["rescoring_samples"] = rescoring_samples;
  auto js = open_out(out.string() + ".meta.json");
  js << meta.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// traverse

struct TraverseArgs {
  std::string checkpoint;
  std::size_t direction = 0;
  std::string range = "-10:10";
  std::size_t steps = 7;
  std::string out = "traversal.pgm";
  std::uint64_t seed = 0;
};

int cmd_traverse(const TraverseArgs& args) {
  const auto parts = split(args.range, ':');
  if (parts.size() != 2) throw UsageError("--range: expected lo:hi, got '" + args.range + "'");
  const double lo = parse_double("--range", parts[0]), hi = parse_double("--range", parts[1]);
  if (!(lo < hi)) throw UsageError("--range: lo must be below hi, got " + args.range);
  if (args.steps < 2) throw UsageError("--steps: need at least 2 panels");

  const sre::Checkpoint ckpt = read_checkpoint(args.checkpoint);
  if (args.direction >= ckpt.directions) {
    throw UsageError("--direction: index " + std::to_string(args.direction) + " out of range for " +
                     std::to_string(ckpt.directions) + " directions");
  }
  const sre::MixingMap world = ckpt.world();
  sre::Rng rng(sre::derive_seed(args.seed, "traverse"));
  const std::vector<double> z = rng.normals(world.latent_dim());
  const auto column = ckpt.direction_matrix.column(args.direction);

  std::vector<sre::GrayImage> panels;
  for (std::size_t s = 0; s < args.steps; ++s) {
    const double t = lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(args.steps - 1);
    std::vector<double> moved(z);
    for (std::size_t r = 0; r < moved.size(); ++r) moved[r] += t * column[r];
    panels.push_back(sre::gray_image(sre::generate_image(moved, world), ckpt.height, ckpt.width));
  }
  const fs::path out(args.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  sre::write_pgm(sre::hstack(panels), out.string());
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// retrieve

struct RetrieveArgs {
  std::string checkpoint;
  std::size_t attribute = 0;
  std::size_t k = 5;
  std::size_t pool = 200;
  std::uint64_t seed = 0;
  std::string csv = "retrieval.csv";
  std::string strip = "retrieval.pgm";
};

int cmd_retrieve(const RetrieveArgs& args) {
  if (args.pool == 0) throw UsageError("--pool: must be at least 1");
  if (args.k > args.pool) {
    throw UsageError("--k: " + std::to_string(args.k) + " exceeds pool size " + std::to_string(args.pool));
  }
  const sre::Checkpoint ckpt = read_checkpoint(args.checkpoint);
  if (args.attribute >= ckpt.directions) {
    throw UsageError("--attribute: index " + std::to_string(args.attribute) + " out of range for " +
                     std::to_string(ckpt.directions) + " directions");
  }
  const sre::MixingMap world = ckpt.world();
  const std::size_t dim = world.latent_dim();
  sre::Rng rng(sre::derive_seed(args.seed, "retrieve"));
  const sre::Tensor pool_latents = sre::Tensor::matrix(args.pool, dim, rng.normals(args.pool * dim));
  const std::vector<double> query_latent = rng.normals(dim);

  sre::Tensor pool_images, query_image;
  {
    sre::NoGradGuard no_grad;
    pool_images = sre::generate(pool_latents, world);
    query_image = sre::generate_image(query_latent, world);
  }
  const sre::EncodedPool pool = sre::encode_pool(pool_images, ckpt.sre);
  const auto hits = sre::retrieve(query_image, args.attribute, args.k, pool, ckpt.sre);

  auto os = open_out(args.csv);
  os << "rank,id,distance\n";
  for (const auto& h : hits) os << h.rank << ',' << h.id << ',' << fmt_exact(h.distance) << '\n';

  const std::size_t pixels = world.pixels();
  std::vector<sre::GrayImage> panels{sre::gray_image(query_image, ckpt.height, ckpt.width)};
  for (const auto& h : hits) {
    const auto row = pool_images.data().subspan(h.id * pixels, pixels);
    panels.push_back({ckpt.width, ckpt.height, std::vector<double>(row.begin(), row.end())});
  }
  const fs::path strip(args.strip);
  if (strip.has_parent_path()) fs::create_directories(strip.parent_path());
  sre::write_pgm(sre::hstack(panels), strip.string());
  std::cout << "wrote " << args.csv << " and " << args.strip << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// ablate-epsilon

struct AblateArgs {
  std::string config;
  std::string ranges = "1,3,10";
  std::size_t seeds = 3;
  std::size_t samples = 5000;
  std::string out = "ablation.csv";
  std::size_t threads = 0;
};

int cmd_ablate(const AblateArgs& args) {
  const sre::TrainConfig base = resolve_config(args.config, std::nullopt, "");
  std::vector<double> ranges;
  for (const auto& r : split(args.ranges, ',')) {
    const double e = parse_double("--ranges", r);
    if (!(e > 0)) throw UsageError("--ranges: every range must be positive");
    ranges.push_back(e);
  }
  if (ranges.empty()) throw UsageError("--ranges: no ranges given");
  if (args.seeds < 1) throw UsageError("--seeds: need at least one seed");

  struct Cell {
    double e;
    std::uint64_t seed;
    double mig = 0.0;
  };
  std::vector<Cell> cells;
  for (double e : ranges)
    for (std::size_t s = 0; s < args.seeds; ++s) cells.push_back({e, base.seed + s});

  std::size_t next = 0;
  std::mutex lock;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t idx;
      {
        std::lock_guard guard(lock);
        if (next >= cells.size() || failure) return;
        idx = next++;
      }
      try {
        sre::TrainConfig config = base;
        config.e = cells[idx].e;
        config.seed = cells[idx].seed;
        const auto result = sre::train(config);
        const sre::MixingMap world = result.final.world();
        sre::MetricSettings settings;
        settings.seed = config.seed;
        const auto ds =
            sre::build_eval_dataset(world, sre::network_encoder(world, result.final.sre), args.samples, config.seed);
        cells[idx].mig = sre::mig(ds, settings);
        std::lock_guard guard(lock);
        std::cerr << "e=" << fmt(cells[idx].e) << " seed=" << cells[idx].seed << " mig=" << fmt(cells[idx].mig) << '\n';
      } catch (...) {
        std::lock_guard guard(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t n_threads = std::min(cells.size(), args.threads ? args.threads : hw);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::stable_sort(cells.begin(), cells.end(),
                   [](const Cell& a, const Cell& b) { return a.e < b.e || (a.e == b.e && a.seed < b.seed); });
  auto os = open_out(args.out);
  os << "e,seed,mig\n";
  for (const auto& c : cells) os << fmt(c.e) << ',' << c.seed << ',' << fmt_exact(c.mig) << '\n';
  std::map<double, std::pair<double, std::size_t>> means;
  for (const auto& c : cells) {
    means[c.e].first += c.mig;
    ++means[c.e].second;
  }
  for (const auto& [e, acc] : means) {
    const double mean = acc.first / static_cast<double>(acc.second);
    os << fmt(e) << ",mean," << fmt_exact(mean) << '\n';
    std::cout << "e=" << fmt(e) << " mean mig " << fmt(mean) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale ranking estimator on a synthetic blob world"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train directions and network from a config file");
  train_cmd->add_option("--config", train.config, "key = value config file")->required();
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--seed", train.seed, "override the config seed");
  train_cmd->add_option("--init", train.init, "random or sefa")->check(CLI::IsMember({"random", "sefa"}));
  train_cmd->add_flag("--quiet", train.quiet, "no progress on stderr");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "disentanglement metrics for a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--metrics", eval.metrics, "comma-separated: mig,factorvae,dci,betavae,rescoring");
  eval_cmd->add_option("--samples", eval.samples, "evaluation dataset size");
  eval_cmd->add_option("--out", eval.out, "metrics CSV path");
  eval_cmd->add_option("--seed", eval.seed, "metric sampling seed (default: checkpoint seed)");

  TraverseArgs trav;
  auto* trav_cmd = app.add_subcommand("traverse", "render a latent traversal strip");
  trav_cmd->add_option("--checkpoint", trav.checkpoint)->required();
  trav_cmd->add_option("--direction", trav.direction)->required();
  trav_cmd->add_option("--range", trav.range, "lo:hi");
  trav_cmd->add_option("--steps", trav.steps);
  trav_cmd->add_option("--out", trav.out, "output P5 pixmap");
  trav_cmd->add_option("--seed", trav.seed, "seed of the base latent");

  RetrieveArgs ret;
  auto* ret_cmd = app.add_subcommand("retrieve", "attribute-based retrieval from a sampled pool");
  ret_cmd->add_option("--checkpoint", ret.checkpoint)->required();
  ret_cmd->add_option("--attribute", ret.attribute)->required();
  ret_cmd->add_option("--k", ret.k);
  ret_cmd->add_option("--pool", ret.pool);
  ret_cmd->add_option("--seed", ret.seed);
  ret_cmd->add_option("--csv", ret.csv, "ranked CSV path");
  ret_cmd->add_option("--strip", ret.strip, "query + top-K P5 pixmap path");

  AblateArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate-epsilon", "MIG across sampling ranges and seeds");
  abl_cmd->add_option("--config", abl.config)->required();
  abl_cmd->add_option("--ranges", abl.ranges, "comma-separated e values");
  abl_cmd->add_option("--seeds", abl.seeds, "seeds per range, counting up from the config seed");
  abl_cmd->add_option("--samples", abl.samples, "evaluation dataset size");
  abl_cmd->add_option("--out", abl.out, "summary CSV path");
  abl_cmd->add_option("--threads", abl.threads, "worker threads (default: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*trav_cmd) return cmd_traverse(trav);
    if (*ret_cmd) return cmd_retrieve(ret);
    if (*abl_cmd) return cmd_ablate(abl);
  } catch (const sre::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const sre::CorruptCheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const sre::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
