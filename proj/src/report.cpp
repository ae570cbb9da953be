#include "rlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rlab {

namespace fs = std::filesystem;

CurveBundle aggregate_curves(const std::vector<ScoreSeries>& series) {
  std::vector<const ScoreSeries*> live;
  for (const auto& s : series)
    if (!s.points.empty()) live.push_back(&s);
  if (live.empty()) throw ContractViolation("aggregate_curves: no non-empty series");

  std::vector<long> grid;
  for (const auto* s : live)
    for (const auto& [step, score] : s->points) grid.push_back(step);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  CurveBundle b;
  b.steps = grid;
  for (const auto* s : live) {
    b.labels.push_back(s->label);
    std::vector<real> vals;
    vals.reserve(grid.size());
    size_t i = 0;
    real cur = s->points.front().second;
    for (long step : grid) {
      while (i < s->points.size() && s->points[i].first <= step)
        cur = s->points[i++].second;
      vals.push_back(cur);
    }
    b.per_series.push_back(std::move(vals));
  }
  for (size_t g = 0; g < grid.size(); ++g) {
    real lo = b.per_series[0][g], hi = lo, sum = 0.0;
    for (const auto& s : b.per_series) {
      lo = std::min(lo, s[g]);
      hi = std::max(hi, s[g]);
      sum += s[g];
    }
    b.min_env.push_back(lo);
    b.max_env.push_back(hi);
    b.mean_env.push_back(sum / static_cast<real>(b.per_series.size()));
  }
  return b;
}

std::string curve_bundle_csv(const CurveBundle& b) {
  std::ostringstream os;
  os << "step";
  for (const auto& l : b.labels) os << ',' << l;
  os << ",min,mean,max\n";
  for (size_t g = 0; g < b.steps.size(); ++g) {
    os << b.steps[g];
    for (const auto& s : b.per_series) os << ',' << s[g];
    os << ',' << b.min_env[g] << ',' << b.mean_env[g] << ',' << b.max_env[g] << '\n';
  }
  return os.str();
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

CurveBundle parse_curve_bundle_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line))
    throw ContractViolation("curve bundle: empty input");
  auto header = split_csv_line(line);
  if (header.size() < 5 || header.front() != "step" ||
      header[header.size() - 3] != "min" || header.back() != "max")
    throw ContractViolation("curve bundle: unexpected header");
  CurveBundle b;
  size_t n_series = header.size() - 4;
  b.labels.assign(header.begin() + 1, header.begin() + 1 + n_series);
  b.per_series.resize(n_series);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw ContractViolation("curve bundle: ragged row");
    b.steps.push_back(std::stol(f[0]));
    for (size_t i = 0; i < n_series; ++i)
      b.per_series[i].push_back(std::stod(f[1 + i]));
    b.min_env.push_back(std::stod(f[1 + n_series]));
    b.mean_env.push_back(std::stod(f[2 + n_series]));
    b.max_env.push_back(std::stod(f[3 + n_series]));
  }
  return b;
}

ScoreSeries parse_eval_csv(const std::string& text, const std::string& label) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ContractViolation("eval csv: empty input");
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "global_step" || header[1] != "mean_return")
    throw ContractViolation("eval csv: unexpected header");
  ScoreSeries s;
  s.label = label;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    s.points.emplace_back(std::stol(f[0]), std::stod(f[1]));
  }
  return s;
}

namespace {
ModeSummary summarize(const CurveBundle& b, const std::string& label,
                      real threshold, real final_window_frac) {
  ModeSummary m;
  m.label = label;
  long budget = b.steps.empty() ? 0 : b.steps.back();
  std::vector<long> crossings;
  size_t crossed = 0;
  for (const auto& s : b.per_series) {
    long cross = -1;
    for (size_t g = 0; g < b.steps.size(); ++g)
      if (s[g] >= threshold) {
        cross = b.steps[g];
        break;
      }
    if (cross < 0)
      cross = budget;  // censored seed: counted at the budget
    else
      ++crossed;
    crossings.push_back(cross);
  }
  std::sort(crossings.begin(), crossings.end());
  m.median_steps_to_threshold = crossings[crossings.size() / 2];
  // the median is censored when the middle order statistic falls among the
  // seeds that never crossed
  m.censored = crossed <= crossings.size() / 2;

  size_t win = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(final_window_frac *
                                       static_cast<real>(b.steps.size()))));
  size_t begin = b.steps.size() - win;
  std::vector<real> finals;
  for (const auto& s : b.per_series) {
    real acc = 0.0;
    for (size_t g = begin; g < b.steps.size(); ++g) acc += s[g];
    finals.push_back(acc / static_cast<real>(win));
  }
  auto [lo, hi] = std::minmax_element(finals.begin(), finals.end());
  real sum = 0.0;
  for (real v : finals) sum += v;
  m.final_mean = sum / static_cast<real>(finals.size());
  m.final_spread = *hi - *lo;
  return m;
}
}  // namespace

CompareReport compare_report(const CurveBundle& a, const CurveBundle& b,
                             real threshold, real final_window_frac) {
  CompareReport r;
  r.a = summarize(a, "a", threshold, final_window_frac);
  r.b = summarize(b, "b", threshold, final_window_frac);
  if (!r.a.censored && !r.b.censored && r.a.median_steps_to_threshold > 0)
    r.speedup_ratio = static_cast<real>(r.b.median_steps_to_threshold) /
                      static_cast<real>(r.a.median_steps_to_threshold);
  return r;
}

std::string compare_report_csv(const CompareReport& r, real threshold) {
  std::ostringstream os;
  os << "bundle,threshold,median_steps_to_threshold,censored,final_mean,"
        "final_spread\n";
  for (const ModeSummary* m : {&r.a, &r.b})
    os << m->label << ',' << threshold << ',' << m->median_steps_to_threshold
       << ',' << (m->censored ? 1 : 0) << ',' << m->final_mean << ','
       << m->final_spread << '\n';
  os << "speedup_ratio,,"
     << (r.speedup_ratio ? std::to_string(*r.speedup_ratio)
                         : std::string("undefined"))
     << ",,,\n";
  return os.str();
}

// --- feature maps ----------------------------------------------------------

FeatureMapExport export_feature_map(AbnNet& net, const Tensor& obs,
                                    MapKind which) {
  const auto& s = obs.shape();
  if (obs.ndim() != 3)
    throw ContractViolation("export_feature_map: obs must be [frames,h,w]");
  Tensor batch = reshape(obs.detached(), {1, s[0], s[1], s[2]});
  NetworkOutputs out = net.forward(batch, net.zero_state(), BnMode::kEval);
  Tensor map = which == MapKind::kValue ? out.value_map : out.variance_map;
  if (!map.defined())
    throw ContractViolation("export_feature_map: variance branch disabled");

  FeatureMapExport e;
  e.height = map.dim(2);
  e.width = map.dim(3);
  e.raw = map.data();
  auto [lo_it, hi_it] = std::minmax_element(e.raw.begin(), e.raw.end());
  real lo = *lo_it, hi = *hi_it;
  e.image.resize(e.raw.size());
  for (size_t i = 0; i < e.raw.size(); ++i) {
    // constant map -> mid-gray; otherwise min-max to [0,255]
    e.image[i] = hi > lo
                     ? static_cast<unsigned char>(std::lround(
                           255.0 * (e.raw[i] - lo) / (hi - lo)))
                     : static_cast<unsigned char>(128);
  }
  return e;
}

std::string feature_map_csv(const FeatureMapExport& e) {
  std::ostringstream os;
  os.precision(17);
  for (int r = 0; r < e.height; ++r) {
    for (int c = 0; c < e.width; ++c) {
      if (c) os << ',';
      os << e.raw[static_cast<size_t>(r) * e.width + c];
    }
    os << '\n';
  }
  return os.str();
}

std::string feature_map_pgm(const FeatureMapExport& e) {
  std::ostringstream os;
  os << "P5\n" << e.width << ' ' << e.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(e.image.data()),
           static_cast<std::streamsize>(e.image.size()));
  return os.str();
}

std::string feature_map_overlay_pgm(const FeatureMapExport& e, const Tensor& obs) {
  const auto& s = obs.shape();
  int h = s[1], w = s[2];
  const size_t frame = static_cast<size_t>(h) * w;
  const real* newest = &obs.data()[obs.numel() - frame];
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int mr = std::min(e.height - 1, r * e.height / h);
      int mc = std::min(e.width - 1, c * e.width / w);
      real base = 255.0 * std::clamp(newest[static_cast<size_t>(r) * w + c], 0.0, 1.0);
      real overlay = e.image[static_cast<size_t>(mr) * e.width + mc];
      unsigned char px = static_cast<unsigned char>(
          std::lround(0.5 * base + 0.5 * overlay));
      os.put(static_cast<char>(px));
    }
  return os.str();
}

// --- experiment driver ------------------------------------------------------

namespace {

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw std::runtime_error("write failed for " + p.string());
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResult res;
  fs::path out(cfg.out_dir);
  fs::create_directories(out);

  std::vector<RunMode> cells = cfg.mode == RunMode::kBoth
                                   ? std::vector<RunMode>{RunMode::kVariance,
                                                          RunMode::kBaseline}
                                   : std::vector<RunMode>{cfg.mode};
  uint64_t hash = cfg.hash();

  auto add = [&](const std::string& rel, const std::string& content) {
    write_file(out / rel, content);
    res.artifacts.push_back(rel);
  };

  for (RunMode cell : cells) {
    NetworkConfig ncfg = cfg.resolved_network(cell);
    LossWeights weights = cfg.resolved_loss(cell);
    for (uint64_t seed : cfg.seeds) {
      TrainerConfig tcfg = cfg.trainer;
      tcfg.seed = seed;
      MetricsSink sink;
      EnvFactory worker_env = [&cfg](int) { return cfg.build_env(true); };
      EnvFactory eval_env = [&cfg](int) { return cfg.build_env(false); };
      TrainResult tr =
          train(ncfg, tcfg, weights, worker_env, eval_env, sink, cfg.optimizer);

      std::string stem =
          run_mode_name(cell) + "_seed" + std::to_string(seed);
      add(stem + "_metrics.csv", sink.metrics_csv());
      add(stem + "_eval.csv", sink.eval_csv());

      save_checkpoint((out / (stem + ".ckpt")).string(), *tr.model, hash);
      res.artifacts.push_back(stem + ".ckpt");

      // end-of-run feature-map dumps from a fixed probe observation
      auto probe_env = cfg.build_env(false);
      probe_env->seed(12345);
      Tensor probe = probe_env->reset();
      auto vmap = export_feature_map(*tr.model, probe, MapKind::kValue);
      add(stem + "_map_value.pgm", feature_map_pgm(vmap));
      add(stem + "_map_value.csv", feature_map_csv(vmap));
      if (ncfg.variance_branch_enabled) {
        auto smap = export_feature_map(*tr.model, probe, MapKind::kVariance);
        add(stem + "_map_variance.pgm", feature_map_pgm(smap));
        add(stem + "_map_variance.csv", feature_map_csv(smap));
      }
    }
  }

  nlohmann::json manifest;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(hash));
  manifest["config_hash"] = std::string(hex);
  manifest["config"] = nlohmann::json::parse(cfg.canonical_json());
  manifest["artifacts"] = res.artifacts;
  res.manifest_path = (out / "manifest.json").string();
  write_file(res.manifest_path, manifest.dump(2) + "\n");
  return res;
}

}  // namespace rlab
