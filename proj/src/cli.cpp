#include "zofa/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <thread>

#include "zofa/binary_io.hpp"
#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"
#include "zofa/model_file.hpp"
#include "zofa/zo_optim.hpp"

extern char** environ;

namespace zofa::cli {

using json = nlohmann::ordered_json;

void RunConfig::sync_seed() {
  experiment.seed = seed;
  experiment.task.seed = seed;
  adapt.seed = seed;
}

namespace {

std::size_t count_of(const ConfigValue& v, std::string_view key, std::int64_t min = 0) {
  const std::int64_t i = v.as_int(key);
  if (i < min) throw ConfigError("config key '" + std::string(key) + "' must be >= " + std::to_string(min));
  return static_cast<std::size_t>(i);
}

std::vector<double> numbers_of(const ConfigValue& v, std::string_view key) {
  std::vector<double> out;
  for (const auto& item : v.as_array(key)) out.push_back(item.as_double(key));
  return out;
}

json to_json(const ConfigValue& v) {
  if (v.is_string()) return std::get<std::string>(v.v);
  if (v.is_int()) return std::get<std::int64_t>(v.v);
  if (v.is_bool()) return std::get<bool>(v.v);
  if (v.is_float()) return std::get<double>(v.v);
  json arr = json::array();
  for (const auto& item : std::get<ConfigValue::Array>(v.v)) arr.push_back(to_json(item));
  return arr;
}

std::string_view protocol_name(ResetPolicy p) { return p == ResetPolicy::continual ? "continual" : "single"; }

ResetPolicy protocol_from(std::string_view name) {
  if (name == "single") return ResetPolicy::single_domain;
  if (name == "continual") return ResetPolicy::continual;
  throw ConfigError("protocol must be 'single' or 'continual', got '" + std::string(name) + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const ConfigValue&)> set;
  std::function<json(const RunConfig&)> get;
};

// `ref` is a generic lambda returning a reference into the config.
template <typename Ref>
Field count_field(std::string key, Ref ref, std::int64_t min = 0) {
  return {key, [=](RunConfig& c, const ConfigValue& v) { ref(c) = count_of(v, key, min); },
          [=](const RunConfig& c) { return json(ref(c)); }};
}

template <typename Ref>
Field double_field(std::string key, Ref ref) {
  return {key, [=](RunConfig& c, const ConfigValue& v) { ref(c) = v.as_double(key); },
          [=](const RunConfig& c) { return json(ref(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using R = RunConfig;
    std::vector<Field> f;
    f.push_back({"run.seed", [](R& c, const ConfigValue& v) { c.seed = count_of(v, "run.seed"); },
                 [](const R& c) { return json(c.seed); }});
    f.push_back({"run.out", [](R& c, const ConfigValue& v) { c.out = v.as_string("run.out"); },
                 [](const R& c) { return json(c.out.generic_string()); }});
    f.push_back({"run.run_id",
                 [](R& c, const ConfigValue& v) {
                   c.run_id = v.as_string("run.run_id");
                   if (c.run_id.find_first_of("/\\") != std::string::npos || c.run_id == "." || c.run_id == "..")
                     throw ConfigError("run.run_id must be a plain directory name");
                 },
                 [](const R& c) { return json(c.run_id); }});
    f.push_back({"run.model", [](R& c, const ConfigValue& v) { c.model = v.as_string("run.model"); },
                 [](const R& c) { return json(c.model); }});
    f.push_back({"run.protocol", [](R& c, const ConfigValue& v) { c.protocol = protocol_from(v.as_string("run.protocol")); },
                 [](const R& c) { return json(protocol_name(c.protocol)); }});
    f.push_back({"run.quantize_bits",
                 [](R& c, const ConfigValue& v) {
                   const auto b = v.as_int("run.quantize_bits");
                   if (b != 0 && (b < 2 || b > 32)) throw ConfigError("run.quantize_bits must be 0 or within [2, 32]");
                   c.quantize_bits = static_cast<int>(b);
                 },
                 [](const R& c) { return json(c.quantize_bits); }});
    f.push_back({"run.seeds",
                 [](R& c, const ConfigValue& v) {
                   c.seeds.clear();
                   for (const auto& s : v.as_array("run.seeds")) c.seeds.push_back(count_of(s, "run.seeds"));
                 },
                 [](const R& c) { return json(c.seeds); }});

    f.push_back(count_field("task.dim", [](auto& c) -> auto& { return c.experiment.task.dim; }));
    f.push_back(count_field("task.classes", [](auto& c) -> auto& { return c.experiment.task.classes; }));
    f.push_back(count_field("task.n_train", [](auto& c) -> auto& { return c.experiment.task.n_train; }));
    f.push_back(count_field("task.n_test", [](auto& c) -> auto& { return c.experiment.task.n_test; }));
    f.push_back(double_field("task.radius", [](auto& c) -> auto& { return c.experiment.task.radius; }));
    f.push_back(double_field("task.noise", [](auto& c) -> auto& { return c.experiment.task.noise; }));
    f.push_back(double_field("task.offset", [](auto& c) -> auto& { return c.experiment.task.offset; }));

    f.push_back(count_field("model.hidden", [](auto& c) -> auto& { return c.experiment.model.hidden; }, 1));
    f.push_back(count_field("model.depth", [](auto& c) -> auto& { return c.experiment.model.depth; }, 1));
    f.push_back({"model.activation",
                 [](R& c, const ConfigValue& v) {
                   const auto& a = v.as_string("model.activation");
                   if (a == "relu") c.experiment.model.activation = Activation::relu;
                   else if (a == "tanh") c.experiment.model.activation = Activation::tanh;
                   else throw ConfigError("model.activation must be 'relu' or 'tanh'");
                 },
                 [](const R& c) { return json(c.experiment.model.activation == Activation::tanh ? "tanh" : "relu"); }});
    f.push_back({"model.input_offset",
                 [](R& c, const ConfigValue& v) { c.experiment.model.input_offset = v.as_bool("model.input_offset"); },
                 [](const R& c) { return json(c.experiment.model.input_offset); }});

    f.push_back(count_field("pretrain.steps", [](auto& c) -> auto& { return c.experiment.pretrain.steps; }));
    f.push_back(double_field("pretrain.lr", [](auto& c) -> auto& { return c.experiment.pretrain.lr; }));
    f.push_back(count_field("pretrain.batch_size", [](auto& c) -> auto& { return c.experiment.pretrain.batch_size; }));
    f.push_back({"pretrain.seed",
                 [](R& c, const ConfigValue& v) { c.experiment.pretrain.seed = count_of(v, "pretrain.seed"); },
                 [](const R& c) { return json(c.experiment.pretrain.seed); }});

    f.push_back({"stream.severity",
                 [](R& c, const ConfigValue& v) {
                   const auto s = v.as_int("stream.severity");
                   if (s < 0 || s > 5) throw ConfigError("stream.severity must lie in [0, 5]");
                   c.experiment.severity = static_cast<int>(s);
                 },
                 [](const R& c) { return json(c.experiment.severity); }});
    f.push_back({"stream.samples_per_domain",
                 [](R& c, const ConfigValue& v) {
                   c.experiment.samples_per_domain = count_of(v, "stream.samples_per_domain");
                 },
                 [](const R& c) { return json(c.experiment.samples_per_domain); }});
    f.push_back({"stream.domains", [](R& c, const ConfigValue& v) { c.experiment.domains = v.as_string("stream.domains"); },
                 [](const R& c) { return json(c.experiment.domains); }});

    f.push_back({"adapt.mode", [](R& c, const ConfigValue& v) { c.adapt.mode = mode_from_string(v.as_string("adapt.mode")); },
                 [](const R& c) { return json(to_string(c.adapt.mode)); }});
    auto adapt_double = [&](const char* name, double AdaptConfig::*m) {
      const std::string key = std::string("adapt.") + name;
      f.push_back({key, [=](R& c, const ConfigValue& v) { c.adapt.*m = v.as_double(key); },
                   [=](const R& c) { return json(c.adapt.*m); }});
    };
    adapt_double("mu", &AdaptConfig::mu);
    adapt_double("eta", &AdaptConfig::eta);
    adapt_double("gamma", &AdaptConfig::gamma);
    adapt_double("lambda", &AdaptConfig::lambda);
    adapt_double("rho", &AdaptConfig::rho);
    adapt_double("center_ema", &AdaptConfig::center_ema);
    adapt_double("moment_ema", &AdaptConfig::moment_ema);
    adapt_double("anchor_ema", &AdaptConfig::anchor_ema);
    f.push_back({"adapt.k", [](R& c, const ConfigValue& v) { c.adapt.k = count_of(v, "adapt.k"); },
                 [](const R& c) { return json(c.adapt.k); }});
    f.push_back({"adapt.batch_size", [](R& c, const ConfigValue& v) { c.adapt.batch_size = count_of(v, "adapt.batch_size", 1); },
                 [](const R& c) { return json(c.adapt.batch_size); }});
    f.push_back({"adapt.balance", [](R& c, const ConfigValue& v) { c.adapt.balance_on = v.as_bool("adapt.balance"); },
                 [](const R& c) { return json(c.adapt.balance_on); }});
    f.push_back({"adapt.diagnostics", [](R& c, const ConfigValue& v) { c.adapt.diagnostics = v.as_bool("adapt.diagnostics"); },
                 [](const R& c) { return json(c.adapt.diagnostics); }});
    auto component = [&](const char* name, bool Components::*m) {
      const std::string key = std::string("components.") + name;
      f.push_back({key, [=](R& c, const ConfigValue& v) { c.adapt.components.*m = v.as_bool(key); },
                   [=](const R& c) { return json(c.adapt.components.*m); }});
    };
    component("sr_entropy", &Components::sr_entropy);
    component("alignment", &Components::alignment);
    component("anchor_guided", &Components::anchor_guided);
    component("samplewise", &Components::samplewise);

    f.push_back({"sweep.axis", [](R& c, const ConfigValue& v) { c.sweep_axis = v.as_string("sweep.axis"); },
                 [](const R& c) { return json(c.sweep_axis); }});
    f.push_back({"sweep.values", [](R& c, const ConfigValue& v) { c.sweep_values = v.as_array("sweep.values"); },
                 [](const R& c) {
                   json arr = json::array();
                   for (const auto& x : c.sweep_values) arr.push_back(to_json(x));
                   return arr;
                 }});
    f.push_back({"sweep.etas", [](R& c, const ConfigValue& v) { c.sweep_etas = numbers_of(v, "sweep.etas"); },
                 [](const R& c) { return json(c.sweep_etas); }});

    f.push_back({"probe.batches", [](R& c, const ConfigValue& v) { c.probe_batches = count_of(v, "probe.batches", 1); },
                 [](const R& c) { return json(c.probe_batches); }});
    f.push_back({"probe.trials", [](R& c, const ConfigValue& v) { c.probe_trials = count_of(v, "probe.trials", 2); },
                 [](const R& c) { return json(c.probe_trials); }});
    f.push_back({"probe.shortcut", [](R& c, const ConfigValue& v) { c.probe_shortcut = numbers_of(v, "probe.shortcut"); },
                 [](const R& c) { return json(c.probe_shortcut); }});
    f.push_back({"probe.noise", [](R& c, const ConfigValue& v) { c.probe_noise = v.as_double("probe.noise"); },
                 [](const R& c) { return json(c.probe_noise); }});
    return f;
  }();
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string env_name(const std::string& key) {
  std::string out = "ZOFA_";
  for (char c : key) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

json effective_config(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    out[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  return out;
}

json overrides_json(const ConfigDoc& doc) {
  json out = json::object();
  for (const auto& [k, v] : doc) out[k] = to_json(v);
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

json report_json(const RunReport& report) {
  json domains = json::array();
  for (const auto& d : report.domains) {
    domains.push_back({{"name", d.name},
                       {"samples", d.samples},
                       {"correct", d.correct},
                       {"accuracy", d.accuracy},
                       {"start_drift", d.start_drift},
                       {"end_drift", d.end_drift}});
  }
  std::size_t excluded = 0, clamps = 0, warnings = 0;
  for (const auto& s : report.steps) {
    excluded += s.excluded;
    clamps += s.clamp_triggered;
    warnings += !s.warning.empty();
  }
  return {{"protocol", protocol_name(report.reset)},
          {"steps", report.steps.size()},
          {"average_accuracy", report.average_accuracy},
          {"final_drift", report.final_drift},
          {"total_forwards", report.total_forwards},
          {"excluded_samples", excluded},
          {"clamped_steps", clamps},
          {"warnings", warnings},
          {"domains", domains}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::string_view(text));
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Runs jobs [0, n) on up to `workers` threads; the first failure (by job index)
// is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Fixture {
  Network net;
  Dataset test;
  double source_accuracy = 0.0;
  bool pretrained_here = false;
};

Fixture load_fixture(const RunConfig& cfg) {
  Fixture fx;
  if (cfg.model.empty()) {
    PreparedModel pm = prepare_model(cfg.experiment);
    fx.net = std::move(pm.net);
    fx.test = std::move(pm.test);
    fx.pretrained_here = true;
  } else {
    fx.net = load_network(cfg.model);
    TaskSpec task = cfg.experiment.task;
    task.seed = cfg.experiment.seed;
    fx.test = make_source_task(task).second;
  }
  if (cfg.quantize_bits) fx.net = quantize_weights(fx.net, cfg.quantize_bits);
  fx.source_accuracy = static_accuracy(fx.net, fx.test);
  return fx;
}

void check_source_stats(const Network& net, const AdaptConfig& cfg) {
  const bool needs = cfg.lambda > 0.0 && cfg.components.alignment &&
                     (cfg.mode == Mode::eva0 || cfg.mode == Mode::batch_shared_baseline ||
                      cfg.mode == Mode::one_sided_baseline);
  if (needs && !net.source_stats)
    throw ConfigError("lambda > 0 needs source feature statistics, but the model carries none (use eva0-dagger or lambda = 0)");
}

json run_header(const std::string& command, const std::string& run_id, const RunConfig& cfg,
                const ConfigDoc& env_layer, const ConfigDoc& flag_layer) {
  return {{"command", command},
          {"run_id", run_id},
          {"seed", cfg.seed},
          {"config", effective_config(cfg)},
          {"overrides", {{"environment", overrides_json(env_layer)}, {"flags", overrides_json(flag_layer)}}}};
}

struct Context {
  RunConfig cfg;
  ConfigDoc env_layer;
  ConfigDoc flag_layer;
  std::size_t workers = 1;
  std::ostream* out = nullptr;
};

std::filesystem::path run_dir(const Context& ctx, const std::string& command) {
  const std::string id = ctx.cfg.run_id.empty() ? default_run_id(command, ctx.cfg) : ctx.cfg.run_id;
  return ctx.cfg.out / id;
}

int cmd_pretrain(const Context& ctx) {
  const auto dir = run_dir(ctx, "pretrain");
  PreparedModel pm = prepare_model(ctx.cfg.experiment);
  save_network(pm.net, dir / "model.zofa");
  json summary = run_header("pretrain", dir.filename().string(), ctx.cfg, ctx.env_layer, ctx.flag_layer);
  summary["model_file"] = "model.zofa";
  summary["parameters"] = pm.net.param_count();
  summary["adapted_parameters"] = pm.net.adapted_count();
  summary["source_accuracy"] = pm.source_accuracy;
  write_json(dir / "summary.json", summary);
  *ctx.out << "pretrained model: " << (dir / "model.zofa").generic_string() << "  source accuracy " << fmt(pm.source_accuracy)
           << "\n";
  return exit_ok;
}

int cmd_adapt(const Context& ctx) {
  const auto dir = run_dir(ctx, "adapt");
  const Fixture fx = load_fixture(ctx.cfg);
  check_source_stats(fx.net, ctx.cfg.adapt);
  const RunReport report = run_experiment(fx.net, fx.test, ctx.cfg.experiment, ctx.cfg.adapt, ctx.cfg.protocol);
  write_text(dir / "trace.csv", trace_csv(report));
  json summary = run_header("adapt", dir.filename().string(), ctx.cfg, ctx.env_layer, ctx.flag_layer);
  summary["source_accuracy"] = fx.source_accuracy;
  summary["result"] = report_json(report);
  write_json(dir / "summary.json", summary);
  *ctx.out << to_string(ctx.cfg.adapt.mode) << " (" << protocol_name(ctx.cfg.protocol) << ")  average accuracy "
           << fmt(report.average_accuracy) << "  final drift " << fmt(report.final_drift) << "  -> "
           << dir.generic_string() << "\n";
  return exit_ok;
}

struct Setting {
  std::string name;
  std::function<void(AdaptConfig&)> apply;
};

std::string setting_label(const char* prefix, double v) { return std::string(prefix) + "=" + fmt(v); }

std::vector<Setting> sweep_settings(const RunConfig& cfg) {
  const std::string& axis = cfg.sweep_axis;
  std::vector<Setting> out;
  auto numeric = [&](std::vector<double> defaults) {
    if (cfg.sweep_values.empty()) return defaults;
    std::vector<double> v;
    for (const auto& x : cfg.sweep_values) v.push_back(x.as_double("sweep.values"));
    return v;
  };
  if (axis == "components") {
    std::vector<std::string> masks;
    if (cfg.sweep_values.empty()) {
      for (int m = 0; m < 16; ++m) {
        std::string s;
        for (int b = 3; b >= 0; --b) s += ((m >> b) & 1) ? '1' : '0';
        masks.push_back(s);
      }
    } else {
      for (const auto& x : cfg.sweep_values) masks.push_back(x.as_string("sweep.values"));
    }
    for (const auto& m : masks) {
      if (m.size() != 4 || m.find_first_not_of("01") != std::string::npos)
        throw ConfigError("components settings are 4-character 0/1 masks (sr, swa, ago, ssd), got '" + m + "'");
      const std::string name = std::string("sr") + m[0] + "-swa" + m[1] + "-ago" + m[2] + "-ssd" + m[3];
      out.push_back({name, [m](AdaptConfig& a) {
                       a.components.sr_entropy = m[0] == '1';
                       a.components.alignment = m[1] == '1';
                       a.components.anchor_guided = m[2] == '1';
                       a.components.samplewise = m[3] == '1';
                     }});
    }
  } else if (axis == "gamma") {
    for (double v : numeric({0.0, 0.0005, 0.001, 0.005, 0.01}))
      out.push_back({setting_label("gamma", v), [v](AdaptConfig& a) { a.gamma = v; }});
  } else if (axis == "k") {
    for (double v : numeric({0, 1, 2, 4, 8}))
      out.push_back({setting_label("k", v), [v](AdaptConfig& a) { a.k = static_cast<std::size_t>(v); }});
  } else if (axis == "m") {
    for (double v : numeric({0.0, 0.001, 0.01, 0.1}))
      out.push_back({setting_label("m", v), [v](AdaptConfig& a) { a.anchor_ema = v; }});
  } else if (axis == "mu") {
    for (double v : numeric({0.01, 0.03, 0.06, 0.1, 0.2}))
      out.push_back({setting_label("mu", v), [v](AdaptConfig& a) { a.mu = v; }});
  } else if (axis == "batch-size") {
    for (double eta : cfg.sweep_etas)
      for (double b : numeric({1, 4, 8, 16, 32, 64})) {
        const std::size_t bs = static_cast<std::size_t>(b);
        out.push_back({"B=" + std::to_string(bs) + ";eta=" + fmt(eta), [bs, eta](AdaptConfig& a) {
                         a.batch_size = bs;
                         a.eta = eta;
                         a.k = std::min(a.k, bs);
                       }});
      }
  } else if (axis == "estimator") {
    std::vector<std::string> modes = {"one-sided-baseline", "batch-shared-baseline", "eva0"};
    if (!cfg.sweep_values.empty()) {
      modes.clear();
      for (const auto& x : cfg.sweep_values) modes.push_back(x.as_string("sweep.values"));
    }
    for (const auto& m : modes) {
      const Mode mode = mode_from_string(m);
      out.push_back({m, [mode](AdaptConfig& a) { a.mode = mode; }});
    }
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (components, gamma, k, m, mu, batch-size, estimator)");
  }
  return out;
}

std::string dir_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

int cmd_sweep(const Context& ctx) {
  const auto dir = run_dir(ctx, "sweep");
  const std::vector<Setting> settings = sweep_settings(ctx.cfg);
  const std::vector<std::uint64_t> seeds = ctx.cfg.seeds.empty() ? std::vector<std::uint64_t>{ctx.cfg.seed} : ctx.cfg.seeds;

  std::vector<RunConfig> per_seed;
  for (auto s : seeds) {
    RunConfig c = ctx.cfg;
    c.seed = s;
    c.sync_seed();
    per_seed.push_back(std::move(c));
  }
  // Validate every setting before any expensive work.
  for (const auto& st : settings) {
    AdaptConfig a = ctx.cfg.adapt;
    st.apply(a);
    a.validate();
  }
  std::vector<Fixture> fixtures(seeds.size());
  parallel_for(seeds.size(), ctx.workers, [&](std::size_t i) { fixtures[i] = load_fixture(per_seed[i]); });

  const std::size_t jobs = settings.size() * seeds.size();
  std::vector<RunReport> reports(jobs);
  parallel_for(jobs, ctx.workers, [&](std::size_t j) {
    const std::size_t si = j / seeds.size(), ki = j % seeds.size();
    AdaptConfig a = per_seed[ki].adapt;
    settings[si].apply(a);
    check_source_stats(fixtures[ki].net, a);
    reports[j] = run_experiment(fixtures[ki].net, fixtures[ki].test, per_seed[ki].experiment, a, ctx.cfg.protocol);
    const auto sub = dir / dir_name(settings[si].name) / ("seed-" + std::to_string(seeds[ki]));
    write_text(sub / "trace.csv", trace_csv(reports[j]));
    json summary = run_header("adapt", sub.filename().string(), per_seed[ki], ctx.env_layer, ctx.flag_layer);
    summary["setting"] = settings[si].name;
    summary["result"] = report_json(reports[j]);
    write_json(sub / "summary.json", summary);
  });

  std::string csv = "axis,setting,seeds,mean_accuracy,min_accuracy,max_accuracy,mean_final_drift\n";
  json rows = json::array();
  for (std::size_t si = 0; si < settings.size(); ++si) {
    double sum = 0.0, lo = 1.0, hi = 0.0, drift = 0.0;
    for (std::size_t ki = 0; ki < seeds.size(); ++ki) {
      const RunReport& r = reports[si * seeds.size() + ki];
      sum += r.average_accuracy;
      lo = std::min(lo, r.average_accuracy);
      hi = std::max(hi, r.average_accuracy);
      drift += r.final_drift;
    }
    const double n = static_cast<double>(seeds.size());
    csv += ctx.cfg.sweep_axis + "," + csv_field(settings[si].name) + "," + std::to_string(seeds.size()) + "," +
           fmt(sum / n) + "," + fmt(lo) + "," + fmt(hi) + "," + fmt(drift / n) + "\n";
    rows.push_back({{"setting", settings[si].name}, {"mean_accuracy", sum / n}, {"mean_final_drift", drift / n}});
    *ctx.out << ctx.cfg.sweep_axis << "  " << settings[si].name << "  mean accuracy " << fmt(sum / n) << "\n";
  }
  write_text(dir / "sweep.csv", csv);
  json summary = run_header("sweep", dir.filename().string(), ctx.cfg, ctx.env_layer, ctx.flag_layer);
  summary["axis"] = ctx.cfg.sweep_axis;
  summary["seeds"] = seeds;
  summary["settings"] = rows;
  write_json(dir / "summary.json", summary);
  return exit_ok;
}

int cmd_probe(const Context& ctx) {
  const auto dir = run_dir(ctx, "probe");
  const RunConfig& cfg = ctx.cfg;
  const Fixture fx = load_fixture(cfg);
  if (cfg.adapt.mode == Mode::no_adapt || cfg.adapt.mode == Mode::bp_oracle_tent)
    throw ConfigError("probe needs a zeroth-order mode");
  check_source_stats(fx.net, cfg.adapt);

  // Alignment of sample-wise and batch-shared estimates with the backprop
  // oracle on batches of the first domain of the stream.
  const StreamProtocol protocol = make_protocol(cfg.experiment, fx.test.size(), ResetPolicy::single_domain);
  if (protocol.domains.empty()) throw ConfigError("probe needs at least one domain");
  const auto& plan = protocol.domains.front();
  const Dataset shifted = corrupt(fx.test, plan.corruption);
  const std::size_t b = cfg.adapt.batch_size;
  if (plan.order.size() < b) throw ConfigError("probe domain has fewer samples than one batch");

  AdaptConfig sw = cfg.adapt, shared = cfg.adapt;
  sw.components.samplewise = true;
  shared.components.samplewise = false;
  std::string csv = "probe,cos_samplewise,cos_shared\n";
  std::vector<double> a(cfg.probe_batches), s(cfg.probe_batches);
  parallel_for(cfg.probe_batches, ctx.workers, [&](std::size_t i) {
    std::vector<std::size_t> rows(b);
    for (std::size_t r = 0; r < b; ++r) rows[r] = plan.order[(i * b + r) % plan.order.size()];
    const Dataset part = shifted.subset(rows);
    const Batch batch{part.x, part.y};
    OnlineState st = initial_state(fx.net, cfg.adapt);
    st.step = i;
    st.stream_salt = plan.corruption.seed;
    a[i] = gradient_alignment_probe(fx.net, st, batch, sw).cosine;
    s[i] = gradient_alignment_probe(fx.net, st, batch, shared).cosine;
  });
  double diff_mean = 0.0, diff_sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    csv += std::to_string(i) + "," + fmt(a[i]) + "," + fmt(s[i]) + "\n";
    diff_mean += a[i] - s[i];
  }
  const double n = static_cast<double>(a.size());
  diff_mean /= n;
  for (std::size_t i = 0; i < a.size(); ++i) diff_sq += (a[i] - s[i] - diff_mean) * (a[i] - s[i] - diff_mean);
  const double diff_se = a.size() > 1 ? std::sqrt(diff_sq / (n - 1.0) / n) : 0.0;
  write_text(dir / "alignment.csv", csv);

  // Monte-Carlo check of the shortcut variance bound.
  const std::size_t dim = 64;
  std::vector<double> g_main(dim, 0.0), v(dim, 0.0);
  for (std::size_t j = 1; j < dim; ++j) g_main[j] = 1.0 / std::sqrt(static_cast<double>(dim - 1));
  v[1] = 1.0;
  std::string mc = "shortcut,trials,mean,variance,standard_error,v_dot_g_main,a_squared\n";
  json bound = json::array();
  for (std::size_t i = 0; i < cfg.probe_shortcut.size(); ++i) {
    const double A = cfg.probe_shortcut[i];
    const ProjectionStats st = shortcut_variance_probe(A, g_main, v, cfg.probe_trials, cfg.probe_noise,
                                                       derive_key({cfg.seed, i, 0x70726f62ULL}));
    mc += fmt(A) + "," + std::to_string(st.trials) + "," + fmt(st.mean) + "," + fmt(st.variance) + "," +
          fmt(st.standard_error) + "," + fmt(g_main[1]) + "," + fmt(A * A) + "\n";
    bound.push_back({{"shortcut", A},
                     {"mean", st.mean},
                     {"variance", st.variance},
                     {"standard_error", st.standard_error},
                     {"v_dot_g_main", g_main[1]},
                     {"a_squared", A * A}});
  }
  write_text(dir / "shortcut_variance.csv", mc);

  json summary = run_header("probe", dir.filename().string(), cfg, ctx.env_layer, ctx.flag_layer);
  summary["domain"] = domain_name(plan.corruption);
  summary["alignment"] = {{"probes", a.size()},
                          {"mean_cos_samplewise", mean_of(a)},
                          {"mean_cos_shared", mean_of(s)},
                          {"mean_difference", diff_mean},
                          {"difference_standard_error", diff_se}};
  summary["shortcut_variance"] = bound;
  write_json(dir / "summary.json", summary);
  *ctx.out << "alignment: sample-wise " << fmt(mean_of(a)) << "  batch-shared " << fmt(mean_of(s)) << "  -> "
           << dir.generic_string() << "\n";
  return exit_ok;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_config(RunConfig& cfg, const ConfigDoc& doc) {
  for (const auto& [key, value] : doc) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(cfg, value);
  }
  cfg.sync_seed();
}

ConfigDoc environment_overrides(const std::map<std::string, std::string>& env) {
  ConfigDoc doc;
  for (const auto& [name, text] : env) {
    if (name.rfind("ZOFA_", 0) != 0 || name == "ZOFA_THREADS") continue;
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (env_name(f.key) == name) match = &f;
    if (!match) throw ConfigError("unknown environment override " + name);
    ConfigValue v;
    try {
      v = parse_config_value(text);
    } catch (const ConfigError&) {
      v.v = text;
    }
    doc[match->key] = std::move(v);
  }
  return doc;
}

std::map<std::string, std::string> current_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return env;
}

std::size_t worker_limit(const std::map<std::string, std::string>& env) {
  const auto it = env.find("ZOFA_THREADS");
  if (it == env.end() || it->second.empty()) return std::max(1u, std::thread::hardware_concurrency());
  ConfigValue v;
  try {
    v = parse_config_value(it->second);
  } catch (const ConfigError&) {
    throw ConfigError("ZOFA_THREADS must be a positive integer");
  }
  if (!v.is_int() || v.as_int("ZOFA_THREADS") < 1) throw ConfigError("ZOFA_THREADS must be a positive integer");
  return static_cast<std::size_t>(v.as_int("ZOFA_THREADS"));
}

std::string default_run_id(const std::string& command, const RunConfig& cfg) {
  const std::string seed = "s" + std::to_string(cfg.seed);
  if (command == "pretrain") return "pretrain-" + seed;
  if (command == "sweep") return "sweep-" + cfg.sweep_axis + "-" + seed;
  if (command == "probe") return "probe-" + std::string(to_string(cfg.adapt.mode)) + "-" + seed;
  std::string id = std::string(to_string(cfg.adapt.mode)) + "-" + std::string(protocol_name(cfg.protocol)) + "-" + seed;
  if (cfg.quantize_bits) id += "-q" + std::to_string(cfg.quantize_bits);
  return id;
}

std::string trace_csv(const RunReport& report) {
  std::string csv =
      "step,domain,step_seed,samples,correct,loss_plus,loss_minus,update_norm,drift,mean_logit_norm,"
      "mean_sr_entropy,mean_entropy,cosine,forwards,excluded,clamp,warning,predicted\n";
  for (const auto& r : report.steps) {
    std::size_t correct = 0;
    for (char c : r.correct) correct += c != 0;
    std::string pred;
    for (std::size_t i = 0; i < r.predicted.size(); ++i) pred += (i ? " " : "") + std::to_string(r.predicted[i]);
    csv += std::to_string(r.step) + "," + csv_field(r.domain) + "," + std::to_string(r.step_seed) + "," +
           std::to_string(r.predicted.size()) + "," + std::to_string(correct) + "," + fmt(mean_of(r.loss_plus)) + "," +
           fmt(mean_of(r.loss_minus)) + "," + fmt(r.update_norm) + "," + fmt(r.drift) + "," + fmt(r.mean_logit_norm) +
           "," + fmt(r.mean_sr_entropy) + "," + fmt(r.mean_entropy) + "," + fmt(r.cosine) + "," +
           std::to_string(r.forwards) + "," + std::to_string(r.excluded) + "," + (r.clamp_triggered ? "1" : "0") + "," +
           csv_field(r.warning) + "," + pred + "\n";
  }
  return csv;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-forward zeroth-order test-time adaptation experiments"};
  app.require_subcommand(1);
  struct Flags {
    std::string config, mode, out, protocol, axis, model;
    std::optional<std::int64_t> seed, quantize_bits;
  };
  Flags flags;
  std::vector<CLI::App*> commands;
  for (const char* name : {"pretrain", "adapt", "sweep", "probe"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "TOML-subset configuration file");
    sub->add_option("--seed", flags.seed, "run seed");
    sub->add_option("--mode", flags.mode, "adaptation mode");
    sub->add_option("--quantize-bits", flags.quantize_bits, "quantize frozen linear weights to this many bits");
    sub->add_option("--out", flags.out, "output root directory");
    sub->add_option("--protocol", flags.protocol, "single or continual");
    sub->add_option("--model", flags.model, "ZOFA1 model file (default: pretrain in memory)");
    if (std::string(name) == "sweep") sub->add_option("--axis", flags.axis, "sweep axis");
    commands.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* c : commands)
      if (c->parsed()) out << c->help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_config;
  }
  std::string command;
  for (auto* c : commands)
    if (c->parsed()) command = c->get_name();

  try {
    Context ctx;
    ctx.out = &out;
    ConfigDoc file_layer;
    if (!flags.config.empty()) {
      std::string text;
      try {
        text = read_file(flags.config);
      } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config file: ") + e.what());
      }
      file_layer = parse_config(text);
    }
    const auto env = current_environment();
    ctx.env_layer = environment_overrides(env);
    ctx.workers = worker_limit(env);
    if (flags.seed) ctx.flag_layer["run.seed"] = ConfigValue{*flags.seed};
    if (!flags.mode.empty()) ctx.flag_layer["adapt.mode"] = ConfigValue{flags.mode};
    if (flags.quantize_bits) ctx.flag_layer["run.quantize_bits"] = ConfigValue{*flags.quantize_bits};
    if (!flags.out.empty()) ctx.flag_layer["run.out"] = ConfigValue{flags.out};
    if (!flags.protocol.empty()) ctx.flag_layer["run.protocol"] = ConfigValue{flags.protocol};
    if (!flags.model.empty()) ctx.flag_layer["run.model"] = ConfigValue{flags.model};
    if (!flags.axis.empty()) ctx.flag_layer["sweep.axis"] = ConfigValue{flags.axis};

    apply_config(ctx.cfg, file_layer);
    apply_config(ctx.cfg, ctx.env_layer);
    apply_config(ctx.cfg, ctx.flag_layer);
    ctx.cfg.adapt.validate();

    if (command == "pretrain") return cmd_pretrain(ctx);
    if (command == "adapt") return cmd_adapt(ctx);
    if (command == "sweep") return cmd_sweep(ctx);
    return cmd_probe(ctx);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return exit_config;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return exit_io;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return exit_numerical;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return exit_input;
  } catch (const CapabilityError& e) {
    err << "input error: " << e.what() << "\n";
    return exit_input;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return exit_internal;
  }
}

}  // namespace zofa::cli
