#include "promptlab/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "promptlab/bounds.hpp"
#include "promptlab/io.hpp"
#include "promptlab/transformer.hpp"

namespace promptlab {

namespace {

using nlohmann::ordered_json;

struct Options {
  std::string world, prompt, m_range = "0..4", out;
  std::optional<std::uint64_t> seed;
  int parallel = 1;
  std::size_t y_max = 10000;
  int trials = 1000;
  // memorize
  double kappa = 0.0;
  bool point_mass = false;
  // bound-calc
  BoundInputs in;
  bool shifted = false;
};

std::pair<int, int> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw Error(ErrorKind::Config, "--m-range must look like A..B");
  try {
    std::size_t used = 0;
    const int a = std::stoi(s.substr(0, dots), &used);
    if (used != dots) throw std::invalid_argument("a");
    const std::string rest = s.substr(dots + 2);
    const int b = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("b");
    if (a < 0 || b < a) throw std::invalid_argument("order");
    return {a, b};
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::Config, "--m-range '" + s + "' is not a valid range A..B with 0 <= A <= B");
  } catch (const std::out_of_range&) {
    throw Error(ErrorKind::Config, "--m-range '" + s + "' is out of range");
  }
}

std::uint64_t need_seed(const Options& o, const char* cmd) {
  if (!o.seed) throw Error(ErrorKind::Config, std::string(cmd) + " needs --seed");
  return *o.seed;
}

ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  return fmt_double(v);
}

// Writes `name` into the output directory, or to `out` when none is given.
void emit(const Options& o, const std::string& name, const std::string& text, std::ostream& out) {
  if (o.out.empty()) {
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    return;
  }
  std::filesystem::create_directories(o.out);
  const auto path = std::filesystem::path(o.out) / name;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Config, path.string() + ": cannot write");
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
  spdlog::info("wrote {}", path.string());
}

ordered_json manifest(const std::string& cmd, const Options& o, const std::vector<BoundReport>& rows) {
  ordered_json j;
  j["command"] = cmd;
  j["world"] = o.world;
  j["prompt"] = o.prompt;
  if (o.seed) j["seed"] = *o.seed;
  j["m_range"] = o.m_range;
  j["y_max"] = o.y_max;
  ordered_json rs = ordered_json::array();
  for (const auto& r : rows) rs.push_back(ordered_json::parse(report_json(r)));
  j["rows"] = rs;
  return j;
}

void write_sweep(const std::string& cmd, const Options& o, const std::vector<BoundReport>& rows,
                 std::ostream& out) {
  emit(o, cmd + ".csv", bounds_csv(rows), out);
  if (!o.out.empty()) emit(o, cmd + ".json", manifest(cmd, o, rows).dump(2), out);
}

int cmd_zero_shot(const Options& o, std::ostream& out) {
  const auto wf = load_world_file(o.world);
  const auto pf = load_prompt_file(o.prompt, wf.world, o.y_max);
  const Tokens& x = pf.kind == "icl" ? pf.icl.query : pf.cot.query;
  const auto& ys = pf.kind == "icl" ? pf.icl.y_set : pf.cot.y_set;
  write_sweep("zero-shot", o, {run_zero_shot(wf.world, x, ys)}, out);
  return 0;
}

int cmd_icl(const Options& o, std::ostream& out) {
  const auto [lo, hi] = parse_range(o.m_range);
  const auto wf = load_world_file(o.world);
  const auto pf = load_prompt_file(o.prompt, wf.world, o.y_max);
  if (pf.kind != "icl") throw Error(ErrorKind::Config, o.prompt + ": icl-sweep needs an icl prompt");
  write_sweep("icl-sweep", o, run_icl_sweep(wf.world, pf.icl, lo, hi, o.parallel), out);
  return 0;
}

int cmd_cot(const Options& o, std::ostream& out) {
  const auto [lo, hi] = parse_range(o.m_range);
  const auto wf = load_world_file(o.world);
  if (!wf.cot) throw Error(ErrorKind::Config, o.world + ": cot-sweep needs a 'cot' section");
  const auto pf = load_prompt_file(o.prompt, wf.world, o.y_max);
  if (pf.kind != "cot") throw Error(ErrorKind::Config, o.prompt + ": cot-sweep needs a cot prompt");
  write_sweep("cot-sweep", o, run_cot_sweep(wf.world, *wf.cot, pf.cot, lo, hi, o.parallel), out);
  return 0;
}

int cmd_memorize(const Options& o, std::ostream& out) {
  const auto wf = load_world_file(o.world);
  MemorizerOptions mo;
  mo.seed = need_seed(o, "memorize");
  mo.kappa = o.kappa;
  mo.allow_point_mass = o.point_mass;
  const auto pairs = memorization_pairs(wf.world);
  const auto m = build_memorizer(wf.world, pairs, mo);
  ordered_json j;
  j["histories"] = pairs.size();
  j["width"] = m.width();
  j["depth"] = m.depth();
  j["scale"] = m.scale;
  j["kappa"] = num(m.kappa);
  j["log_gamma"] = num(m.log_gamma);
  j["context_gap"] = num(m.context_gap);
  j["train_error"] = num(m.train_error);
  emit(o, "memorize.json", j.dump(2), out);
  if (!o.out.empty()) emit(o, "model.json", dump_model(m), out);
  return 0;
}

int cmd_verify(const Options& o, std::ostream& out) {
  if (o.trials < 1) throw Error(ErrorKind::Config, "--trials must be >= 1");
  const auto rep = verify_propositions(WorldFamily{}, o.trials, need_seed(o, "verify-props"));
  emit(o, "verify-props.json", propositions_json(rep), out);
  return rep.violations() == 0 ? 0 : 1;
}

int cmd_bounds(const Options& o, std::ostream& out) {
  const BoundInputs& in = o.in;
  if (!(in.delta > 0 && in.delta < 1)) throw Error(ErrorKind::Config, "--delta must lie in (0,1)");
  ordered_json j;
  auto block = [](const Components& cs) {
    ordered_json b = ordered_json::object();
    for (const auto& c : cs) b[c.label] = num(c.value);
    return b;
  };
  j["pretraining"] = block(rhs_pretraining(in));
  j["icl"] = block(rhs_icl(in));
  try {
    j["cot"] = block(rhs_cot(in, o.shifted));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Divergence) throw;
    j["cot"] = {{"divergent", e.what()}};
  }
  emit(o, "bound-calc.json", j.dump(2), out);
  return 0;
}

int cmd_describe(const Options& o, std::ostream& out) {
  const auto wf = load_world_file(o.world);
  const World& w = wf.world;
  ordered_json j;
  j["V"] = w.vocab.size();
  j["emission"] = w.vocab.emission().size();
  j["tasks"] = w.num_tasks();
  j["n"] = w.n;
  j["b"] = num(w.b);
  j["d"] = w.vocab.dim();
  j["phi"] = num(estimate_phi(w, w.n));
  j["c"] = num(prior_imbalance(w));
  j["M_bound"] = num(std::pow(static_cast<double>(w.vocab.size()), w.n));
  std::vector<Tokens> hs;
  try {
    for (const auto& h : enumerate_histories(w)) hs.push_back(h.columns());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Guard) throw;
    j["M"] = nullptr;
    j["separateness"] = {{"valid", nullptr}, {"reason", e.what()}};
  }
  if (!hs.empty()) {
    j["M"] = hs.size();
    // separateness of the position-encoded histories
    const Mat P = positional_encoder(w.vocab.alpha, w.vocab.dim(), w.n);
    std::vector<Mat> X;
    for (const auto& cols : hs) {
      Mat x = P;
      for (int k = 0; k < w.n; ++k)
        for (int i = 0; i < w.vocab.dim(); ++i) x(i, k) += w.vocab.emb[cols[k]][i];
      X.push_back(x);
    }
    const auto cert = check_separateness(X);
    j["separateness"] = {{"valid", cert.valid},   {"r_min", num(cert.r_min)}, {"r_max", num(cert.r_max)},
                         {"eta", num(cert.eta)}, {"reason", cert.reason}};
  }
  if (wf.cot) j["cot_L"] = wf.cot->L;
  emit(o, "describe-world.json", j.dump(2), out);
  return 0;
}

void setup_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("promptlab", sink);
  logger->set_pattern("[%l] %v");
  const char* lv = std::getenv("PROMPTLAB_LOG");
  logger->set_level(lv ? spdlog::level::from_str(lv) : spdlog::level::warn);
  spdlog::set_default_logger(logger);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  setup_logging(err);
  Options o;
  CLI::App app{"promptlab: latent-task prompting laboratory"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* c, bool world, bool prompt) {
    if (world) c->add_option("--world", o.world, "world JSON")->required();
    if (prompt) c->add_option("--prompt", o.prompt, "prompt layout JSON")->required();
    c->add_option("--out", o.out, "output directory (stdout when absent)");
    c->add_option("--seed", o.seed, "root seed");
    c->add_option("--y-max", o.y_max, "response-set cap");
  };
  auto* zs = app.add_subcommand("zero-shot", "zero-shot bound on the prompt's query");
  common(zs, true, true);
  auto* icl = app.add_subcommand("icl-sweep", "ICL bound sweep over m");
  common(icl, true, true);
  auto* cot = app.add_subcommand("cot-sweep", "CoT bound sweep over m");
  common(cot, true, true);
  for (auto* c : {icl, cot}) {
    c->add_option("--m-range", o.m_range, "demo counts A..B");
    c->add_option("--parallel", o.parallel, "worker threads")->check(CLI::PositiveNumber);
  }
  auto* mem = app.add_subcommand("memorize", "build the memorizing transformer");
  common(mem, true, false);
  mem->add_option("--kappa", o.kappa, "score gap (default 2 log n + 3)");
  mem->add_flag("--point-mass", o.point_mass, "accept length-cap point-mass targets");
  auto* ver = app.add_subcommand("verify-props", "randomized proposition checks");
  common(ver, false, false);
  ver->add_option("--trials", o.trials, "number of random worlds");
  auto* bc = app.add_subcommand("bound-calc", "evaluate the bound formulas");
  common(bc, false, false);
  bc->add_option("--V", o.in.V_size);
  bc->add_option("--n", o.in.n);
  bc->add_option("--N", o.in.N);
  bc->add_option("--d", o.in.d);
  bc->add_option("--M", o.in.M);
  bc->add_option("--r", o.in.r);
  bc->add_option("--delta", o.in.delta);
  bc->add_option("--m", o.in.m);
  bc->add_option("--K", o.in.K);
  bc->add_option("--L", o.in.L);
  bc->add_option("--phi", o.in.phi);
  bc->add_option("--varphi", o.in.varphi);
  bc->add_option("--c", o.in.c);
  bc->add_option("--c1", o.in.c1);
  bc->add_option("--c2", o.in.c2);
  bc->add_option("--epsilon", o.in.epsilon);
  bc->add_option("--delta-mismatch", o.in.delta_mismatch);
  bc->add_option("--M-recip", o.in.M_recip);
  bc->add_option("--ambiguity", o.in.ambiguity);
  bc->add_flag("--shifted", o.shifted, "evidence-shift variant of the CoT mismatch term");
  auto* dw = app.add_subcommand("describe-world", "summarize a world file");
  common(dw, true, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*zs) return cmd_zero_shot(o, out);
    if (*icl) return cmd_icl(o, out);
    if (*cot) return cmd_cot(o, out);
    if (*mem) return cmd_memorize(o, out);
    if (*ver) return cmd_verify(o, out);
    if (*bc) return cmd_bounds(o, out);
    if (*dw) return cmd_describe(o, out);
  } catch (const AssumptionViolation& e) {
    err << "assumption violated: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << error_kind_name(e.kind()) << " error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace promptlab
