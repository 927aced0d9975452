#include "promptlab/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace promptlab {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::Config, path + ": " + msg);
}

const json& need(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path + "." + key, "missing");
  return *it;
}

double as_num(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

const json& as_array(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  return j;
}

Role parse_role(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a role string");
  const auto s = j.get<std::string>();
  if (s == "content") return Role::Content;
  if (s == "sos") return Role::Sos;
  if (s == "eos") return Role::Eos;
  if (s == "pad") return Role::Pad;
  if (s == "delim" || s == "delimiter") return Role::Delim;
  fail(path, "unknown role '" + s + "'");
}

int token_ref(const Vocab& v, const json& j, const std::string& path) {
  if (j.is_string()) {
    const int id = v.id_of(j.get<std::string>());
    if (id < 0) fail(path, "unknown token '" + j.get<std::string>() + "'");
    return id;
  }
  const int id = as_int(j, path);
  if (id < 0 || id >= v.size()) fail(path, "token id out of range");
  return id;
}

Tokens token_list(const Vocab& v, const json& j, const std::string& path) {
  Tokens out;
  as_array(j, path);
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(token_ref(v, j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// {"name": p, ...} or a full-length array
Dist parse_row(const Vocab& v, const json& j, const std::string& path) {
  Dist r(v.size(), 0.0);
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != v.size()) fail(path, "row must have one entry per token");
    for (int i = 0; i < v.size(); ++i) r[i] = as_num(j[i], path + "[" + std::to_string(i) + "]");
    return r;
  }
  if (!j.is_object()) fail(path, "expected a row object or array");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const int t = v.id_of(it.key());
    if (t < 0) fail(path + "." + it.key(), "unknown token");
    r[t] = as_num(it.value(), path + "." + it.key());
  }
  return r;
}

World parse_world(const json& j, const std::string& origin) {
  World w;
  const std::string p = origin;
  if (!j.is_object()) fail(p, "expected an object");
  w.n = as_int(need(j, "n", p), p + ".n");
  w.b = as_num(need(j, "b", p), p + ".b");
  w.vocab.alpha = as_num(need(j, "alpha", p), p + ".alpha");
  w.vocab.beta = as_num(need(j, "beta", p), p + ".beta");
  if (j.contains("floor_mode")) {
    if (!j["floor_mode"].is_string()) fail(p + ".floor_mode", "expected a string");
    w.floor_mode = j["floor_mode"].get<std::string>();
    if (w.floor_mode != "mix" && w.floor_mode != "validate")
      fail(p + ".floor_mode", "must be 'mix' or 'validate'");
  }
  const json& toks = as_array(need(j, "tokens", p), p + ".tokens");
  int d = j.contains("d") ? as_int(j["d"], p + ".d") : -1;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::string tp = p + ".tokens[" + std::to_string(i) + "]";
    const json& name = need(toks[i], "name", tp);
    if (!name.is_string()) fail(tp + ".name", "expected a string");
    w.vocab.names.push_back(name.get<std::string>());
    w.vocab.roles.push_back(parse_role(need(toks[i], "role", tp), tp + ".role"));
    std::vector<double> e;
    const json& ej = as_array(need(toks[i], "emb", tp), tp + ".emb");
    for (std::size_t k = 0; k < ej.size(); ++k) e.push_back(as_num(ej[k], tp + ".emb[" + std::to_string(k) + "]"));
    if (d < 0) d = static_cast<int>(e.size());
    if (static_cast<int>(e.size()) != d) fail(tp + ".emb", "expected " + std::to_string(d) + " entries");
    w.vocab.emb.push_back(std::move(e));
  }
  for (int i = 0; i < w.vocab.size(); ++i)
    for (int k = i + 1; k < w.vocab.size(); ++k)
      if (w.vocab.names[i] == w.vocab.names[k]) fail(p + ".tokens", "duplicate token name '" + w.vocab.names[i] + "'");
  // roles are needed for id_of; finalize again after the tasks are in
  try {
    w.vocab.finalize();
  } catch (const Error& e) {
    fail(p + ".tokens", e.what());
  }

  const json& tasks = as_array(need(j, "tasks", p), p + ".tasks");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string tp = p + ".tasks[" + std::to_string(i) + "]";
    const json& tj = tasks[i];
    Task t;
    t.id = as_int(need(tj, "id", tp), tp + ".id");
    const std::string kind = tj.contains("kind") ? tj["kind"].get<std::string>() : "content";
    if (kind == "delimiter") {
      if (tj.contains("token") && token_ref(w.vocab, tj["token"], tp + ".token") != w.vocab.delim)
        fail(tp + ".token", "delimiter task must emit the reserved delimiter token");
      continue;
    }
    if (kind != "content") fail(tp + ".kind", "must be 'content' or 'delimiter'");
    if (tj.contains("table")) {
      t.backend = Backend::Table;
      const json& tab = as_array(tj["table"], tp + ".table");
      for (std::size_t e = 0; e < tab.size(); ++e) {
        const std::string ep = tp + ".table[" + std::to_string(e) + "]";
        const Tokens pre = token_list(w.vocab, need(tab[e], "prefix", ep), ep + ".prefix");
        const auto key = w.prefix_key(pre);
        if (t.table.count(key)) fail(ep + ".prefix", "duplicate prefix");
        t.table[key] = parse_row(w.vocab, need(tab[e], "row", ep), ep + ".row");
      }
      if (!t.table.count(0)) fail(tp + ".table", "the empty prefix is required");
    } else {
      t.backend = Backend::Markov;
      t.init = parse_row(w.vocab, need(tj, "init", tp), tp + ".init");
      t.rows.assign(w.vocab.size(), Dist{});
      const json& mj = need(tj, "matrix", tp);
      if (!mj.is_object()) fail(tp + ".matrix", "expected an object keyed by token name");
      for (auto it = mj.begin(); it != mj.end(); ++it) {
        const int s = w.vocab.id_of(it.key());
        if (s < 0) fail(tp + ".matrix." + it.key(), "unknown token");
        if (!w.vocab.is_content(s)) fail(tp + ".matrix." + it.key(), "rows exist for content tokens only");
        t.rows[s] = parse_row(w.vocab, it.value(), tp + ".matrix." + it.key());
      }
      for (int c : w.vocab.content())
        if (t.rows[c].empty()) fail(tp + ".matrix", "missing row for '" + w.vocab.names[c] + "'");
    }
    w.tasks.push_back(std::move(t));
  }
  const json& pj = as_array(need(j, "prior", p), p + ".prior");
  for (std::size_t i = 0; i < pj.size(); ++i) w.prior.push_back(as_num(pj[i], p + ".prior[" + std::to_string(i) + "]"));
  if (w.prior.size() != w.tasks.size()) fail(p + ".prior", "needs one weight per content task");
  try {
    w.finalize();
  } catch (const Error& e) {
    fail(p, e.what());
  }
  return w;
}

CotWorld parse_cot(const json& base_json, const World& base, const json& c, const std::string& p) {
  CotWorld cw;
  cw.base = base;
  cw.L = as_int(need(c, "L", p), p + ".L");
  const json& comps = as_array(need(c, "composites", p), p + ".composites");
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const std::string cp = p + ".composites[" + std::to_string(i) + "]";
    const json& sj = as_array(need(comps[i], "steps", cp), cp + ".steps");
    std::vector<int> steps;
    for (std::size_t k = 0; k < sj.size(); ++k) {
      const std::string sp = cp + ".steps[" + std::to_string(k) + "]";
      try {
        steps.push_back(base.task_index(as_int(sj[k], sp)));
      } catch (const Error& e) {
        fail(sp, e.what());
      }
    }
    cw.composites.push_back(std::move(steps));
    cw.composite_prior.push_back(as_num(need(comps[i], "prior", cp), cp + ".prior"));
  }
  const std::string mode = c.contains("query_mode") ? c["query_mode"].get<std::string>() : "prior";
  if (mode == "prior") cw.query_mode = QueryTaskMode::Prior;
  else if (mode == "tied") cw.query_mode = QueryTaskMode::Tied;
  else if (mode == "table") cw.query_mode = QueryTaskMode::Table;
  else fail(p + ".query_mode", "must be 'prior', 'tied' or 'table'");
  if (cw.query_mode == QueryTaskMode::Table) {
    const json& qt = as_array(need(c, "query_table", p), p + ".query_table");
    for (std::size_t i = 0; i < qt.size(); ++i) {
      Dist r;
      const std::string rp = p + ".query_table[" + std::to_string(i) + "]";
      for (std::size_t k = 0; k < as_array(qt[i], rp).size(); ++k)
        r.push_back(as_num(qt[i][k], rp + "[" + std::to_string(k) + "]"));
      cw.query_table.push_back(std::move(r));
    }
  }
  // partial worlds inherit every key they do not override
  auto derived = [&](const json& patch, const std::string& wp) {
    json full = base_json;
    full.erase("cot");
    full.merge_patch(patch);
    return parse_world(full, wp);
  };
  if (c.contains("step_worlds")) {
    const json& sw = as_array(c["step_worlds"], p + ".step_worlds");
    for (std::size_t i = 0; i < sw.size(); ++i)
      cw.step_worlds.push_back(derived(sw[i], p + ".step_worlds[" + std::to_string(i) + "]"));
  }
  if (c.contains("query_world")) cw.query_world = derived(c["query_world"], p + ".query_world");
  try {
    cw.validate();
  } catch (const Error& e) {
    fail(p, e.what());
  }
  return cw;
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(origin, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Config, path + ": cannot open file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

WorldFile parse_world_file(const std::string& text, const std::string& origin) {
  const json j = parse_json(text, origin);
  WorldFile wf;
  try {
    wf.world = parse_world(j, origin);
    if (j.contains("cot")) wf.cot = parse_cot(j, wf.world, j["cot"], origin + ".cot");
  } catch (const json::exception& e) {
    fail(origin, e.what());
  }
  return wf;
}

WorldFile load_world_file(const std::string& path) { return parse_world_file(read_text_file(path), path); }

PromptFile parse_prompt_file(const std::string& text, const World& w, std::size_t y_max,
                             const std::string& origin) {
  const json j = parse_json(text, origin);
  const std::string& p = origin;
  PromptFile pf;
  try {
    pf.kind = j.contains("kind") ? j["kind"].get<std::string>() : "icl";
    if (pf.kind != "icl" && pf.kind != "cot") fail(p + ".kind", "must be 'icl' or 'cot'");
    const int delim = token_ref(w.vocab, need(j, "delimiter", p), p + ".delimiter");
    const Tokens query = token_list(w.vocab, need(j, "query", p), p + ".query");
    const std::string run_id = j.contains("run_id") ? j["run_id"].get<std::string>() : pf.kind;
    if (j.contains("y_len")) pf.y_len = as_int(j["y_len"], p + ".y_len");
    std::vector<Tokens> ys;
    if (j.contains("y")) {
      pf.y_given = true;
      const json& yj = as_array(j["y"], p + ".y");
      for (std::size_t i = 0; i < yj.size(); ++i) ys.push_back(token_list(w.vocab, yj[i], p + ".y[" + std::to_string(i) + "]"));
    }
    const json& demos = as_array(need(j, "demos", p), p + ".demos");
    if (pf.kind == "icl") {
      pf.icl.run_id = run_id;
      pf.icl.delimiter = delim;
      pf.icl.query = query;
      for (std::size_t i = 0; i < demos.size(); ++i) {
        const std::string dp = p + ".demos[" + std::to_string(i) + "]";
        pf.icl.demos.push_back({token_list(w.vocab, need(demos[i], "x", dp), dp + ".x"),
                                token_list(w.vocab, need(demos[i], "y", dp), dp + ".y")});
      }
      pf.icl.y_set = pf.y_given ? ys : response_set(w, pf.y_len, y_max);
    } else {
      pf.cot.run_id = run_id;
      pf.cot.delimiter = delim;
      pf.cot.query = query;
      const json& sl = as_array(need(j, "step_len", p), p + ".step_len");
      int total = 0;
      for (std::size_t i = 0; i < sl.size(); ++i) {
        pf.cot.step_len.push_back(as_int(sl[i], p + ".step_len[" + std::to_string(i) + "]"));
        total += pf.cot.step_len.back();
      }
      for (std::size_t i = 0; i < demos.size(); ++i) {
        const std::string dp = p + ".demos[" + std::to_string(i) + "]";
        CotDemo d;
        d.x = token_list(w.vocab, need(demos[i], "x", dp), dp + ".x");
        const json& st = as_array(need(demos[i], "y", dp), dp + ".y");
        for (std::size_t k = 0; k < st.size(); ++k)
          d.steps.push_back(token_list(w.vocab, st[k], dp + ".y[" + std::to_string(k) + "]"));
        if (d.steps.size() != sl.size()) fail(dp + ".y", "needs one segment per step");
        pf.cot.demos.push_back(std::move(d));
      }
      pf.y_len = total;
      pf.cot.y_set = pf.y_given ? ys : response_set(w, total, y_max);
    }
  } catch (const json::exception& e) {
    fail(origin, e.what());
  }
  return pf;
}

PromptFile load_prompt_file(const std::string& path, const World& w, std::size_t y_max) {
  return parse_prompt_file(read_text_file(path), w, y_max, path);
}

}  // namespace promptlab
