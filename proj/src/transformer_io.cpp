#include <cstdio>
#include <cstdlib>

#include "json.hpp"
#include "promptlab/transformer.hpp"

namespace promptlab {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

std::string hex(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double unhex(const json& j) {
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error(ErrorKind::Config, "model: bad float '" + s + "'");
  return v;
}

json mat_json(const Mat& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(hex(m(r, c)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat mat_from(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r * c) throw Error(ErrorKind::Config, "model: matrix size mismatch");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = unhex(data[i * c + k]);
  return m;
}

json vec_json(const Vec& v) { return mat_json(Mat(v)); }
Vec vec_from(const json& j) { return mat_from(j).col(0); }

}  // namespace

std::string dump_model(const MemorizerModel& m) {
  json j;
  j["format_version"] = kFormatVersion;
  j["d"] = m.d;
  j["n"] = m.n;
  j["alpha"] = hex(m.alpha);
  j["vocab_size"] = m.vocab_size;
  j["emission"] = m.emission;
  j["token_emb"] = mat_json(m.token_emb);
  j["P"] = mat_json(m.P);
  j["attention"] = {{"W_O", mat_json(m.attention.W_O)},
                    {"W_V", mat_json(m.attention.W_V)},
                    {"W_K", mat_json(m.attention.W_K)},
                    {"W_Q", mat_json(m.attention.W_Q)},
                    {"mask", mat_json(m.attention.mask)}};
  j["ffn"] = {{"W1", mat_json(m.ffn.W1)},
              {"b1", vec_json(m.ffn.b1)},
              {"W2", mat_json(m.ffn.W2)},
              {"b2", vec_json(m.ffn.b2)},
              {"residual", m.ffn.residual}};
  j["out_map"] = mat_json(m.out_map);
  j["meta"] = {{"scale", m.scale},
               {"kappa", hex(m.kappa)},
               {"log_gamma", hex(m.log_gamma)},
               {"context_gap", hex(m.context_gap)},
               {"train_error", hex(m.train_error)}};
  return j.dump(1);
}

MemorizerModel load_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("model: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw Error(ErrorKind::Config, "model: unsupported format_version");
    MemorizerModel m;
    m.d = j.at("d").get<int>();
    m.n = j.at("n").get<int>();
    m.alpha = unhex(j.at("alpha"));
    m.vocab_size = j.at("vocab_size").get<int>();
    m.emission = j.at("emission").get<std::vector<int>>();
    m.token_emb = mat_from(j.at("token_emb"));
    m.P = mat_from(j.at("P"));
    const auto& a = j.at("attention");
    m.attention.W_O = mat_from(a.at("W_O"));
    m.attention.W_V = mat_from(a.at("W_V"));
    m.attention.W_K = mat_from(a.at("W_K"));
    m.attention.W_Q = mat_from(a.at("W_Q"));
    m.attention.mask = mat_from(a.at("mask"));
    const auto& f = j.at("ffn");
    m.ffn.W1 = mat_from(f.at("W1"));
    m.ffn.b1 = vec_from(f.at("b1"));
    m.ffn.W2 = mat_from(f.at("W2"));
    m.ffn.b2 = vec_from(f.at("b2"));
    m.ffn.residual = f.at("residual").get<bool>();
    m.out_map = mat_from(j.at("out_map"));
    const auto& meta = j.at("meta");
    m.scale = meta.at("scale").get<std::string>();
    m.kappa = unhex(meta.at("kappa"));
    m.log_gamma = unhex(meta.at("log_gamma"));
    m.context_gap = unhex(meta.at("context_gap"));
    m.train_error = unhex(meta.at("train_error"));
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("model: ") + e.what());
  }
}

}  // namespace promptlab
