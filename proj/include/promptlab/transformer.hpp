#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "promptlab/world.hpp"

namespace promptlab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Column-wise softmax; -inf entries get weight 0.
Mat softmax_cols(const Mat& m);

// a^T softmax(a) over the finite entries.
double boltz(const Vec& a);
// boltz(a) = top + offset with offset computed relative to the maximum, so
// that nearby values can be compared without cancellation.
struct BoltzParts {
  double top = 0.0;
  double offset = 0.0;
};
BoltzParts boltz_parts(const Vec& a);

// d x n matrix with every entry of column j (1-indexed) equal to 2 j alpha.
Mat positional_encoder(double alpha, int d, int n);

struct SeparatenessCert {
  bool valid = false;
  double r_min = 0.0, r_max = 0.0, eta = 0.0;  // tight values with strictness margin
  std::string reason;                          // empty when valid
  int seq_a = -1, col_a = -1, seq_b = -1, col_b = -1;  // witness
};

SeparatenessCert check_separateness(const std::vector<Mat>& sequences);

struct SeparatingVector {
  Vec v;
  double u = 0.0, u_prime = 0.0;  // scalar factors (s = 1); u * u' is the score scale
  long draws = 0;
};

// Lemma constant (|V|+1)^4 (pi d / 8) kappa / (eta r_min).
double lemma_score_scale(int vocab_size, int d, double kappa, double eta, double r_min);

// True when both lemma inequalities hold for every triple of `columns`.
bool check_separating_vector(const std::vector<Vec>& columns, const Vec& v, double uu, double kappa);

// Rejection-samples unit vectors (seeded) until the projection band and the
// score-gap condition hold for all token triples.
SeparatingVector find_separating_vector(const std::vector<Vec>& columns, double kappa,
                                        std::uint64_t seed, double eta, double r_min,
                                        long budget = 100000);

struct AttentionParams {
  Mat W_O, W_V, W_K, W_Q;  // d x s, s x d, s x d, s x d
  Mat mask;                // n x n; entry (l, k) is 0 when key l <= query k, else -inf
};

Mat causal_mask(int n);
Mat attention_forward(const AttentionParams& p, const Mat& X);

// Lemma: the exact lemma constant. Tight: smallest scale keeping every score
// gap above kappa. Soft: largest |score| equal to 1 (no saturation).
enum class ScoreScale { Lemma, Tight, Soft };
const char* scale_name(ScoreScale s);

struct ContextualAttention {
  AttentionParams params;
  SeparatenessCert separateness;
  ScoreScale scale = ScoreScale::Lemma;
  double kappa = 0.0;
  double score_scale = 0.0;  // |u u'|
  double r = 0.0;            // r_max + eta/4
  double log_gamma = 0.0;    // lemma gamma, natural log
  double min_gap = 0.0;      // smallest distance between distinct contexts
  double max_norm = 0.0;     // largest output column norm
  long witnesses = 0;
};

// Rank-1 construction; the (r, gamma) certificate is checked pairwise over all
// (sequence, column) contexts. Throws Certification with the witness pair.
ContextualAttention build_contextual_attention(const std::vector<Mat>& sequences, double kappa,
                                               std::uint64_t seed,
                                               ScoreScale scale = ScoreScale::Lemma);

double default_kappa(int n);

struct FfnParams {
  Mat W1;  // r x d
  Vec b1;
  Mat W2;  // d' x r
  Vec b2;
  bool residual = false;
};

Vec ffn_forward(const FfnParams& f, const Vec& x);
FfnParams residual_eliminate(const FfnParams& f);

struct MemorizerModel {
  int d = 0, n = 0;
  double alpha = 1.0;
  Mat token_emb;               // d x |V|
  Mat P;                       // d x n
  AttentionParams attention;
  FfnParams ffn;               // non-residual, d -> |E|
  Mat out_map;                 // |E| x |E|
  std::vector<int> emission;   // vocabulary id of each output coordinate
  int vocab_size = 0;
  // construction record
  std::string scale = "lemma";
  double kappa = 0.0;
  double log_gamma = 0.0;
  double context_gap = 0.0;    // min gap of the scalar context ids
  double train_error = 0.0;    // max sup-norm error over stored histories

  int width() const { return static_cast<int>(ffn.W1.rows()); }
  int depth() const { return 1; }
};

struct MemorizerPair {
  Tokens history;  // starts with SOS
  Dist target;     // over the full vocabulary
};

struct MemorizerOptions {
  double kappa = 0.0;            // <= 0: default_kappa(n)
  std::uint64_t seed = 1;
  bool allow_point_mass = false; // accept delta targets (length-cap rows)
  int projection_draws = 256;
};

Mat encode(const MemorizerModel& m, const Tokens& history);

MemorizerModel build_memorizer(const World& w, const std::vector<MemorizerPair>& pairs,
                               const MemorizerOptions& opt = {});

// Pairs (h, q(.|h)) for every reachable history of the world.
std::vector<MemorizerPair> memorization_pairs(const World& w);

// Distribution over the full vocabulary read at column l(h).
Dist model_forward(const MemorizerModel& m, const Tokens& history);
Dist model_forward(const MemorizerModel& m, const Sequence& history);

std::string dump_model(const MemorizerModel& m);
MemorizerModel load_model(const std::string& json_text);

}  // namespace promptlab
