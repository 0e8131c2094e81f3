#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chunkrag/embedding.h"
#include "chunkrag/extraction.h"
#include "chunkrag/llm.h"
#include "chunkrag/retrieval.h"

namespace chunkrag {

// Trainable chunk scorer: sim(x, d) = cos(W x, W d), P_T = softmax(sim / eta).
struct ScorerParams {
  Eigen::MatrixXd projection;
  double eta = 0.1;

  std::size_t dim() const { return static_cast<std::size_t>(projection.rows()); }
  static ScorerParams identity(std::size_t dim, double eta = 0.1);
  void validate() const;
};

enum class LossMode { kMaxAbsDiff, kFullKl };

std::string loss_mode_name(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

struct TrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::kMaxAbsDiff;

  void validate() const;
};

Eigen::VectorXd to_vector(const Embedding& e);
// Columns are the document embeddings.
Eigen::MatrixXd to_matrix(std::span<const Embedding> docs);

// cos(u, w_j) for every column w_j.
std::vector<double> column_cosines(const Eigen::VectorXd& u, const Eigen::MatrixXd& w);
std::vector<double> projected_similarities(const Eigen::MatrixXd& projection,
                                           const Eigen::VectorXd& x,
                                           const Eigen::MatrixXd& docs);
// Max-subtracted softmax of sims / eta.
std::vector<double> softmax(std::span<const double> sims, double eta);

std::vector<double> score_documents(const Embedding& x_emb,
                                    std::span<const Embedding> doc_embs,
                                    const ScorerParams& params);

// Max-abs-diff mode: |max(pt) - max(plm)|. Full-KL mode: KL(plm / sum(plm) || pt).
double loss(std::span<const double> pt, std::span<const double> plm, LossMode mode);

struct LossGradient {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // dL/dW
};

LossGradient loss_and_gradient(const ScorerParams& params, const Eigen::VectorXd& x,
                               const Eigen::MatrixXd& docs, std::span<const double> plm,
                               LossMode mode);

struct LikelihoodResult {
  std::vector<double> values;     // P_LLM(y | d_j, x)
  std::vector<bool> overflowed;   // documents that hit the context limit
  double best() const;            // P_LLM(d | x, y): the maximum
};

// Scores the gold output y under instruction + d_j + x for every candidate.
LikelihoodResult lm_likelihoods(const SentenceRecord& x,
                                std::span<const DocumentCandidate> docs,
                                std::string_view y, const PromptTemplate& tmpl,
                                LmBackend& llm);

// Frozen per-sentence supervision: embeddings do not change during training.
struct TrainingExample {
  std::string id;
  Eigen::VectorXd x;
  Eigen::MatrixXd docs;
  std::vector<double> plm;
};

struct TrainResult {
  ScorerParams params;
  std::vector<double> loss_trace;  // mean per-sentence loss of each epoch
};

// Seeded shuffle, |B|-sized batches, plain gradient descent on W.
TrainResult train_scorer(std::span<const TrainingExample> examples,
                         const ScorerParams& init, const TrainConfig& cfg);

std::size_t argmax(std::span<const double> values);

// Index of the highest-scoring candidate, ties to the lowest index. With
// `raw_cosine` the projection is ignored.
std::size_t select_document(const Embedding& x_emb, std::span<const Embedding> doc_embs,
                            const ScorerParams& params, bool raw_cosine = false);

struct ScorerCheckpoint {
  ScorerParams params;
  LossMode loss_mode = LossMode::kMaxAbsDiff;
  std::string embedder_fingerprint;

  // "BMRAGSCR" | u32 header length | JSON {dim, eta, loss_mode,
  // embedder_fingerprint} | dim*dim f64 row-major, little-endian.
  std::string serialize() const;
  static ScorerCheckpoint deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static ScorerCheckpoint load(const std::string& path);
};

std::string loss_trace_csv(std::span<const double> trace);

}  // namespace chunkrag
