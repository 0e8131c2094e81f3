#include "chunkrag/scorer.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.h"
#include "chunkrag/parallel.h"

namespace chunkrag {
namespace {

constexpr char kCheckpointMagic[8] = {'B', 'M', 'R', 'A', 'G', 'S', 'C', 'R'};
constexpr double kNormFloor = 1e-12;

// dL/ds_j for the softmax output P given dL/dP.
std::vector<double> softmax_backward(std::span<const double> p,
                                     std::span<const double> dl_dp, double eta) {
  double inner = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) inner += p[k] * dl_dp[k];
  std::vector<double> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (dl_dp[j] - inner) / eta;
  return g;
}

std::vector<double> normalized_supervision(std::span<const double> plm) {
  double total = 0.0;
  for (double v : plm) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw DegenerateSupervision("LM likelihoods must be finite and non-negative");
    }
    total += v;
  }
  if (total <= 0.0) throw DegenerateSupervision("all LM likelihoods are zero");
  std::vector<double> q(plm.begin(), plm.end());
  for (auto& v : q) v /= total;
  return q;
}

}  // namespace

ScorerParams ScorerParams::identity(std::size_t dim, double eta) {
  return ScorerParams{Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                static_cast<Eigen::Index>(dim)),
                      eta};
}

void ScorerParams::validate() const {
  if (projection.rows() == 0 || projection.rows() != projection.cols()) {
    throw ConfigError("scorer projection must be a non-empty square matrix");
  }
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (!projection.allFinite()) throw NumericalInstability("projection has non-finite entries");
}

std::string loss_mode_name(LossMode mode) {
  return mode == LossMode::kFullKl ? "full-kl" : "max-absdiff";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "full-kl") return LossMode::kFullKl;
  if (name == "max-absdiff") return LossMode::kMaxAbsDiff;
  throw ConfigError("unknown loss mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

Eigen::VectorXd to_vector(const Embedding& e) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(e.dim()));
  for (std::size_t i = 0; i < e.dim(); ++i) v[static_cast<Eigen::Index>(i)] = e.values[i];
  return v;
}

Eigen::MatrixXd to_matrix(std::span<const Embedding> docs) {
  if (docs.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(docs[0].dim()),
                    static_cast<Eigen::Index>(docs.size()));
  for (std::size_t j = 0; j < docs.size(); ++j) {
    if (docs[j].dim() != docs[0].dim()) {
      throw DimensionMismatch("document embeddings have mixed dims");
    }
    m.col(static_cast<Eigen::Index>(j)) = to_vector(docs[j]);
  }
  return m;
}

std::vector<double> column_cosines(const Eigen::VectorXd& u, const Eigen::MatrixXd& w) {
  const double nu = std::max(u.norm(), kNormFloor);
  std::vector<double> sims(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double nw = std::max(w.col(j).norm(), kNormFloor);
    sims[static_cast<std::size_t>(j)] = u.dot(w.col(j)) / (nu * nw);
  }
  return sims;
}

std::vector<double> projected_similarities(const Eigen::MatrixXd& projection,
                                           const Eigen::VectorXd& x,
                                           const Eigen::MatrixXd& docs) {
  if (x.size() != projection.cols() || docs.rows() != projection.cols()) {
    throw DimensionMismatch("scorer dim " + std::to_string(projection.cols()) +
                            " does not match input dims");
  }
  return column_cosines(projection * x, projection * docs);
}

std::vector<double> softmax(std::span<const double> sims, double eta) {
  if (sims.empty()) return {};
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> p(sims.size());
  double z = 0.0;
  for (std::size_t j = 0; j < sims.size(); ++j) {
    p[j] = std::exp((sims[j] - mx) / eta);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::vector<double> score_documents(const Embedding& x_emb,
                                    std::span<const Embedding> doc_embs,
                                    const ScorerParams& params) {
  if (doc_embs.empty()) throw EmptyRetrieval("no documents to score");
  if (x_emb.dim() != params.dim()) {
    throw DimensionMismatch("input dim " + std::to_string(x_emb.dim()) +
                            " vs scorer dim " + std::to_string(params.dim()));
  }
  const auto sims =
      projected_similarities(params.projection, to_vector(x_emb), to_matrix(doc_embs));
  return softmax(sims, params.eta);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[best]) best = j;
  }
  return best;
}

double loss(std::span<const double> pt, std::span<const double> plm, LossMode mode) {
  if (pt.empty() || pt.size() != plm.size()) {
    throw DimensionMismatch("loss needs equal-length, non-empty vectors");
  }
  if (mode == LossMode::kMaxAbsDiff) {
    return std::abs(*std::max_element(pt.begin(), pt.end()) -
                    *std::max_element(plm.begin(), plm.end()));
  }
  const auto q = normalized_supervision(plm);
  double kl = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (q[j] > 0.0) kl += q[j] * (std::log(q[j]) - std::log(pt[j]));
  }
  return std::max(0.0, kl);
}

LossGradient loss_and_gradient(const ScorerParams& params, const Eigen::VectorXd& x,
                               const Eigen::MatrixXd& docs, std::span<const double> plm,
                               LossMode mode) {
  const auto n = static_cast<std::size_t>(docs.cols());
  if (n == 0 || plm.size() != n) {
    throw DimensionMismatch("likelihoods do not match the document count");
  }
  const Eigen::MatrixXd& W = params.projection;
  const Eigen::VectorXd u = W * x;
  const Eigen::MatrixXd w = W * docs;
  const double nu = std::max(u.norm(), kNormFloor);
  const auto sims = column_cosines(u, w);
  std::vector<double> nws(n);
  for (std::size_t j = 0; j < n; ++j) {
    nws[j] = std::max(w.col(static_cast<Eigen::Index>(j)).norm(), kNormFloor);
  }
  const auto p = softmax(sims, params.eta);

  LossGradient out;
  std::vector<double> g;  // dL/ds
  if (mode == LossMode::kMaxAbsDiff) {
    const std::size_t top = argmax(p);
    const double diff = p[top] - *std::max_element(plm.begin(), plm.end());
    out.loss = std::abs(diff);
    std::vector<double> dl_dp(n, 0.0);
    dl_dp[top] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    g = softmax_backward(p, dl_dp, params.eta);
  } else {
    const auto q = normalized_supervision(plm);
    out.loss = loss(p, plm, mode);
    g.resize(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = (p[j] - q[j]) / params.eta;
  }

  // s_j = u.w_j / (|u||w_j|), u = W x, w_j = W d_j.
  Eigen::VectorXd dl_du = Eigen::VectorXd::Zero(u.size());
  Eigen::MatrixXd dl_dw(w.rows(), w.cols());
  for (std::size_t j = 0; j < n; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    const double inv = 1.0 / (nu * nws[j]);
    dl_du += g[j] * (w.col(c) * inv - sims[j] * u / (nu * nu));
    dl_dw.col(c) = g[j] * (u * inv - sims[j] * w.col(c) / (nws[j] * nws[j]));
  }
  out.grad = dl_du * x.transpose() + dl_dw * docs.transpose();
  return out;
}

double LikelihoodResult::best() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

LikelihoodResult lm_likelihoods(const SentenceRecord& x,
                                std::span<const DocumentCandidate> docs,
                                std::string_view y, const PromptTemplate& tmpl,
                                LmBackend& llm) {
  if (normalize_surface(y).empty()) throw InvalidPrompt("ground truth output is empty");
  LikelihoodResult out;
  out.values.assign(docs.size(), 0.0);
  std::vector<char> overflow(docs.size(), 0);
  parallel_for(docs.size(), llm.config().max_concurrent_requests, [&](std::size_t j) {
    const std::string prompt = assemble_prompt(tmpl, docs[j], x);
    try {
      out.values[j] = llm.score_continuation(prompt, y);
    } catch (const ContextOverflow&) {
      overflow[j] = 1;
    }
  });
  out.overflowed.assign(overflow.begin(), overflow.end());
  return out;
}

TrainResult train_scorer(std::span<const TrainingExample> examples,
                         const ScorerParams& init, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  TrainResult result{init, {}};
  if (cfg.epochs == 0) return result;
  if (examples.empty()) throw EmptyDataset("no training examples for the scorer");

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  const auto dim = static_cast<Eigen::Index>(init.dim());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(dim, dim);
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = examples[order[k]];
        auto lg = loss_and_gradient(result.params, ex.x, ex.docs, ex.plm, cfg.loss_mode);
        batch_loss += lg.loss;
        grad += lg.grad;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      grad *= scale;
      if (!grad.allFinite() || !std::isfinite(batch_loss)) {
        throw NumericalInstability("non-finite gradient in epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) +
                                   " (first example " + examples[order[begin]].id + ")");
      }
      result.params.projection -= cfg.learning_rate * grad;
      epoch_loss += batch_loss;
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

std::size_t select_document(const Embedding& x_emb, std::span<const Embedding> doc_embs,
                            const ScorerParams& params, bool raw_cosine) {
  if (doc_embs.empty()) throw EmptyRetrieval("no documents to select from");
  if (raw_cosine) return argmax(column_cosines(to_vector(x_emb), to_matrix(doc_embs)));
  if (x_emb.dim() != params.dim()) {
    throw DimensionMismatch("input dim " + std::to_string(x_emb.dim()) +
                            " vs scorer dim " + std::to_string(params.dim()));
  }
  // Softmax is monotone, so the argmax of the similarities is the argmax of
  // P_T for every eta.
  return argmax(projected_similarities(params.projection, to_vector(x_emb),
                                       to_matrix(doc_embs)));
}

std::string ScorerCheckpoint::serialize() const {
  params.validate();
  nlohmann::json header{{"dim", params.dim()},
                        {"eta", params.eta},
                        {"loss_mode", loss_mode_name(loss_mode)},
                        {"embedder_fingerprint", embedder_fingerprint}};
  const std::string h = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u32(out, static_cast<std::uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (Eigen::Index r = 0; r < params.projection.rows(); ++r) {
    for (Eigen::Index c = 0; c < params.projection.cols(); ++c) {
      io::write_f64(out, params.projection(r, c));
    }
  }
  return out.str();
}

ScorerCheckpoint ScorerCheckpoint::deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError("not a scorer checkpoint (bad magic)");
  }
  const std::uint32_t len = io::read_u32(in);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_string(in, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scorer checkpoint header: ") + e.what());
  }
  ScorerCheckpoint ck;
  const auto dim = header.at("dim").get<Eigen::Index>();
  ck.params.eta = header.at("eta").get<double>();
  ck.loss_mode = parse_loss_mode(header.at("loss_mode").get<std::string>());
  ck.embedder_fingerprint = header.at("embedder_fingerprint").get<std::string>();
  ck.params.projection.resize(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) ck.params.projection(r, c) = io::read_f64(in);
  }
  ck.params.validate();
  return ck;
}

void ScorerCheckpoint::save(const std::string& path) const {
  io::write_file_atomic(path, serialize());
}

ScorerCheckpoint ScorerCheckpoint::load(const std::string& path) {
  return deserialize(io::read_file(path));
}

std::string loss_trace_csv(std::span<const double> trace) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) out << e + 1 << "," << trace[e] << "\n";
  return out.str();
}

}  // namespace chunkrag
