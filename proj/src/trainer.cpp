#include "segalign/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <map>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace segalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'S', 'G', 'C', 'L', 'I', 'P', '0', '1'};

json opt_json(const std::optional<Var<float>>& v) { return v ? json(double(v->item())) : json(nullptr); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json report_to_json(const RetrievalReport& r) { return json::parse(report_json(r)); }

struct RunningMean {
  double sum = 0;
  std::int64_t n = 0;
  void add(const std::optional<Var<float>>& v) {
    if (!v) return;
    sum += double(v->item());
    ++n;
  }
  std::optional<double> value() const { return n ? std::optional<double>(sum / double(n)) : std::nullopt; }
};

}  // namespace

NegativeSampler::NegativeSampler(std::int64_t pool_size, std::optional<std::vector<int>> cluster_of)
    : pool_size_(pool_size), cluster_of_(std::move(cluster_of)) {
  if (cluster_of_) {
    if (static_cast<std::int64_t>(cluster_of_->size()) != pool_size_)
      throw std::invalid_argument("NegativeSampler: cluster_of has " + std::to_string(cluster_of_->size()) +
                                  " entries for a pool of " + std::to_string(pool_size_));
    int k = 0;
    for (int c : *cluster_of_) k = std::max(k, c + 1);
    members_.resize(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < pool_size_; ++i) members_[static_cast<std::size_t>((*cluster_of_)[i])].push_back(i);
  }
}

std::vector<std::int64_t> NegativeSampler::sample(std::int64_t positive, int n_neg, int n_hard_max, bool hard,
                                                  Rng& rng) const {
  if (n_neg < 0 || n_hard_max < 0) throw std::invalid_argument("sample_negatives: counts must be >= 0");
  if (pool_size_ < std::int64_t(n_neg) + 1)
    throw PoolTooSmall("sample_negatives: pool has " + std::to_string(pool_size_) + " embeddings, needs at least " +
                       std::to_string(n_neg + 1) + " (n_neg + 1)");
  if (positive < 0 || positive >= pool_size_)
    throw std::out_of_range("sample_negatives: positive " + std::to_string(positive) + " outside pool");
  if (hard && !cluster_of_) throw std::invalid_argument("sample_negatives: hard mining needs cluster assignments");

  std::vector<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(n_neg));
  std::vector<char> taken(static_cast<std::size_t>(pool_size_), 0);
  taken[static_cast<std::size_t>(positive)] = 1;
  if (hard) {
    std::vector<std::int64_t> same;
    for (auto i : members_[static_cast<std::size_t>((*cluster_of_)[static_cast<std::size_t>(positive)])])
      if (i != positive) same.push_back(i);
    const auto n_hard = std::min<std::size_t>({same.size(), std::size_t(n_hard_max), std::size_t(n_neg)});
    for (auto i : sample_without_replacement(same, n_hard, rng)) {
      chosen.push_back(i);
      taken[static_cast<std::size_t>(i)] = 1;
    }
  }
  std::vector<std::int64_t> rest;
  rest.reserve(static_cast<std::size_t>(pool_size_));
  for (std::int64_t i = 0; i < pool_size_; ++i)
    if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);
  for (auto i : sample_without_replacement(rest, static_cast<std::size_t>(n_neg) - chosen.size(), rng))
    chosen.push_back(i);
  return chosen;
}

std::vector<std::int64_t> sample_negatives(const EmbeddingPool& pool, std::int64_t positive, int n_neg,
                                           int n_hard_max, Rng& rng, bool hard) {
  NegativeSampler s(pool.size(), hard ? pool.cluster_of : std::nullopt);
  return s.sample(positive, n_neg, n_hard_max, hard, rng);
}

ModelRuntime<float> SpeechSystem::runtime() const {
  ModelRuntime<float> rt;
  rt.text = &text;
  rt.vocab = vocab ? &*vocab : nullptr;
  rt.head = config.alignment_head();
  rt.boundary_threshold = config.boundary_threshold;
  rt.max_segments = config.max_segments;
  rt.normalize_segments = config.normalize_segments;
  return rt;
}

FrozenEncoderSpec text_encoder_spec(const TrainConfig& c, Eigen::Index joint_dim) {
  FrozenEncoderSpec s;
  s.seed = c.text_seed;
  s.in_dim = c.seg_dim;
  s.joint_dim = joint_dim;
  s.heads = c.text_heads;
  s.max_len = c.max_segments;
  return s;
}

SpeechSystem make_system(const TrainConfig& c, const Dataset& d) {
  c.validate();
  std::optional<Vocabulary<float>> vocab;
  const auto head = c.alignment_head();
  if (head.kind != HeadKind::direct) {
    if (!d.vocab) throw ConfigError("config.head: '" + c.head + "' needs vocab.f32 in the archive");
    if (d.vocab->cols() != c.seg_dim)
      throw ConfigError("config.seg_dim: " + std::to_string(c.seg_dim) + " differs from vocab_dim " +
                        std::to_string(d.vocab->cols()));
    vocab = Vocabulary<float>::from(*d.vocab);
  }
  return SpeechSystem{c, SpeechModel<float>::init(c, d.manifest.frame_dim),
                      FrozenTextEncoder<float>(text_encoder_spec(c, d.manifest.image_dim)), std::move(vocab),
                      d.manifest.frame_dim};
}

void save_checkpoint(const fs::path& file, json meta, std::span<const ParamRef<float>> params,
                     const AdamState<float>* adam) {
  json layout = json::array();
  std::int64_t offset = 0;
  for (const auto& p : params) {
    layout.push_back({{"name", p.name}, {"rows", p.value->rows()}, {"cols", p.value->cols()}, {"offset", offset},
                      {"frozen", p.frozen}});
    offset += p.value->size();
  }
  meta["layout"] = layout;
  meta["parameter_floats"] = offset;
  meta["optimizer_state"] = adam != nullptr && !adam->m.empty();
  meta["adam_t"] = adam ? adam->t : 0;
  const std::string text = meta.dump();

  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    auto put = [&](const Mat<float>& m) {
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    };
    for (const auto& p : params) put(*p.value);
    if (meta["optimizer_state"].get<bool>()) {
      for (const auto& m : adam->m) put(m);
      for (const auto& v : adam->v) put(v);
    }
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  fs::rename(tmp, file);
}

Checkpoint load_checkpoint(const fs::path& file) {
  const std::string bytes = read_file(file);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(file.string() + ": not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw CheckpointError(file.string() + ": truncated metadata");
  Checkpoint ck;
  try {
    ck.meta = json::parse(bytes.substr(16, len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(file.string() + ": bad metadata: " + e.what());
  }
  const auto floats = ck.meta.at("parameter_floats").get<std::int64_t>();
  const bool with_adam = ck.meta.value("optimizer_state", false);
  const std::uint64_t expected = 16 + len + std::uint64_t(floats) * sizeof(float) * (with_adam ? 3 : 1);
  if (bytes.size() != expected)
    throw CheckpointError(file.string() + ": blob has " + std::to_string(bytes.size()) + " bytes, layout needs " +
                          std::to_string(expected));
  const char* base = bytes.data() + 16 + len;
  auto take = [&](std::int64_t offset, Eigen::Index r, Eigen::Index c) {
    Mat<float> m(r, c);
    std::memcpy(m.data(), base + offset * sizeof(float), static_cast<std::size_t>(m.size()) * sizeof(float));
    return m;
  };
  std::vector<std::array<std::int64_t, 3>> shapes;
  for (const auto& e : ck.meta.at("layout")) {
    const auto r = e.at("rows").get<Eigen::Index>(), c = e.at("cols").get<Eigen::Index>();
    const auto off = e.at("offset").get<std::int64_t>();
    shapes.push_back({r, c, off});
    ck.tensors.emplace_back(e.at("name").get<std::string>(), take(off, r, c));
  }
  if (with_adam) {
    AdamState<float> st;
    st.t = ck.meta.at("adam_t").get<std::int64_t>();
    for (const auto& s : shapes) st.m.push_back(take(floats + s[2], s[0], s[1]));
    for (const auto& s : shapes) st.v.push_back(take(2 * floats + s[2], s[0], s[1]));
    ck.adam = std::move(st);
  }
  return ck;
}

void restore_parameters(const Checkpoint& ck, std::span<const ParamRef<float>> params) {
  if (ck.tensors.size() != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = ck.tensors[i];
    if (name != params[i].name) throw CheckpointError("checkpoint tensor " + name + " where " + params[i].name + " expected");
    if (m.rows() != params[i].value->rows() || m.cols() != params[i].value->cols())
      throw CheckpointError("checkpoint tensor " + name + " has shape " + to_string(Shape{m.rows(), m.cols()}) +
                            ", model expects " + to_string(Shape{params[i].value->rows(), params[i].value->cols()}));
    *params[i].value = m;
  }
}

SpeechSystem load_system(const fs::path& checkpoint_file, const Dataset& d) {
  const auto ck = load_checkpoint(checkpoint_file);
  if (ck.meta.value("kind", "") != "speech-image")
    throw CheckpointError(checkpoint_file.string() + ": not an image-grounded model checkpoint");
  const auto cfg = config_from_json(ck.meta.at("config").dump());
  auto sys = make_system(cfg, d);
  if (ck.meta.at("frame_dim").get<Eigen::Index>() != d.manifest.frame_dim)
    throw CheckpointError("checkpoint frame_dim differs from the archive's");
  restore_parameters(ck, sys.model.parameters());
  return sys;
}

fs::path epoch_checkpoint_path(const fs::path& out_dir, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return out_dir / "checkpoints" / buf;
}

Starts gt_starts(const UtteranceRecord& u) {
  if (!u.boundaries_gt) throw std::invalid_argument("utterance " + u.id + " has no ground-truth boundaries");
  return Starts(u.boundaries_gt->begin(), u.boundaries_gt->end());
}

FitResult fit(const Dataset& d, const TrainConfig& c, const fs::path& out_dir, const FitOptions& options) {
  for (const auto& w : validate(d)) spdlog::warn("archive: {}", w);
  c.validate();
  const bool use_gt = c.external_boundaries == "ground_truth";
  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.json", std::ios::binary);
    cfg << config_to_json(c) << "\n";
  }

  SpeechSystem sys = make_system(c, d);
  const auto rt = sys.runtime();
  EmbeddingPool pool = make_image_pool(d, c.normalize_images);
  if (pool.matrix.cols() != sys.text.spec().joint_dim)
    throw ConfigError("image_dim " + std::to_string(pool.matrix.cols()) + " differs from the joint dim");
  auto fit_clusters = [&](int epoch) {
    const int k = static_cast<int>(std::min<std::int64_t>(c.kmeans_k, pool.size()));
    const std::uint64_t seed = epoch <= 1 ? c.seed : splitmix64(c.seed ^ std::uint64_t(epoch));
    return NegativeSampler(pool.size(), kmeans_fit(pool.matrix, k, c.kmeans_max_iter, seed).cluster_of);
  };
  NegativeSampler sampler = c.hard_mining ? fit_clusters(1) : NegativeSampler(pool.size());
  if (pool.size() < std::int64_t(c.n_neg) + 1)
    throw PoolTooSmall("train image pool has " + std::to_string(pool.size()) + " embeddings, n_neg=" +
                       std::to_string(c.n_neg) + " needs at least " + std::to_string(c.n_neg + 1));

  auto params = sys.model.parameters();
  AdamState<float> adam;
  int start_epoch = 1;
  std::int64_t step = 0;
  FitResult result;
  if (options.resume) {
    const auto ck = load_checkpoint(*options.resume);
    restore_parameters(ck, params);
    if (ck.adam) adam = *ck.adam;
    start_epoch = ck.meta.at("epoch").get<int>() + 1;
    step = ck.meta.at("step").get<std::int64_t>();
    result.last_checkpoint = *options.resume;
    if (c.hard_mining && c.recompute_clusters && start_epoch > 1) sampler = fit_clusters(start_epoch);
  }

  std::vector<std::size_t> train = d.train_utterances();
  std::vector<Starts> gt(d.utterances.size());
  if (use_gt)
    for (auto i : train) gt[i] = gt_starts(d.utterances[i]);
  std::vector<Mat<float>> frames(d.utterances.size());
  for (auto i : train) frames[i] = d.utterance_frames(i);

  const auto mode = options.resume ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::binary | mode);
  std::ofstream validation(out_dir / "validation.jsonl", std::ios::binary | mode);
  const json config_json = json::parse(config_to_json(c));
  const std::uint64_t text_hash = sys.text.weight_hash();
  const std::uint64_t vocab_hash = sys.vocab ? hash_matrix(sys.vocab->rows) : 0;

  const int last_epoch = options.stop_after_epoch ? std::min(c.epochs, *options.stop_after_epoch) : c.epochs;
  for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    const double lr = lr_at_epoch(c, epoch);
    if (c.hard_mining && c.recompute_clusters && epoch > start_epoch) sampler = fit_clusters(epoch);
    std::vector<std::size_t> order = train;
    Rng data_rng = stream_rng(c.seed, "data", {std::uint64_t(epoch)});
    std::shuffle(order.begin(), order.end(), data_rng);

    RunningMean m_nfc, m_ret, m_reg, m_aux;
    EpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    for (std::size_t begin = 0; begin < order.size(); begin += std::size_t(c.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + std::size_t(c.batch_size));
      const LossSet active = loss_schedule(step, epoch, c.nfc_warmup_steps);
      std::vector<TrainItem<float>> items;
      items.reserve(end - begin);
      for (std::size_t b = begin; b < end; ++b) {
        const auto u = order[b];
        const auto coords = {std::uint64_t(step), std::uint64_t(b - begin)};
        TrainItem<float> it{&frames[u], use_gt ? &gt[u] : nullptr, {}, stream_rng(c.seed, "nfc", coords),
                            stream_rng(c.seed, "masking", coords)};
        if (active.ret) {
          const auto positive = d.utterances[u].image_id;
          Rng neg_rng = stream_rng(c.seed, "negatives", coords);
          const auto negs = sampler.sample(positive, c.n_neg, c.n_hard_max, c.hard_mining, neg_rng);
          it.candidates.resize(1 + std::int64_t(negs.size()), pool.matrix.cols());
          it.candidates.row(0) = pool.matrix.row(positive);
          for (std::size_t n = 0; n < negs.size(); ++n) it.candidates.row(Eigen::Index(n) + 1) = pool.matrix.row(negs[n]);
        }
        items.push_back(std::move(it));
      }

      Graph<float> g;
      const auto vars = bind(g, sys.model);
      const auto terms = batch_loss(g, vars, rt, c, active, items);
      const double total = terms.total ? double(terms.total->item()) : 0.0;
      if (!std::isfinite(total))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                   "; last good checkpoint: " +
                                   (result.last_checkpoint.empty() ? "(none)" : result.last_checkpoint.string()),
                               result.last_checkpoint.string());
      if (terms.total) g.backward(*terms.total);
      std::vector<Mat<float>> grads;
      for (const auto& v : vars.leaves()) grads.push_back(g.grad(v));
      try {
        adam_step<float>(params, grads, adam, AdamSettings{lr, c.adam_beta1, c.adam_beta2, c.adam_eps});
      } catch (const NonFiniteGradient& e) {
        throw TrainingDiverged(std::string(e.what()) + "; last good checkpoint: " +
                                   (result.last_checkpoint.empty() ? "(none)" : result.last_checkpoint.string()),
                               result.last_checkpoint.string());
      }

      metrics << json{{"epoch", epoch},
                      {"step", step},
                      {"loss_nfc", opt_json(terms.nfc)},
                      {"loss_ret", opt_json(terms.ret)},
                      {"loss_reg", opt_json(terms.reg)},
                      {"loss_aux", opt_json(terms.aux)},
                      {"lr", lr}}
                     .dump()
              << "\n";
      m_nfc.add(terms.nfc);
      m_ret.add(terms.ret);
      m_reg.add(terms.reg);
      m_aux.add(terms.aux);
      ++step;
      ++summary.steps;
    }
    metrics.flush();
    summary.loss_nfc = m_nfc.value();
    summary.loss_ret = m_ret.value();
    summary.loss_reg = m_reg.value();
    summary.loss_aux = m_aux.value();

    json meta{{"kind", "speech-image"},
              {"config", config_json},
              {"epoch", epoch},
              {"step", step},
              {"frame_dim", d.manifest.frame_dim},
              {"joint_dim", sys.text.spec().joint_dim},
              {"text_encoder_hash", text_hash},
              {"vocab_hash", vocab_hash}};
    const auto ck = epoch_checkpoint_path(out_dir, epoch);
    save_checkpoint(ck, meta, params, &adam);
    result.last_checkpoint = ck;
    summary.checkpoint = ck.string();

    if (c.validate_each_epoch || epoch == last_epoch) {
      auto report = evaluate_retrieval(sys, d, c.val_subsample);
      report.config_digest = config_digest(c);
      report.label = "epoch " + std::to_string(epoch);
      validation << json{{"epoch", epoch}, {"report", report_to_json(report)}}.dump() << "\n";
      validation.flush();
      summary.validation = report;
    }
    spdlog::info("epoch {} steps {} lr {:.3g} nfc {} ret {} val R@1 {}", epoch, summary.steps, lr,
                 summary.loss_nfc ? fmt::format("{:.4f}", *summary.loss_nfc) : "-",
                 summary.loss_ret ? fmt::format("{:.4f}", *summary.loss_ret) : "-",
                 summary.validation ? fmt::format("{:.3f}", summary.validation->speech_to_image.r1) : "-");
    if (options.on_epoch) options.on_epoch(summary);
    result.epochs.push_back(std::move(summary));
  }
  result.steps = step;
  return result;
}

Extraction extraction_from_string(const std::string& s) {
  if (s == "frame_mean") return Extraction::frame_mean;
  if (s == "segment_mean") return Extraction::segment_mean;
  if (s == "sentence") return Extraction::sentence;
  throw std::invalid_argument("unknown extraction point '" + s + "' (frame_mean, segment_mean, sentence)");
}

std::string to_string(Extraction e) {
  switch (e) {
    case Extraction::frame_mean:
      return "frame_mean";
    case Extraction::segment_mean:
      return "segment_mean";
    case Extraction::sentence:
      return "sentence";
  }
  return "segment_mean";
}

namespace {

UtteranceForward<float> infer(const SpeechSystem& s, const Dataset& d, std::size_t utt, Graph<float>& g,
                              const ModelRuntime<float>& rt) {
  const auto vars = bind(g, s.model.encoder, false);
  std::optional<Starts> ext;
  if (s.config.external_boundaries == "ground_truth") ext = gt_starts(d.utterances.at(utt));
  return forward_utterance(vars, rt, g.leaf(Mat<float>(d.utterance_frames(utt))), ext ? &*ext : nullptr);
}

}  // namespace

Mat<float> embed_utterances(const SpeechSystem& s, const Dataset& d, const std::vector<std::size_t>& utts) {
  const auto rt = s.runtime();
  Mat<float> out(std::int64_t(utts.size()), s.text.spec().joint_dim);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    Graph<float> g;
    out.row(Eigen::Index(i)) = infer(s, d, utts[i], g, rt).text.joint.value();
  }
  return out;
}

Mat<float> utterance_representation(const SpeechSystem& s, const Dataset& d, std::size_t utt, Extraction e) {
  const auto rt = s.runtime();
  Graph<float> g;
  const auto f = infer(s, d, utt, g, rt);
  switch (e) {
    case Extraction::frame_mean:
      return f.encoded.value().colwise().mean();
    case Extraction::segment_mean:
      return f.segments.value().colwise().mean();
    case Extraction::sentence:
      return f.text.joint.value();
  }
  return f.segments.value().colwise().mean();
}

Starts segment_utterance(const SpeechSystem& s, const Dataset& d, std::size_t utt) {
  const auto rt = s.runtime();
  Graph<float> g;
  return infer(s, d, utt, g, rt).starts;
}

RetrievalReport evaluate_retrieval(const SpeechSystem& s, const Dataset& d, int max_images) {
  const std::int64_t first = d.manifest.num_train_images;
  std::int64_t last = d.manifest.num_images;
  if (max_images > 0) last = std::min(last, first + max_images);
  if (last <= first) throw std::invalid_argument("evaluate_retrieval: no held-out images");
  std::vector<std::size_t> utts;
  std::vector<std::int64_t> gold;
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    const auto img = d.utterances[i].image_id;
    if (img >= first && img < last) {
      utts.push_back(i);
      gold.push_back(img - first);
    }
  }
  Mat<float> images = d.images.middleRows(first, last - first);
  auto report = recall_at_k(embed_utterances(s, d, utts), images, gold);
  report.config_digest = config_digest(s.config);
  return report;
}

SimiReport eval_simi(const Dataset& d, const std::function<Mat<float>(std::size_t)>& representation,
                     const std::string& extraction_point) {
  if (d.simi.empty()) throw std::invalid_argument("eval_simi: archive has no similarity pairs");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_split;
  std::map<std::size_t, Mat<double>> cache;
  auto rep = [&](const std::string& id) -> const Mat<double>& {
    const auto idx = d.find_utterance(id);
    if (!idx) throw std::invalid_argument("eval_simi: utterance '" + id + "' not in archive");
    auto it = cache.find(*idx);
    if (it == cache.end()) it = cache.emplace(*idx, representation(*idx).cast<double>()).first;
    return it->second;
  };
  for (const auto& p : d.simi) {
    const auto& a = rep(p.utt_a);
    const auto& b = rep(p.utt_b);
    const double na = a.norm(), nb = b.norm();
    double cos = na > 0 && nb > 0 ? a.row(0).dot(b.row(0)) / (na * nb) : 0.0;
    if (&a == &b && na > 0) cos = 1.0;
    auto& [model, human] = by_split[p.split];
    model.push_back(cos);
    human.push_back(p.score);
  }
  SimiReport r;
  r.extraction_point = extraction_point;
  r.num_pairs = std::int64_t(d.simi.size());
  for (const auto& [split, xy] : by_split) {
    const double rho = 100.0 * spearman(xy.first, xy.second);
    if (split == "dev")
      r.dev_synthetic = rho;
    else if (split == "test")
      r.test_synthetic = rho;
    else
      throw std::invalid_argument("eval_simi: unknown split '" + split + "'");
  }
  return r;
}

}  // namespace segalign
