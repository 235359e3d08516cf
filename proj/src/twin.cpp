#include "segalign/twin.hpp"

#include "segalign/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>

namespace segalign {

using nlohmann::json;
namespace fs = std::filesystem;

Branch branch_from_string(const std::string& s) {
  if (s == "left") return Branch::left;
  if (s == "right") return Branch::right;
  if (s == "concat") return Branch::concat;
  throw std::invalid_argument("unknown branch '" + s + "' (left, right, concat)");
}

std::string to_string(Branch b) {
  switch (b) {
    case Branch::left:
      return "left";
    case Branch::right:
      return "right";
    case Branch::concat:
      return "concat";
  }
  return "right";
}

namespace {

FrozenEncoderSpec branch_spec(const TrainConfig& c, std::uint64_t seed, Eigen::Index in_dim) {
  FrozenEncoderSpec s;
  s.seed = seed;
  s.in_dim = in_dim;
  s.joint_dim = c.twin_joint_dim;
  s.heads = c.text_heads;
  s.max_len = c.max_segments;
  return s;
}

}  // namespace

TwinSystem make_twin_system(const TrainConfig& c, Eigen::Index frame_dim) {
  c.validate();
  const Eigen::Index right_in = c.right_projection == "ffn" ? c.right_dim : c.seg_dim;
  return TwinSystem{c, TwinParams<float>::init(c, frame_dim),
                    FrozenTextEncoder<float>(branch_spec(c, c.text_seed, c.seg_dim)),
                    FrozenTextEncoder<float>(branch_spec(c, c.right_text_seed, right_in))};
}

TwinSystem load_twin_system(const fs::path& checkpoint_file) {
  const auto ck = load_checkpoint(checkpoint_file);
  if (ck.meta.value("kind", "") != "twin") throw CheckpointError(checkpoint_file.string() + ": not a twin checkpoint");
  auto sys = make_twin_system(config_from_json(ck.meta.at("config").dump()), ck.meta.at("frame_dim").get<Eigen::Index>());
  restore_parameters(ck, sys.params.parameters());
  return sys;
}

Mat<float> extract_features(const TwinSystem& s, const Mat<float>& frames, Branch branch) {
  Graph<float> g;
  const auto v = bind(g, s.params, false);
  const auto b = twin_branches(v, s.runtime(), g.leaf_ref(frames));
  switch (branch) {
    case Branch::left:
      return b.left.pooled.value();
    case Branch::right:
      return b.right.pooled.value();
    case Branch::concat: {
      Mat<float> out(1, b.right.pooled.cols() + b.left.pooled.cols());
      out << b.right.pooled.value(), b.left.pooled.value();
      return out;
    }
  }
  return b.right.pooled.value();
}

std::vector<std::pair<std::size_t, std::size_t>> caption_pairs(const Dataset& d, int epoch, std::uint64_t seed) {
  std::map<std::int64_t, std::vector<std::size_t>> captions;
  for (auto i : d.train_utterances()) captions[d.utterances[i].image_id].push_back(i);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [image, caps] : captions) {
    if (caps.size() < 2) continue;
    Rng rng = stream_rng(seed, "pairs", {std::uint64_t(epoch), std::uint64_t(image)});
    auto pool = caps;
    const auto two = sample_without_replacement(pool, 2, rng);
    pairs.emplace_back(two[0], two[1]);
  }
  Rng order = stream_rng(seed, "data", {std::uint64_t(epoch)});
  std::shuffle(pairs.begin(), pairs.end(), order);
  return pairs;
}

TwinFitResult fit_twin(const Dataset& d, const TrainConfig& c, const fs::path& out_dir,
                       std::optional<int> stop_after_epoch) {
  for (const auto& w : validate(d)) spdlog::warn("archive: {}", w);
  TwinSystem sys = make_twin_system(c, d.manifest.frame_dim);
  const auto rt = sys.runtime();
  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.json", std::ios::binary);
    cfg << config_to_json(c) << "\n";
  }
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::binary);
  std::ofstream validation(out_dir / "validation.jsonl", std::ios::binary);
  auto params = sys.params.parameters();
  AdamState<float> adam;
  std::vector<Mat<float>> frames(d.utterances.size());
  for (auto i : d.train_utterances()) frames[i] = d.utterance_frames(i);
  const json config_json = json::parse(config_to_json(c));

  TwinFitResult result;
  std::int64_t step = 0;
  const int last_epoch = stop_after_epoch ? std::min(c.epochs, *stop_after_epoch) : c.epochs;
  for (int epoch = 1; epoch <= last_epoch; ++epoch) {
    const double lr = lr_at_epoch(c, epoch);
    const auto pairs = caption_pairs(d, epoch, c.seed);
    TwinEpochSummary summary;
    summary.epoch = epoch;
    double sum_nfc = 0, sum_twin = 0;
    std::int64_t n_nfc = 0, n_twin = 0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += std::size_t(c.batch_size)) {
      const std::size_t end = std::min(pairs.size(), begin + std::size_t(c.batch_size));
      const LossSet active = loss_schedule(step, epoch, c.nfc_warmup_steps);
      Graph<float> g;
      const auto vars = bind(g, sys.params);
      std::vector<Var<float>> nfc, lefts, rights;
      for (std::size_t b = begin; b < end; ++b) {
        const auto [ua, ub] = pairs[b];
        const std::size_t slot = b - begin;
        if (active.nfc) {
          for (int side = 0; side < 2; ++side) {
            auto encoded = encode_frames(vars.encoder, g.leaf_ref(frames[side == 0 ? ua : ub]));
            if (encoded.rows() < nfc_min_length(c.nfc_negatives)) continue;
            Rng rng = stream_rng(c.seed, "nfc", {std::uint64_t(step), std::uint64_t(2 * slot + std::size_t(side))});
            nfc.push_back(nfc_loss(encoded, c.nfc_negatives, rng));
          }
        }
        if (active.ret && end - begin >= 2) {
          lefts.push_back(twin_branches(vars, rt, g.leaf_ref(frames[ua])).left.joint);
          rights.push_back(twin_branches(vars, rt, g.leaf_ref(frames[ub])).right.joint);
        }
      }
      std::optional<Var<float>> l_nfc, l_twin, total;
      if (!nfc.empty()) l_nfc = detail::mean_of(nfc);
      if (!lefts.empty())
        l_twin = twin_contrastive_loss(concat_rows(std::span<const Var<float>>(lefts)),
                                       concat_rows(std::span<const Var<float>>(rights)), c.tau_ret, c.twin_symmetric);
      for (const auto& t : {l_nfc, l_twin})
        if (t) total = total ? add(*total, *t) : *t;
      if (total && !std::isfinite(total->item()))
        throw TrainingDiverged("non-finite twin loss at step " + std::to_string(step), result.last_checkpoint.string());
      if (total) g.backward(*total);
      std::vector<Mat<float>> grads;
      for (const auto& v : vars.leaves()) grads.push_back(g.grad(v));
      adam_step<float>(params, grads, adam, AdamSettings{lr, c.adam_beta1, c.adam_beta2, c.adam_eps});
      auto val = [](const std::optional<Var<float>>& v) { return v ? json(double(v->item())) : json(nullptr); };
      metrics << json{{"epoch", epoch}, {"step", step}, {"loss_nfc", val(l_nfc)}, {"loss_twin", val(l_twin)}, {"lr", lr}}
                     .dump()
              << "\n";
      if (l_nfc) sum_nfc += l_nfc->item(), ++n_nfc;
      if (l_twin) sum_twin += l_twin->item(), ++n_twin;
      ++step;
      ++summary.steps;
    }
    if (n_nfc) summary.loss_nfc = sum_nfc / double(n_nfc);
    if (n_twin) summary.loss_twin = sum_twin / double(n_twin);
    json meta{{"kind", "twin"}, {"config", config_json}, {"epoch", epoch}, {"step", step},
              {"frame_dim", d.manifest.frame_dim}, {"left_hash", sys.left.weight_hash()},
              {"right_hash", sys.right.weight_hash()}};
    const auto ck = epoch_checkpoint_path(out_dir, epoch);
    save_checkpoint(ck, meta, params, &adam);
    result.last_checkpoint = ck;
    summary.checkpoint = ck.string();
    if (c.validate_each_epoch || epoch == last_epoch) {
      summary.validation = evaluate_semantic(sys, d, Branch::right, c.val_subsample);
      validation << json{{"epoch", epoch}, {"report", json::parse(semantic_json(*summary.validation))}}.dump() << "\n";
    }
    spdlog::info("twin epoch {} steps {} nfc {} twin {} semantic R@1 {}", epoch, summary.steps,
                 summary.loss_nfc ? fmt::format("{:.4f}", *summary.loss_nfc) : "-",
                 summary.loss_twin ? fmt::format("{:.4f}", *summary.loss_twin) : "-",
                 summary.validation ? fmt::format("{:.3f}", summary.validation->recall.r1) : "-");
    result.epochs.push_back(std::move(summary));
  }
  metrics.flush();
  return result;
}

SemanticReport evaluate_semantic(const TwinSystem& s, const Dataset& d, Branch branch, int max_images) {
  const std::int64_t first = d.manifest.num_train_images;
  std::int64_t last = d.manifest.num_images;
  if (max_images > 0) last = std::min(last, first + max_images);
  std::map<std::int64_t, std::vector<std::size_t>> captions;
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    const auto img = d.utterances[i].image_id;
    if (img >= first && img < last) captions[img].push_back(i);
  }
  std::vector<std::size_t> cand, query;
  std::vector<std::int64_t> cand_group, query_group;
  for (const auto& [img, caps] : captions) {
    cand.push_back(caps.front());
    cand_group.push_back(img);
    for (std::size_t k = 1; k < caps.size(); ++k) {
      query.push_back(caps[k]);
      query_group.push_back(img);
    }
  }
  if (cand.empty()) throw std::invalid_argument("evaluate_semantic: no held-out images");
  auto features = [&](const std::vector<std::size_t>& utts) {
    Mat<float> out;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      const Mat<float> f = extract_features(s, d.utterance_frames(utts[i]), branch);
      if (i == 0) out.resize(std::int64_t(utts.size()), f.cols());
      out.row(Eigen::Index(i)) = f;
    }
    return out;
  };
  auto r = semantic_audio_retrieval(features(query), features(cand), query_group, cand_group);
  r.branch = to_string(branch);
  return r;
}

}  // namespace segalign
