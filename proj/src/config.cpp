#include "segalign/config.hpp"

#include "segalign/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

namespace segalign {

using nlohmann::json;

namespace {

template <typename F>
void visit_fields(TrainConfig& c, F&& f) {
  f("lr", c.lr);
  f("batch_size", c.batch_size);
  f("lr_decay", c.lr_decay);
  f("lr_decay_every", c.lr_decay_every);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_eps", c.adam_eps);
  f("epochs", c.epochs);
  f("tau_ret", c.tau_ret);
  f("train_temperature", c.train_temperature);
  f("n_neg", c.n_neg);
  f("n_hard_max", c.n_hard_max);
  f("hard_mining", c.hard_mining);
  f("kmeans_k", c.kmeans_k);
  f("kmeans_max_iter", c.kmeans_max_iter);
  f("recompute_clusters", c.recompute_clusters);
  f("normalize_images", c.normalize_images);
  f("nfc_warmup_steps", c.nfc_warmup_steps);
  f("nfc_negatives", c.nfc_negatives);
  f("boundary_threshold", c.boundary_threshold);
  f("max_segments", c.max_segments);
  f("external_boundaries", c.external_boundaries);
  f("head", c.head);
  f("lambda", c.lambda);
  f("tau_vq", c.tau_vq);
  f("normalize_segments", c.normalize_segments);
  f("mask_prob", c.mask_prob);
  f("aux_weight", c.aux_weight);
  f("fenc_hidden", c.fenc_hidden);
  f("fenc_out", c.fenc_out);
  f("senc_filters", c.senc_filters);
  f("seg_dim", c.seg_dim);
  f("text_heads", c.text_heads);
  f("text_seed", c.text_seed);
  f("right_dim", c.right_dim);
  f("right_projection", c.right_projection);
  f("right_text_seed", c.right_text_seed);
  f("twin_joint_dim", c.twin_joint_dim);
  f("twin_symmetric", c.twin_symmetric);
  f("val_subsample", c.val_subsample);
  f("validate_each_epoch", c.validate_each_epoch);
  f("seed", c.seed);
}

void assign(const std::string& key, const json& v, double& field) {
  if (!v.is_number()) throw ConfigError("config." + key + ": expected a number");
  field = v.get<double>();
}
void assign(const std::string& key, const json& v, int& field) {
  if (!v.is_number_integer()) throw ConfigError("config." + key + ": expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw ConfigError("config." + key + ": integer out of range");
  field = static_cast<int>(x);
}
void assign(const std::string& key, const json& v, std::uint64_t& field) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError("config." + key + ": expected a non-negative integer");
  field = v.get<std::uint64_t>();
}
void assign(const std::string& key, const json& v, bool& field) {
  if (!v.is_boolean()) throw ConfigError("config." + key + ": expected a boolean");
  field = v.get<bool>();
}
void assign(const std::string& key, const json& v, std::string& field) {
  if (!v.is_string()) throw ConfigError("config." + key + ": expected a string");
  field = v.get<std::string>();
}

void apply_key(TrainConfig& c, const std::string& key, const json& value) {
  bool found = false;
  visit_fields(c, [&](const char* name, auto& field) {
    if (key != name) return;
    found = true;
    assign(key, value, field);
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

AlignmentHead TrainConfig::alignment_head() const {
  AlignmentHead h;
  h.kind = head_kind_from_string(head);
  h.lambda = lambda;
  h.tau_vq = tau_vq;
  return h;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config." + key + ": " + why); };
  auto positive = [&](const std::string& key, double v) {
    if (!(v > 0.0)) fail(key, "must be > 0");
  };
  positive("lr", lr);
  positive("batch_size", batch_size);
  positive("lr_decay", lr_decay);
  positive("lr_decay_every", lr_decay_every);
  positive("adam_eps", adam_eps);
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0,1)");
  positive("epochs", epochs);
  positive("tau_ret", tau_ret);
  positive("n_neg", n_neg);
  if (n_hard_max < 0) fail("n_hard_max", "must be >= 0");
  if (n_hard_max > n_neg) fail("n_hard_max", "must not exceed n_neg");
  positive("kmeans_k", kmeans_k);
  positive("kmeans_max_iter", kmeans_max_iter);
  if (nfc_warmup_steps < 0) fail("nfc_warmup_steps", "must be >= 0");
  positive("nfc_negatives", nfc_negatives);
  if (!std::isfinite(boundary_threshold)) fail("boundary_threshold", "must be finite");
  positive("max_segments", max_segments);
  if (external_boundaries != "none" && external_boundaries != "ground_truth")
    fail("external_boundaries", "must be 'none' or 'ground_truth'");
  try {
    head_kind_from_string(head);
  } catch (const std::invalid_argument&) {
    fail("head", "must be 'direct', 'regularized' or 'vq'");
  }
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  positive("tau_vq", tau_vq);
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) fail("mask_prob", "must lie in [0,1]");
  if (!(aux_weight >= 0.0)) fail("aux_weight", "must be >= 0");
  positive("fenc_hidden", fenc_hidden);
  positive("fenc_out", fenc_out);
  positive("senc_filters", senc_filters);
  positive("seg_dim", seg_dim);
  positive("text_heads", text_heads);
  if (seg_dim % text_heads != 0) fail("seg_dim", "must be divisible by text_heads");
  positive("right_dim", right_dim);
  if (right_dim % text_heads != 0) fail("right_dim", "must be divisible by text_heads");
  if (right_projection != "ffn" && right_projection != "identity")
    fail("right_projection", "must be 'ffn' or 'identity'");
  if (right_projection == "identity" && right_dim != seg_dim)
    fail("right_projection", "identity requires right_dim == seg_dim");
  positive("twin_joint_dim", twin_joint_dim);
  if (val_subsample < 0) fail("val_subsample", "must be >= 0");
}

TrainConfig config_from_json(const std::string& json_text,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) apply_key(c, key, value);
  for (const auto& [key, value] : overrides) apply_key(c, key, parse_override_value(value));
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), overrides);
}

std::string config_to_json(const TrainConfig& c) {
  json j = json::object();
  TrainConfig copy = c;
  visit_fields(copy, [&](const char* name, auto& field) { j[name] = field; });
  return j.dump(2);
}

std::pair<std::string, std::string> parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

std::string config_digest(const TrainConfig& c) {
  const auto h = fnv1a(json::parse(config_to_json(c)).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double lr_at_epoch(const TrainConfig& c, int epoch) {
  const int decays = std::max(0, epoch - 1) / c.lr_decay_every;
  return c.lr * std::pow(c.lr_decay, decays);
}

}  // namespace segalign
