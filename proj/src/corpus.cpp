#include "segalign/corpus.hpp"

#include "segalign/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace segalign {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ArchiveError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot write " + file.string());
  out << text;
  if (!out) throw ArchiveError("write failed: " + file.string());
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

json manifest_to_json(const Manifest& m) {
  return json{{"version", m.version},
              {"frame_dim", m.frame_dim},
              {"image_dim", m.image_dim},
              {"vocab_dim", m.vocab_dim},
              {"num_images", m.num_images},
              {"num_utterances", m.num_utterances},
              {"vocab_size", m.vocab_size},
              {"frame_rate_hz", m.frame_rate_hz},
              {"total_frames", m.total_frames},
              {"num_train_images", m.num_train_images},
              {"images_normalized", m.images_normalized}};
}

Manifest manifest_from_json(const json& j) {
  const std::string w = "manifest.json";
  Manifest m;
  m.version = get_field<int>(j, "version", w);
  m.frame_dim = get_field<std::int64_t>(j, "frame_dim", w);
  m.image_dim = get_field<std::int64_t>(j, "image_dim", w);
  m.vocab_dim = j.value("vocab_dim", std::int64_t{0});
  m.num_images = get_field<std::int64_t>(j, "num_images", w);
  m.num_utterances = get_field<std::int64_t>(j, "num_utterances", w);
  m.vocab_size = j.value("vocab_size", std::int64_t{0});
  m.frame_rate_hz = j.value("frame_rate_hz", std::int64_t{50});
  m.total_frames = get_field<std::int64_t>(j, "total_frames", w);
  m.num_train_images = j.value("num_train_images", m.num_images);
  m.images_normalized = j.value("images_normalized", false);
  return m;
}

json utterance_to_json(const UtteranceRecord& u) {
  json j{{"id", u.id}, {"image_id", u.image_id}, {"offset_frames", u.offset_frames}, {"num_frames", u.num_frames}};
  if (u.boundaries_gt) j["boundaries_gt"] = *u.boundaries_gt;
  if (u.speaker) j["speaker"] = *u.speaker;
  return j;
}

UtteranceRecord utterance_from_json(const json& j, std::size_t index) {
  const std::string w = "utterances.json[" + std::to_string(index) + "]";
  UtteranceRecord u;
  u.id = get_field<std::string>(j, "id", w);
  u.image_id = get_field<std::int64_t>(j, "image_id", w);
  u.offset_frames = get_field<std::int64_t>(j, "offset_frames", w);
  u.num_frames = get_field<std::int64_t>(j, "num_frames", w);
  if (j.contains("boundaries_gt")) u.boundaries_gt = get_field<std::vector<std::int64_t>>(j, "boundaries_gt", w);
  if (j.contains("speaker")) u.speaker = get_field<std::string>(j, "speaker", w);
  return u;
}

}  // namespace

std::optional<std::size_t> Dataset::find_utterance(const std::string& id) const {
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].id == id) return i;
  return std::nullopt;
}

std::vector<std::size_t> Dataset::train_utterances() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (is_train_image(utterances[i].image_id)) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::test_utterances() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto img = utterances[i].image_id;
    if (img >= manifest.num_train_images && img < manifest.num_images) out.push_back(i);
  }
  return out;
}

std::vector<std::string> validate(const Dataset& d) {
  const Manifest& m = d.manifest;
  std::vector<std::string> warnings;
  auto fail = [](const std::string& msg) { throw ValidationError(msg); };
  if (m.version != 1) fail("manifest.version: expected 1, got " + std::to_string(m.version));
  if (m.frame_dim <= 0) fail("manifest.frame_dim must be > 0");
  if (m.image_dim <= 0) fail("manifest.image_dim must be > 0");
  if (m.num_train_images < 0 || m.num_train_images > m.num_images)
    fail("manifest.num_train_images out of range [0, num_images]");
  if (d.images.rows() != m.num_images || d.images.cols() != m.image_dim)
    fail("images: expected " + std::to_string(m.num_images) + "x" + std::to_string(m.image_dim) + " (manifest.num_images, manifest.image_dim)");
  if (d.frames.rows() != m.total_frames || d.frames.cols() != m.frame_dim)
    fail("frames: expected " + std::to_string(m.total_frames) + "x" + std::to_string(m.frame_dim) + " (manifest.total_frames, manifest.frame_dim)");
  if (static_cast<std::int64_t>(d.utterances.size()) != m.num_utterances)
    fail("manifest.num_utterances: " + std::to_string(m.num_utterances) + " but utterances.json holds " +
         std::to_string(d.utterances.size()));
  if (d.vocab) {
    if (m.vocab_size < 2 || m.vocab_dim <= 0) fail("manifest.vocab_size/vocab_dim must be set when vocab.f32 exists");
    if (d.vocab->rows() != m.vocab_size || d.vocab->cols() != m.vocab_dim)
      fail("vocab: expected " + std::to_string(m.vocab_size) + "x" + std::to_string(m.vocab_dim));
  } else if (m.vocab_size != 0) {
    fail("manifest.vocab_size is " + std::to_string(m.vocab_size) + " but vocab.f32 is absent");
  }
  std::vector<std::string> ids;
  ids.reserve(d.utterances.size());
  for (const auto& u : d.utterances) {
    const std::string w = "utterance '" + u.id + "'";
    if (u.num_frames < 1) fail(w + ": num_frames must be >= 1");
    if (u.offset_frames < 0 || u.offset_frames + u.num_frames > m.total_frames)
      fail(w + ": offset_frames + num_frames exceeds total_frames");
    if (u.image_id < -1 || u.image_id >= m.num_images) fail(w + ": image_id out of range");
    if (u.boundaries_gt) {
      const auto& b = *u.boundaries_gt;
      if (b.empty() || b.front() != 0) fail(w + ": boundaries_gt must start with 0");
      for (std::size_t i = 1; i < b.size(); ++i)
        if (b[i] <= b[i - 1]) fail(w + ": boundaries_gt not strictly increasing");
      if (b.back() >= u.num_frames) fail(w + ": boundaries_gt beyond num_frames");
    }
    ids.push_back(u.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail("utterances.json: duplicate utterance id");
  for (const auto& p : d.simi) {
    if (!std::binary_search(ids.begin(), ids.end(), p.utt_a)) fail("simi.json: unknown utterance '" + p.utt_a + "'");
    if (!std::binary_search(ids.begin(), ids.end(), p.utt_b)) fail("simi.json: unknown utterance '" + p.utt_b + "'");
    if (!(p.score >= 0.0 && p.score <= 10.0)) fail("simi.json: score outside [0,10]");
    if (p.split != "dev" && p.split != "test") fail("simi.json: split must be 'dev' or 'test'");
  }
  if (m.images_normalized) {
    for (Eigen::Index i = 0; i < d.images.rows(); ++i) {
      const double n = d.images.row(i).cast<double>().norm();
      if (std::abs(n - 1.0) > 1e-5) {
        warnings.push_back("image " + std::to_string(i) + " flagged normalized but has norm " + std::to_string(n));
        break;
      }
    }
  }
  return warnings;
}

void write_f32(const fs::path& file, const Mat<float>& m) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) throw ArchiveError("write failed: " + file.string());
}

Mat<float> read_f32(const fs::path& file, std::int64_t rows, std::int64_t cols) {
  std::error_code ec;
  const auto actual = fs::file_size(file, ec);
  if (ec) throw ArchiveError("cannot stat " + file.string());
  const auto expected = static_cast<std::uintmax_t>(rows) * static_cast<std::uintmax_t>(cols) * sizeof(float);
  if (actual != expected)
    throw ArchiveError(file.filename().string() + ": size mismatch, expected " + std::to_string(expected) +
                       " bytes, found " + std::to_string(actual));
  Mat<float> m(rows, cols);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ArchiveError("cannot open " + file.string());
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!in) throw ArchiveError("short read: " + file.string());
  return m;
}

void write_archive(const Dataset& d, const fs::path& dir) {
  validate(d);
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", manifest_to_json(d.manifest).dump(2) + "\n");
  write_f32(dir / "images.f32", d.images);
  write_f32(dir / "frames.f32", d.frames);
  json utts = json::array();
  for (const auto& u : d.utterances) utts.push_back(utterance_to_json(u));
  write_text_file(dir / "utterances.json", utts.dump(1) + "\n");
  if (d.vocab) {
    write_f32(dir / "vocab.f32", *d.vocab);
  } else {
    fs::remove(dir / "vocab.f32");
  }
  if (!d.simi.empty()) {
    json pairs = json::array();
    for (const auto& p : d.simi)
      pairs.push_back({{"utt_a", p.utt_a}, {"utt_b", p.utt_b}, {"score", p.score}, {"split", p.split}});
    write_text_file(dir / "simi.json", pairs.dump(1) + "\n");
  } else {
    fs::remove(dir / "simi.json");
  }
}

Dataset read_archive(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ArchiveError("missing " + (dir / "manifest.json").string());
  Dataset d;
  d.manifest = manifest_from_json(read_json_file(dir / "manifest.json"));
  const Manifest& m = d.manifest;
  if (m.version != 1) throw ValidationError("manifest.version: expected 1, got " + std::to_string(m.version));
  if (m.frame_dim <= 0 || m.image_dim <= 0 || m.num_images < 0 || m.total_frames < 0)
    throw ValidationError("manifest: dims and counts must be positive");
  d.images = read_f32(dir / "images.f32", m.num_images, m.image_dim);
  d.frames = read_f32(dir / "frames.f32", m.total_frames, m.frame_dim);
  const json utts = read_json_file(dir / "utterances.json");
  if (!utts.is_array()) throw ValidationError("utterances.json: expected an array");
  for (std::size_t i = 0; i < utts.size(); ++i) d.utterances.push_back(utterance_from_json(utts[i], i));
  if (fs::exists(dir / "vocab.f32")) {
    if (m.vocab_size <= 0 || m.vocab_dim <= 0)
      throw ValidationError("vocab.f32 present but manifest.vocab_size/vocab_dim are 0");
    d.vocab = read_f32(dir / "vocab.f32", m.vocab_size, m.vocab_dim);
  }
  if (fs::exists(dir / "simi.json")) {
    const json pairs = read_json_file(dir / "simi.json");
    if (!pairs.is_array()) throw ValidationError("simi.json: expected an array");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string w = "simi.json[" + std::to_string(i) + "]";
      SimiPair p;
      p.utt_a = get_field<std::string>(pairs[i], "utt_a", w);
      p.utt_b = get_field<std::string>(pairs[i], "utt_b", w);
      p.score = get_field<double>(pairs[i], "score", w);
      p.split = pairs[i].value("split", std::string("dev"));
      d.simi.push_back(std::move(p));
    }
  }
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void GenConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("gen config: " + msg); };
  if (num_concepts < 2) fail("num_concepts must be >= 2");
  if (concept_dim < 1 || frame_dim < 1 || image_dim < 1) fail("dims must be >= 1");
  if (num_images < 1) fail("num_images must be >= 1");
  if (num_train_images < 0 || num_train_images > num_images) fail("num_train_images must lie in [0, num_images]");
  if (captions_per_image < 1) fail("captions_per_image must be >= 1");
  if (concepts_per_caption.first < 1 || concepts_per_caption.first > concepts_per_caption.second)
    fail("concepts_per_caption range is empty");
  if (concepts_per_caption.second > num_concepts) fail("concepts_per_caption exceeds num_concepts");
  if (frames_per_concept.first < 1 || frames_per_concept.first > frames_per_concept.second)
    fail("frames_per_concept range is empty");
  if (!(frame_noise >= 0.0)) fail("frame_noise must be >= 0");
  if (!(semantic_weight >= 0.0 && semantic_weight <= 1.0)) fail("semantic_weight must lie in [0,1]");
  if (simi_pairs < 0 || simi_pairs > num_concepts * (num_concepts - 1) / 2) fail("simi_pairs out of range");
  if (vocab_size < 0 || vocab_size == 1) fail("vocab_size must be 0 or >= 2");
  if (vocab_size > 0 && vocab_dim < 1) fail("vocab_dim must be >= 1");
}

namespace {

const char* const kGenKeys[] = {"num_concepts",     "concept_dim",        "frame_dim",          "image_dim",
                                "num_images",       "num_train_images",   "captions_per_image", "concepts_per_caption",
                                "frames_per_concept", "frame_noise",      "semantic_weight",    "simi_pairs",
                                "vocab_size",       "vocab_dim",          "frame_rate_hz"};

}  // namespace

GenConfig gen_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("gen config: expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(kGenKeys), std::end(kGenKeys), key) == std::end(kGenKeys))
      throw ConfigError("gen config: unknown key '" + key + "'");
  GenConfig c;
  auto take = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("gen config: type mismatch at '") + key + "'");
    }
  };
  take("num_concepts", c.num_concepts);
  take("concept_dim", c.concept_dim);
  take("frame_dim", c.frame_dim);
  take("image_dim", c.image_dim);
  take("num_images", c.num_images);
  bool explicit_train = j.contains("num_train_images");
  take("num_train_images", c.num_train_images);
  if (!explicit_train) c.num_train_images = std::min(c.num_train_images, c.num_images);
  take("captions_per_image", c.captions_per_image);
  take("concepts_per_caption", c.concepts_per_caption);
  take("frames_per_concept", c.frames_per_concept);
  take("frame_noise", c.frame_noise);
  take("semantic_weight", c.semantic_weight);
  take("simi_pairs", c.simi_pairs);
  take("vocab_size", c.vocab_size);
  take("vocab_dim", c.vocab_dim);
  take("frame_rate_hz", c.frame_rate_hz);
  c.validate();
  return c;
}

std::string gen_config_to_json(const GenConfig& c) {
  json j{{"num_concepts", c.num_concepts},
         {"concept_dim", c.concept_dim},
         {"frame_dim", c.frame_dim},
         {"image_dim", c.image_dim},
         {"num_images", c.num_images},
         {"num_train_images", c.num_train_images},
         {"captions_per_image", c.captions_per_image},
         {"concepts_per_caption", c.concepts_per_caption},
         {"frames_per_concept", c.frames_per_concept},
         {"frame_noise", c.frame_noise},
         {"semantic_weight", c.semantic_weight},
         {"simi_pairs", c.simi_pairs},
         {"vocab_size", c.vocab_size},
         {"vocab_dim", c.vocab_dim},
         {"frame_rate_hz", c.frame_rate_hz}};
  return j.dump(2);
}

namespace {

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n01(rng);
  return m;
}

void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
}

std::int64_t uniform_in(Rng& rng, std::pair<std::int64_t, std::int64_t> range) {
  return std::uniform_int_distribution<std::int64_t>(range.first, range.second)(rng);
}

}  // namespace

Dataset gen_synthetic(const GenConfig& c, std::uint64_t seed) {
  c.validate();
  Rng world = stream_rng(seed, "gen/world");
  Rng text = stream_rng(seed, "gen/captions");
  Rng noise_rng = stream_rng(seed, "gen/noise");

  // Semantic latents and the frozen "image encoder" built on them.
  Eigen::MatrixXd latents = gaussian(world, c.num_concepts, c.concept_dim);
  const Eigen::MatrixXd projection = gaussian(world, c.image_dim, c.concept_dim);
  Eigen::MatrixXd semantic = latents * projection.transpose();
  normalize_rows(semantic);
  Eigen::MatrixXd distinct = gaussian(world, c.num_concepts, c.image_dim);
  normalize_rows(distinct);
  Eigen::MatrixXd concept_image =
      std::sqrt(c.semantic_weight) * semantic + std::sqrt(1.0 - c.semantic_weight) * distinct;
  normalize_rows(concept_image);

  // Acoustic templates: orthonormal when there is room, unit random otherwise.
  Eigen::MatrixXd templates = gaussian(world, c.num_concepts, c.frame_dim);
  if (c.num_concepts <= c.frame_dim) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(templates.transpose());
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(c.frame_dim, c.num_concepts);
    templates = q.transpose();
  }
  normalize_rows(templates);

  Dataset d;
  Manifest& m = d.manifest;
  m.frame_dim = c.frame_dim;
  m.image_dim = c.image_dim;
  m.num_images = c.num_images;
  m.num_train_images = c.num_train_images;
  m.frame_rate_hz = c.frame_rate_hz;
  m.images_normalized = true;

  d.images.resize(c.num_images, c.image_dim);
  std::vector<std::vector<std::int64_t>> concept_sets(static_cast<std::size_t>(c.num_images));
  std::vector<std::int64_t> all_concepts(static_cast<std::size_t>(c.num_concepts));
  std::iota(all_concepts.begin(), all_concepts.end(), 0);
  for (std::int64_t i = 0; i < c.num_images; ++i) {
    const auto count = uniform_in(text, c.concepts_per_caption);
    auto set = sample_without_replacement(all_concepts, static_cast<std::size_t>(count), text);
    Eigen::RowVectorXd img = Eigen::RowVectorXd::Zero(c.image_dim);
    for (auto k : set) img += concept_image.row(k);
    img.normalize();
    d.images.row(i) = img.cast<float>();
    concept_sets[static_cast<std::size_t>(i)] = std::move(set);
  }

  std::vector<Eigen::RowVectorXd> frame_rows;
  std::normal_distribution<double> noise(0.0, c.frame_noise);
  auto render = [&](const std::vector<std::int64_t>& order, UtteranceRecord& u) {
    u.offset_frames = static_cast<std::int64_t>(frame_rows.size());
    std::vector<std::int64_t> starts;
    for (auto k : order) {
      starts.push_back(static_cast<std::int64_t>(frame_rows.size()) - u.offset_frames);
      const auto dur = uniform_in(text, c.frames_per_concept);
      for (std::int64_t t = 0; t < dur; ++t) {
        Eigen::RowVectorXd f = templates.row(k);
        for (Eigen::Index j = 0; j < f.size(); ++j) f(j) += noise(noise_rng);
        frame_rows.push_back(std::move(f));
      }
    }
    u.num_frames = static_cast<std::int64_t>(frame_rows.size()) - u.offset_frames;
    u.boundaries_gt = std::move(starts);
  };

  for (std::int64_t i = 0; i < c.num_images; ++i) {
    for (std::int64_t k = 0; k < c.captions_per_image; ++k) {
      auto order = concept_sets[static_cast<std::size_t>(i)];
      std::shuffle(order.begin(), order.end(), text);
      UtteranceRecord u;
      u.id = "img" + std::to_string(i) + "_cap" + std::to_string(k);
      u.image_id = i;
      u.speaker = "spk" + std::to_string(k);
      render(order, u);
      d.utterances.push_back(std::move(u));
    }
  }

  // Similarity probes: one single-concept utterance per concept.
  if (c.simi_pairs > 0) {
    for (std::int64_t k = 0; k < c.num_concepts; ++k) {
      UtteranceRecord u;
      u.id = "simi_c" + std::to_string(k);
      render({k}, u);
      d.utterances.push_back(std::move(u));
    }
    Rng pair_rng = stream_rng(seed, "gen/simi");
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    for (std::int64_t a = 0; a < c.num_concepts; ++a)
      for (std::int64_t b = a + 1; b < c.num_concepts; ++b) pairs.emplace_back(a, b);
    const auto chosen = sample_without_replacement(pairs, static_cast<std::size_t>(c.simi_pairs), pair_rng);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const auto [a, b] = chosen[i];
      const double cosine = latents.row(a).dot(latents.row(b)) / (latents.row(a).norm() * latents.row(b).norm());
      SimiPair p;
      p.utt_a = "simi_c" + std::to_string(a);
      p.utt_b = "simi_c" + std::to_string(b);
      p.score = std::clamp(10.0 * std::max(0.0, cosine), 0.0, 10.0);
      p.split = i < chosen.size() / 2 ? "dev" : "test";
      d.simi.push_back(std::move(p));
    }
  }

  d.frames.resize(static_cast<Eigen::Index>(frame_rows.size()), c.frame_dim);
  for (std::size_t t = 0; t < frame_rows.size(); ++t)
    d.frames.row(static_cast<Eigen::Index>(t)) = frame_rows[t].cast<float>();
  m.total_frames = d.frames.rows();
  m.num_utterances = static_cast<std::int64_t>(d.utterances.size());

  if (c.vocab_size > 0) {
    Rng vocab_rng = stream_rng(seed, "gen/vocab");
    d.vocab = gaussian(vocab_rng, c.vocab_size, c.vocab_dim).cast<float>();
    m.vocab_size = c.vocab_size;
    m.vocab_dim = c.vocab_dim;
  }
  return d;
}

EmbeddingPool make_image_pool(const Dataset& d, bool normalize) {
  EmbeddingPool pool;
  pool.matrix = d.images.topRows(d.manifest.num_train_images);
  if (normalize) {
    for (Eigen::Index i = 0; i < pool.matrix.rows(); ++i) {
      const float n = pool.matrix.row(i).norm();
      if (n > 0.0f) pool.matrix.row(i) /= n;
    }
  }
  pool.normalized = normalize;
  return pool;
}

// ---------------------------------------------------------------------------
// k-means

KMeansResult kmeans_fit(const Mat<float>& points_f, int k, int max_iter, std::uint64_t seed) {
  const Eigen::MatrixXd points = points_f.cast<double>();
  const Eigen::Index n = points.rows();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " exceeds num_items=" + std::to_string(n));
  Rng rng = stream_rng(seed, "kmeans");

  KMeansResult r;
  r.centroids.resize(k, points.cols());
  Eigen::VectorXd d2(n);
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  auto first = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
  r.centroids.row(0) = points.row(first);
  taken[static_cast<std::size_t>(first)] = true;
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (points.row(i) - r.centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2(i);
        if (u <= 0.0 && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0)
        for (Eigen::Index i = n; i-- > 0;)
          if (d2(i) > 0.0) {
            pick = i;
            break;
          }
    } else {
      for (Eigen::Index i = 0; i < n; ++i)
        if (!taken[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
    }
    taken[static_cast<std::size_t>(pick)] = true;
    r.centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - r.centroids.row(c)).squaredNorm());
  }

  r.cluster_of.assign(static_cast<std::size_t>(n), -1);
  Eigen::VectorXd dist(n);
  for (int it = 0; it < std::max(max_iter, 1); ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - r.centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dc = (points.row(i) - r.centroids.row(c)).squaredNorm();
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      if (r.cluster_of[static_cast<std::size_t>(i)] != best) changed = true;
      r.cluster_of[static_cast<std::size_t>(i)] = best;
      dist(i) = best_d;
      inertia += best_d;
    }
    r.inertia_history.push_back(inertia);
    r.iterations = it + 1;
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = r.cluster_of[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its current centroid.
      Eigen::Index far = 0;
      dist.maxCoeff(&far);
      r.centroids.row(c) = points.row(far);
      dist(far) = 0.0;
    }
  }
  return r;
}

}  // namespace segalign
