#include "sthq/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sthq/image_io.hpp"
#include "sthq/rng.hpp"

namespace sthq {

namespace {

std::string trim(std::string s) {
  const auto space = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), space));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), space).base(), s.end());
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, sep);) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

std::vector<ConfigKey> concat(std::vector<ConfigKey> a, const std::vector<ConfigKey>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

RunConfig::RunConfig(std::vector<ConfigKey> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) values_[k.name] = k.default_value;
}

const ConfigKey& RunConfig::find(const std::string& key) const {
  for (const auto& k : schema_)
    if (k.name == key) return k;
  std::string valid;
  for (const auto& k : schema_) valid += (valid.empty() ? "" : ", ") + k.name;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  find(key);
  values_[key] = trim(value);
}

void RunConfig::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    try {
      assign(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str(), path.string());
}

const std::string& RunConfig::str(const std::string& key) const {
  find(key);
  return values_.at(key);
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, str(key)); }

std::optional<double> RunConfig::optional_real(const std::string& key) const {
  if (str(key).empty()) return std::nullopt;
  return real(key);
}

std::size_t RunConfig::count(const std::string& key) const { return parse_number<std::size_t>(key, str(key)); }

std::uint64_t RunConfig::u64(const std::string& key) const { return parse_number<std::uint64_t>(key, str(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split(str(key), ',')) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split(str(key), ',')) out.push_back(parse_number<std::size_t>(key, item));
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& k : schema_) out += k.name + "=" + values_.at(k.name) + "\n";
  return out;
}

std::vector<ConfigKey> autoencoder_keys() {
  return {
      {"run_dir", "runs/autoencoder", "output directory"},
      {"seed", "1", "global seed"},
      {"train_images", "", "directory of training images; empty uses generated textures"},
      {"eval_images", "", "directory of evaluation images; empty uses generated textures"},
      {"image_size", "16", "texture size or center-crop size"},
      {"train_count", "512", "generated training images"},
      {"eval_count", "128", "generated evaluation images"},
      {"hidden", "16", "channels of the outer conv layers"},
      {"channels", "4", "bottleneck channels"},
      {"patch", "2", "patch side; vector dimension is patch^2"},
      {"L", "256", "number of centers"},
      {"beta_total", "0.0012", "rate weight"},
      {"lambda", "0", "l2 weight"},
      {"batch", "32", "minibatch size"},
      {"stage1_iterations", "2000", ""},
      {"stage1_lr", "0.002", ""},
      {"unfreeze_channels", "false", "stage 1 enables bottleneck channels one at a time"},
      {"stage2_iterations", "1500", ""},
      {"stage2_lr", "0.0005", ""},
      {"T", "10", "gap-feedback half-life in iterations"},
      {"gain", "", "K_G; empty derives it from gain_scale"},
      {"gain_scale", "3", "default K_G = gain_scale * sigma0 / gap0"},
      {"gap_smoothing", "0.9", "moving-average coefficient of the measured gap"},
      {"sigma0", "", "initial hardness; empty derives it from the centers"},
      {"init_iterations", "400", "k-means iterations for center initialization"},
      {"histogram_capacity", "20", ""},
      {"histogram_interval", "5", ""},
  };
}

std::vector<ConfigKey> sweep_keys() {
  return concat(autoencoder_keys(), {{"betas", "0.0006,0.0012,0.0024", "comma-separated beta_total values"}});
}

std::vector<ConfigKey> scalar_vector_keys() {
  return concat(autoencoder_keys(), {
                                        {"vector_L", "256", ""},
                                        {"vector_patch", "2", ""},
                                        {"vector_betas", "0.0006,0.0012,0.0024", ""},
                                        {"scalar_L", "4", ""},
                                        {"scalar_patch", "1", ""},
                                        {"scalar_betas", "0.0001,0.003,0.012", ""},
                                    });
}

std::vector<ConfigKey> netcompress_keys() {
  return {
      {"run_dir", "runs/netcompress", "output directory"},
      {"seed", "1", "global seed"},
      {"samples", "3000", "generated spiral points"},
      {"train_count", "2000", "points used for training; the rest are the test set"},
      {"turns", "1.75", ""},
      {"noise", "0.03", ""},
      {"hidden", "128,128", "hidden layer widths"},
      {"classifier_iterations", "3000", ""},
      {"classifier_lr", "0.05", ""},
      {"L", "16", "number of scalar centers"},
      {"beta_total", "0.3", "rate weight"},
      {"lambda", "0", "l2 weight"},
      {"batch", "128", ""},
      {"lr", "0.01", ""},
      {"center_lr", "", "empty uses lr * L / weights"},
      {"momentum", "0.9", ""},
      {"growth", "1.001", "per-step hardness growth"},
      {"switch_factor", "20", "hard switch at this multiple of sigma0"},
      {"max_soft_iterations", "6000", ""},
      {"finetune_iterations", "800", ""},
      {"sigma0", "", ""},
      {"init_iterations", "500", ""},
      {"coder", "arithmetic", "arithmetic or huffman"},
  };
}

Tensor load_image_set(const std::string& dir, std::size_t size, std::size_t count, std::uint64_t seed) {
  if (dir.empty()) return make_textures({count, size, seed});
  const auto files = list_images(dir);
  if (files.empty()) throw ImageError("no images in " + dir);
  Tensor out({files.size(), 1, size, size});
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Tensor t = image_to_tensor(center_crop(to_gray(read_image(files[i])), size));
    std::copy(t.values().begin(), t.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * size * size));
  }
  return out;
}

AutoencoderData autoencoder_data(const RunConfig& config) {
  const std::uint64_t seed = config.u64("seed");
  const std::size_t size = config.count("image_size");
  return {load_image_set(config.str("train_images"), size, config.count("train_count"), derive_seed(seed, "train-images")),
          load_image_set(config.str("eval_images"), size, config.count("eval_count"), derive_seed(seed, "eval-images"))};
}

Model autoencoder_stage1(const RunConfig& config, const Tensor& train) {
  const std::uint64_t seed = config.u64("seed");
  Model m = Model::init(
      autoencoder_spec(config.count("image_size"), config.count("hidden"), config.count("channels"), config.count("patch")),
      derive_seed(seed, "model-init"));
  const Stage1Options o{config.count("stage1_iterations"), config.count("batch"), config.real("stage1_lr"),
                        config.real("lambda"),              config.flag("unfreeze_channels"), derive_seed(seed, "stage1")};
  return train_autoencoder_stage1(train, std::move(m), o);
}

Stage2Options stage2_options(const RunConfig& config, std::size_t alphabet, double beta_total) {
  Stage2Options o;
  o.alphabet = alphabet;
  o.objective = {beta_total, config.real("lambda"), LossKind::mse};
  o.iterations = config.count("stage2_iterations");
  o.batch = config.count("batch");
  o.learning_rate = config.real("stage2_lr");
  o.half_life = config.real("T");
  o.gain = config.optional_real("gain");
  o.gain_scale = config.real("gain_scale");
  o.gap_smoothing = config.real("gap_smoothing");
  o.sigma0 = config.optional_real("sigma0");
  o.init_iterations = config.count("init_iterations");
  o.histogram_capacity = config.count("histogram_capacity");
  o.histogram_interval = config.count("histogram_interval");
  o.seed = derive_seed(config.u64("seed"), "stage2");
  return o;
}

AutoencoderRun autoencoder_point(const RunConfig& config, const Model& stage1, const AutoencoderData& data,
                                 std::size_t alphabet, std::size_t patch, double beta_total, const std::string& run_id,
                                 std::size_t threads) {
  Model m = stage1;
  m.spec.patch_h = m.spec.patch_w = static_cast<std::uint8_t>(patch);
  m.spec.validate();
  Stage2Result r = train_autoencoder_stage2(data.train, std::move(m), stage2_options(config, alphabet, beta_total));
  AutoencoderRun run{std::move(r.model), {}, std::move(r.telemetry)};
  run.evaluation = evaluate_codec(run.model, data.eval, threads);
  run.evaluation.point.run_id = run_id;
  run.evaluation.point.beta_total = beta_total;
  return run;
}

std::size_t matched_rate_wins(const std::vector<RateDistortionPoint>& vector_points,
                              const std::vector<RateDistortionPoint>& scalar_points) {
  if (scalar_points.empty()) return 0;
  std::vector<std::pair<double, double>> curve;
  for (const auto& p : scalar_points) curve.emplace_back(p.rate, p.mse.value());
  std::sort(curve.begin(), curve.end());
  std::size_t wins = 0;
  for (const auto& v : vector_points) {
    const double rate = v.rate, err = v.mse.value();
    double reference;
    if (rate <= curve.front().first) {
      reference = curve.front().second;
    } else if (rate > curve.back().first) {
      continue;
    } else {
      std::size_t i = 1;
      while (curve[i].first < rate) ++i;
      const auto [r0, m0] = curve[i - 1];
      const auto [r1, m1] = curve[i];
      reference = r1 == r0 ? std::min(m0, m1) : m0 + (m1 - m0) * (rate - r0) / (r1 - r0);
    }
    if (err < reference) ++wins;
  }
  return wins;
}

NetData netcompress_data(const RunConfig& config) {
  const std::size_t samples = config.count("samples"), train_count = config.count("train_count");
  if (train_count == 0 || train_count >= samples) throw ConfigError("train_count must be in [1, samples)");
  const LabeledSet all =
      make_spirals({samples, config.real("turns"), config.real("noise"), derive_seed(config.u64("seed"), "spirals")});
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < samples; ++i) (i < train_count ? a : b).push_back(i);
  return {select_rows(all, a), select_rows(all, b)};
}

Model netcompress_baseline(const RunConfig& config, const NetData& data) {
  const std::uint64_t seed = config.u64("seed");
  std::vector<std::uint32_t> sizes{static_cast<std::uint32_t>(data.train.features.dim(1))};
  for (std::size_t h : config.counts("hidden")) sizes.push_back(static_cast<std::uint32_t>(h));
  sizes.push_back(static_cast<std::uint32_t>(data.train.classes));
  Model m = Model::init(mlp_spec(sizes), derive_seed(seed, "model-init"));
  ClassifierOptions o;
  o.iterations = config.count("classifier_iterations");
  o.batch = config.count("batch");
  o.learning_rate = config.real("classifier_lr");
  o.momentum = config.real("momentum");
  o.lambda = config.real("lambda");
  o.seed = derive_seed(seed, "classifier");
  return train_classifier(data.train, std::move(m), o);
}

NetCompressionOptions netcompress_options(const RunConfig& config, double beta_total) {
  NetCompressionOptions o;
  o.alphabet = config.count("L");
  o.objective = {beta_total, config.real("lambda"), LossKind::cross_entropy};
  o.max_soft_iterations = config.count("max_soft_iterations");
  o.finetune_iterations = config.count("finetune_iterations");
  o.batch = config.count("batch");
  o.learning_rate = config.real("lr");
  o.center_learning_rate = config.optional_real("center_lr");
  o.momentum = config.real("momentum");
  o.growth = config.real("growth");
  o.switch_factor = config.real("switch_factor");
  o.sigma0 = config.optional_real("sigma0");
  o.init_iterations = config.count("init_iterations");
  const std::string& coder = config.str("coder");
  if (coder == "arithmetic")
    o.coder = CoderId::arithmetic;
  else if (coder == "huffman")
    o.coder = CoderId::huffman;
  else
    throw ConfigError("config key 'coder': expected arithmetic or huffman, got '" + coder + "'");
  o.seed = derive_seed(config.u64("seed"), "netcompress");
  return o;
}

RateDistortionPoint net_point(const NetCompressionResult& result, const std::string& run_id, double beta_total,
                              std::size_t alphabet) {
  RateDistortionPoint p;
  p.run_id = run_id;
  p.beta_total = beta_total;
  p.alphabet = alphabet;
  p.dim = 1;
  p.rate = result.bits_per_weight;
  p.entropy_bits = result.entropy_bits;
  p.coded_bits = result.bitstream.total_bits();
  p.accuracy = result.accuracy;
  return p;
}

}  // namespace sthq
