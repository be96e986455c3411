#include "tap/noise.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tap/checkpoint.hpp"
#include "tap/errors.hpp"

namespace tap {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double parse_scalar(const std::string& s, const std::string& what) {
  try {
    const auto slash = s.find('/');
    size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    }
    const std::string a = s.substr(0, slash), b = s.substr(slash + 1);
    size_t ua = 0, ub = 0;
    const double num = std::stod(a, &ua), den = std::stod(b, &ub);
    if (ua != a.size() || ub != b.size() || den == 0.0) throw std::invalid_argument(s);
    return num / den;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse " + what + " '" + s + "'");
  }
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& body, const std::string& descriptor) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed noise descriptor '" + descriptor + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

}  // namespace

NoiseModel NoiseModel::awgn(double sigma, uint64_t seed) {
  NoiseModel m;
  m.params = Awgn{sigma};
  m.seed = seed;
  m.validate();
  return m;
}

NoiseModel NoiseModel::poisson_gaussian(double alpha, double delta, uint64_t seed) {
  NoiseModel m;
  m.params = PoissonGaussian{alpha, delta};
  m.seed = seed;
  m.validate();
  return m;
}

void NoiseModel::validate() const {
  if (const auto* a = std::get_if<Awgn>(&params)) {
    if (!(a->sigma >= 0.0) || !std::isfinite(a->sigma)) throw ConfigError("AWGN sigma must be finite and >= 0");
  } else {
    const auto& p = std::get<PoissonGaussian>(params);
    if (!(p.alpha >= 0.0) || !(p.delta >= 0.0) || !std::isfinite(p.alpha) || !std::isfinite(p.delta))
      throw ConfigError("Poisson-Gaussian alpha and delta must be finite and >= 0");
  }
}

std::string NoiseModel::descriptor() const {
  if (const auto* a = std::get_if<Awgn>(&params)) return "awgn:sigma=" + fmt(a->sigma);
  const auto& p = std::get<PoissonGaussian>(params);
  return "pg:alpha=" + fmt(p.alpha) + ",delta=" + fmt(p.delta);
}

NoiseModel NoiseModel::parse(const std::string& d, uint64_t seed) {
  const auto colon = d.find(':');
  if (colon == std::string::npos) throw ConfigError("noise descriptor '" + d + "' lacks a ':'");
  const std::string kind = d.substr(0, colon);
  const auto kv = parse_kv(d.substr(colon + 1), d);
  auto need = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("noise descriptor '" + d + "' is missing '" + key + "'");
    return parse_scalar(it->second, key);
  };
  if (kind == "awgn") {
    if (kv.size() != 1) throw ConfigError("awgn descriptor takes only sigma: '" + d + "'");
    return awgn(need("sigma"), seed);
  }
  if (kind == "pg") {
    if (kv.size() != 2) throw ConfigError("pg descriptor takes alpha and delta: '" + d + "'");
    return poisson_gaussian(need("alpha"), need("delta"), seed);
  }
  throw ConfigError("unknown noise model '" + kind + "' (expected awgn or pg)");
}

nlohmann::json NoiseModel::to_json() const { return {{"descriptor", descriptor()}, {"seed", seed}}; }

NoiseModel NoiseModel::from_json(const nlohmann::json& j) {
  try {
    return parse(j.at("descriptor").get<std::string>(), j.value("seed", uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed noise model: ") + e.what());
  }
}

template <typename T>
Tensor<T> sample_awgn(const Shape& shape, double sigma, Rng& rng) {
  Tensor<T> out(shape);
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.span()) v = static_cast<T>(n(rng));
  return out;
}

template <typename T>
Tensor<T> sample_poisson_gaussian(const Tensor<T>& clean, double alpha, double delta, Rng& rng) {
  if (alpha < 0.0 || delta < 0.0) throw ConfigError("Poisson-Gaussian alpha and delta must be >= 0");
  Tensor<T> out(clean.shape());
  std::normal_distribution<double> read(0.0, delta > 0.0 ? delta : 1.0);
  for (int64_t i = 0; i < clean.numel(); ++i) {
    const double x = std::max(0.0, static_cast<double>(clean[i]));
    double n = 0.0;
    if (alpha > 0.0 && x > 0.0) {
      std::poisson_distribution<int64_t> shot(x / alpha);
      n = alpha * static_cast<double>(shot(rng)) - x;
    }
    if (delta > 0.0) n += read(rng);
    out[i] = static_cast<T>(n);
  }
  return out;
}

template <typename T>
Tensor<T> sample_noise(const Tensor<T>& clean, const NoiseModel& model, Rng& rng) {
  if (const auto* a = std::get_if<Awgn>(&model.params)) return sample_awgn<T>(clean.shape(), a->sigma, rng);
  const auto& p = std::get<PoissonGaussian>(model.params);
  return sample_poisson_gaussian(clean, p.alpha, p.delta, rng);
}

template Tensor<float> sample_awgn(const Shape&, double, Rng&);
template Tensor<double> sample_awgn(const Shape&, double, Rng&);
template Tensor<float> sample_poisson_gaussian(const Tensor<float>&, double, double, Rng&);
template Tensor<double> sample_poisson_gaussian(const Tensor<double>&, double, double, Rng&);
template Tensor<float> sample_noise(const Tensor<float>&, const NoiseModel&, Rng&);
template Tensor<double> sample_noise(const Tensor<double>&, const NoiseModel&, Rng&);

CalibrationTable CalibrationTable::parse(const std::string& text) {
  CalibrationTable t;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::stringstream ls(line);
    std::string iso_s, a_s, d_s, extra;
    if (!(ls >> iso_s)) continue;
    if (!(ls >> a_s >> d_s) || (ls >> extra))
      throw ConfigError("calibration line " + std::to_string(lineno) + ": expected '<iso> <alpha> <delta>'");
    int iso = 0;
    try {
      size_t used = 0;
      iso = std::stoi(iso_s, &used);
      if (used != iso_s.size()) throw std::invalid_argument(iso_s);
    } catch (const std::exception&) {
      throw ConfigError("calibration line " + std::to_string(lineno) + ": bad ISO '" + iso_s + "'");
    }
    const double a = parse_scalar(a_s, "alpha"), d = parse_scalar(d_s, "delta");
    if (a < 0.0 || d < 0.0) throw ConfigError("calibration line " + std::to_string(lineno) + ": negative parameter");
    if (t.entries_.count(iso)) throw ConfigError("calibration table lists ISO " + std::to_string(iso) + " twice");
    t.set(iso, a, d);
  }
  return t;
}

CalibrationTable CalibrationTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open calibration table: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

PoissonGaussian CalibrationTable::lookup(int iso) const {
  const auto it = entries_.find(iso);
  if (it == entries_.end()) throw ConfigError("ISO " + std::to_string(iso) + " not in calibration table");
  return it->second;
}

NoiseModel CalibrationTable::model_for(int iso, uint64_t seed) const {
  const auto p = lookup(iso);
  return NoiseModel::poisson_gaussian(p.alpha, p.delta, seed);
}

void PseudoPairSet::validate() const {
  if (clean.size() != noisy.size() || clean.size() != video_ids.size())
    throw DataError("pseudo-pair set has mismatched clean/noisy/id counts");
  for (size_t i = 0; i < clean.size(); ++i)
    if (clean[i].shape() != noisy[i].shape())
      throw DataError("pseudo pair '" + video_ids[i] + "' has clean " + shape_str(clean[i].shape()) + " but noisy " +
                      shape_str(noisy[i].shape()));
}

Rng noise_stream(uint64_t seed, int source_step, size_t video_index, uint64_t draw) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(source_step),
                    static_cast<uint32_t>(video_index), static_cast<uint32_t>(draw), 0x7a9u};
  return Rng(seq);
}

PseudoPairSet make_pseudo_pairs(const std::vector<std::string>& video_ids, const std::vector<Tensor<float>>& videos,
                                const VideoFn& denoiser, const NoiseModel& model, int source_step) {
  if (video_ids.size() != videos.size()) throw ConfigError("make_pseudo_pairs: id and video counts differ");
  model.validate();
  PseudoPairSet set;
  set.video_ids = video_ids;
  set.source_step = source_step;
  set.model = model;
  for (size_t i = 0; i < videos.size(); ++i) {
    Tensor<float> clean = denoiser(videos[i]);
    if (clean.shape() != videos[i].shape())
      throw DataError("denoiser output " + shape_str(clean.shape()) + " does not match input " +
                      shape_str(videos[i].shape()) + " for video '" + video_ids[i] + "'");
    for (auto& v : clean.span()) v = std::min(std::max(v, 0.f), 1.f);
    set.clean.push_back(std::move(clean));
  }
  recorrupt(set, 0);
  return set;
}

void recorrupt(PseudoPairSet& pairs, uint64_t draw) {
  pairs.noisy.clear();
  for (size_t i = 0; i < pairs.clean.size(); ++i) {
    Rng rng = noise_stream(pairs.model.seed, pairs.source_step, i, draw);
    Tensor<float> noisy = sample_noise(pairs.clean[i], pairs.model, rng);
    noisy += pairs.clean[i];
    pairs.noisy.push_back(std::move(noisy));
  }
}

namespace {

std::filesystem::path frame_path(const std::filesystem::path& dir, const std::string& kind, const std::string& id,
                                 int64_t t) {
  char name[32];
  std::snprintf(name, sizeof(name), "%05lld.tns", static_cast<long long>(t));
  return dir / kind / id / name;
}

}  // namespace

void save_pseudo_pairs(const std::filesystem::path& dir, const PseudoPairSet& pairs) {
  pairs.validate();
  nlohmann::json videos = nlohmann::json::array();
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& c = pairs.clean[i];
    for (int64_t t = 0; t < c.dim(0); ++t) {
      write_tensor_file(frame_path(dir, "clean", pairs.video_ids[i], t), batch_slice(c, t));
      write_tensor_file(frame_path(dir, "noisy", pairs.video_ids[i], t), batch_slice(pairs.noisy[i], t));
    }
    videos.push_back({{"id", pairs.video_ids[i]}, {"frames", c.dim(0)}, {"shape", c.shape()}});
  }
  nlohmann::json m = {{"format", "tap-pseudo-pairs"},
                      {"version", 1},
                      {"source_step", pairs.source_step},
                      {"noise_model", pairs.model.to_json()},
                      {"clean_clamped", true},
                      {"noisy_clamped", false},
                      {"provenance", pairs.provenance},
                      {"videos", videos}};
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw DataError("cannot write pseudo-pair manifest in " + dir.string());
  os << m.dump(2) << "\n";
}

PseudoPairSet load_pseudo_pairs(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("no pseudo-pair manifest in " + dir.string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt pseudo-pair manifest: " + std::string(e.what()));
  }
  PseudoPairSet set;
  try {
    set.source_step = m.at("source_step").get<int>();
    set.model = NoiseModel::from_json(m.at("noise_model"));
    set.provenance = m.value("provenance", nlohmann::json::object());
    for (const auto& v : m.at("videos")) {
      const std::string id = v.at("id").get<std::string>();
      const int64_t n = v.at("frames").get<int64_t>();
      std::vector<Tensor<float>> cf, nf;
      for (int64_t t = 0; t < n; ++t) {
        cf.push_back(read_tensor_file(frame_path(dir, "clean", id, t)));
        nf.push_back(read_tensor_file(frame_path(dir, "noisy", id, t)));
      }
      set.video_ids.push_back(id);
      set.clean.push_back(batch_stack<float>(cf));
      set.noisy.push_back(batch_stack<float>(nf));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed pseudo-pair manifest: " + std::string(e.what()));
  }
  set.validate();
  return set;
}

}  // namespace tap
