#include "oncoclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "oncoclip/random.hpp"

namespace oncoclip::synth {

namespace {

constexpr std::uint64_t kStructureStream = 1;
constexpr std::uint64_t kPatientStream = 2;

std::size_t total_attribute_tokens() {
  return std::accumulate(nn::kAttributeClasses.begin(), nn::kAttributeClasses.end(), std::size_t{0});
}

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001B3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  // Acklam's rational approximation followed by one Halley refinement.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

std::vector<double> SynthConfig::effective_beta() const {
  if (!beta.empty()) return beta;
  std::vector<double> b(latent_dim, 0.0);
  b[1] = 1.0;
  return b;
}

void SynthConfig::validate() const {
  if (latent_dim < 2) throw std::invalid_argument("synth: latent_dim must be >= 2");
  if (feature_dim < 1) throw std::invalid_argument("synth: feature_dim must be >= 1");
  if (!(noise_sigma >= 0.0) || !(phase_sigma >= 0.0)) throw std::invalid_argument("synth: noise levels must be >= 0");
  if (phases < 1 || phases > 4) throw std::invalid_argument("synth: phases must lie in 1..4");
  if (noise_tokens > 64) throw std::invalid_argument("synth: too many noise tokens");
  if (!(baseline_hazard > 0.0)) throw std::invalid_argument("synth: baseline_hazard must be > 0");
  if (!(censor_rate >= 0.0)) throw std::invalid_argument("synth: censor_rate must be >= 0");
  if (!beta.empty() && beta.size() != latent_dim)
    throw std::invalid_argument("synth: beta length must equal latent_dim");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"latent_dim", latent_dim},         {"feature_dim", feature_dim}, {"noise_sigma", noise_sigma},
          {"phases", phases},                 {"phase_sigma", phase_sigma}, {"noise_tokens", noise_tokens},
          {"baseline_hazard", baseline_hazard}, {"censor_rate", censor_rate}, {"beta", effective_beta()},
          {"structure_seed", structure_seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.phases = j.value("phases", c.phases);
  c.phase_sigma = j.value("phase_sigma", c.phase_sigma);
  c.noise_tokens = j.value("noise_tokens", c.noise_tokens);
  c.baseline_hazard = j.value("baseline_hazard", c.baseline_hazard);
  c.censor_rate = j.value("censor_rate", c.censor_rate);
  c.beta = j.value("beta", c.beta);
  c.structure_seed = j.value("structure_seed", c.structure_seed);
  c.validate();
  return c;
}

std::size_t attribute_token(std::size_t attribute, std::size_t cls) {
  if (attribute >= kNumAttributes || cls >= nn::kAttributeClasses[attribute])
    throw std::invalid_argument("attribute_token: attribute or class out of range");
  std::size_t offset = 0;
  for (std::size_t k = 0; k < attribute; ++k) offset += nn::kAttributeClasses[k];
  return offset + cls;
}

std::size_t filler_count() { return kVocabSize - total_attribute_tokens(); }

std::size_t filler_token(std::size_t k) {
  if (k >= filler_count()) throw std::invalid_argument("filler_token: index out of range");
  return total_attribute_tokens() + k;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v;
    for (std::size_t k = 0; k < kNumAttributes; ++k)
      for (std::size_t c = 0; c < nn::kAttributeClasses[k]; ++c)
        v.push_back("q" + std::to_string(k + 1) + "c" + std::to_string(c));
    for (std::size_t f = 0; v.size() < kVocabSize; ++f) v.push_back("filler" + std::to_string(f));
    return v;
  }();
  return vocab;
}

std::string token_word(std::size_t token) {
  if (token >= kVocabSize) throw std::invalid_argument("token_word: token out of range");
  return vocabulary()[token];
}

Matrix SynthCohort::features() const {
  Matrix m(patients.size(), config.feature_dim);
  for (std::size_t i = 0; i < patients.size(); ++i)
    std::copy(patients[i].x.begin(), patients[i].x.end(), m.row(i).begin());
  return m;
}

std::vector<std::uint32_t> SynthCohort::tokens(std::size_t i) const { return tokens(i, 0); }

std::vector<std::uint32_t> SynthCohort::tokens(std::size_t i, std::size_t version) const {
  const Patient& p = patients.at(i);
  if (version > p.shuffles.size()) throw std::invalid_argument("tokens: report version out of range");
  const auto& sentences = version == 0 ? p.report : p.shuffles[version - 1];
  std::vector<std::uint32_t> out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::string SynthCohort::text(std::size_t i) const {
  std::string out;
  for (const auto& s : patients.at(i).report) {
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k) out += ' ';
      out += token_word(s[k]);
    }
    out += ". ";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

std::vector<double> SynthCohort::times() const {
  std::vector<double> t;
  for (const auto& p : patients) t.push_back(p.time);
  return t;
}

std::vector<int> SynthCohort::events() const {
  std::vector<int> e;
  for (const auto& p : patients) e.push_back(p.event);
  return e;
}

std::vector<int> SynthCohort::malignancy() const {
  std::vector<int> m;
  for (const auto& p : patients) m.push_back(p.malignant);
  return m;
}

std::vector<int> SynthCohort::attribute_labels(std::size_t attribute) const {
  if (attribute >= kNumAttributes) throw std::invalid_argument("attribute_labels: attribute out of range");
  std::vector<int> y;
  for (const auto& p : patients) y.push_back(p.labels[attribute]);
  return y;
}

std::uint64_t cohort_fingerprint(const SynthCohort& c) {
  Fnv h;
  h.u64(c.seed);
  h.str(c.config.to_json().dump());
  h.u64(c.patients.size());
  for (double v : c.w.data) h.f64(v);
  for (const auto& p : c.patients) {
    for (double v : p.z) h.f64(v);
    for (double v : p.x) h.f64(v);
    for (int l : p.labels) h.u64(static_cast<std::uint64_t>(l));
    h.f64(p.time);
    h.u64(static_cast<std::uint64_t>(p.event));
    h.f64(p.risk);
    for (const auto& s : p.report)
      for (auto t : s) h.u64(t);
    for (const auto& f : p.phase_features)
      for (double v : f) h.f64(v);
  }
  return h.value();
}

SynthCohort gen_cohort(std::size_t n, std::uint64_t seed, const SynthConfig& config) {
  if (n < 1) throw std::invalid_argument("gen_cohort: n must be >= 1");
  config.validate();
  const std::size_t L = config.latent_dim, F = config.feature_dim;
  SynthCohort c;
  c.config = config;
  c.seed = seed;

  Rng srng(derive_seed(config.structure_seed, kStructureStream));
  c.w = Matrix(F, L);
  const double wscale = 1.0 / std::sqrt(static_cast<double>(L));
  for (auto& v : c.w.data) v = srng.normal() * wscale;
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    std::vector<double> dir(L, 0.0);
    if (k == kMalignancyAttribute) {
      dir[0] = 1.0;
    } else if (k == kAggressivenessAttribute) {
      dir[1] = 1.0;
    } else {
      double norm = 0.0;
      for (auto& v : dir) v = srng.normal(), norm += v * v;
      norm = std::sqrt(norm);
      for (auto& v : dir) v /= norm;
    }
    c.directions.push_back(std::move(dir));
    std::vector<double> cut;
    const std::size_t classes = nn::kAttributeClasses[k];
    for (std::size_t j = 1; j < classes; ++j)
      cut.push_back(normal_quantile(static_cast<double>(j) / static_cast<double>(classes)));
    c.cuts.push_back(std::move(cut));
  }

  const auto beta = config.effective_beta();
  c.patients.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, kPatientStream, i));
    Patient& p = c.patients[i];
    p.z.resize(L);
    for (auto& v : p.z) v = rng.normal();
    p.x.assign(F, 0.0);
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t l = 0; l < L; ++l) s += c.w(f, l) * p.z[l];
      p.x[f] = s + config.noise_sigma * rng.normal();
    }
    for (std::size_t k = 0; k < kNumAttributes; ++k) {
      const double s = dot(c.directions[k], p.z);
      const auto& cut = c.cuts[k];
      p.labels[k] = static_cast<int>(std::upper_bound(cut.begin(), cut.end(), s) - cut.begin());
    }
    p.malignant = p.labels[kMalignancyAttribute] >= static_cast<int>(kMalignantFromBin) ? 1 : 0;
    p.aggressive = p.labels[kAggressivenessAttribute] >= static_cast<int>(kAggressiveFromBin) ? 1 : 0;

    p.report.resize(kNumAttributes);
    for (std::size_t k = 0; k < kNumAttributes; ++k)
      p.report[k] = {static_cast<std::uint32_t>(attribute_token(k, static_cast<std::size_t>(p.labels[k])))};
    for (std::size_t t = 0; t < config.noise_tokens; ++t) {
      const auto tok = static_cast<std::uint32_t>(filler_token(rng.below(filler_count())));
      p.report[rng.below(kNumAttributes)].push_back(tok);
    }
    for (int v = 0; v < 4; ++v) {
      auto shuffled = p.report;
      rng.shuffle(shuffled.begin(), shuffled.end());
      p.shuffles.push_back(std::move(shuffled));
    }

    for (std::size_t ph = 0; ph < config.phases; ++ph) {
      p.phase_tags.push_back(kPhaseOrder[ph]);
      std::vector<double> f = p.x;
      for (auto& v : f) v += config.phase_sigma * rng.normal();
      p.phase_features.push_back(std::move(f));
    }

    p.risk = dot(beta, p.z);
    p.event_time = rng.exponential(config.baseline_hazard * std::exp(p.risk));
    p.censor_time =
        config.censor_rate > 0.0 ? rng.exponential(config.censor_rate) : std::numeric_limits<double>::infinity();
    p.event = p.event_time <= p.censor_time ? 1 : 0;
    p.time = std::min(p.event_time, p.censor_time);
  }
  c.fingerprint = cohort_fingerprint(c);
  return c;
}

OracleScores oracle_scores(const SynthCohort& c) {
  if (c.fingerprint == 0 || cohort_fingerprint(c) != c.fingerprint)
    throw std::invalid_argument("oracle_scores: cohort was not produced by gen_cohort or has been modified");
  OracleScores o;
  for (const auto& p : c.patients) {
    o.linear_predictor.push_back(p.risk);
    o.malignancy_score.push_back(dot(c.directions[kMalignancyAttribute], p.z));
    o.p_malignant.push_back(static_cast<double>(p.malignant));
    std::array<std::vector<double>, kNumAttributes> post;
    for (std::size_t k = 0; k < kNumAttributes; ++k) {
      post[k].assign(nn::kAttributeClasses[k], 0.0);
      post[k][static_cast<std::size_t>(p.labels[k])] = 1.0;
    }
    o.posteriors.push_back(std::move(post));
  }
  return o;
}

nlohmann::json ground_truth_json(const SynthCohort& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["n"] = c.size();
  j["config"] = c.config.to_json();
  j["fingerprint"] = c.fingerprint;
  j["vocabulary"] = vocabulary();
  j["malignancy_attribute"] = kMalignancyAttribute + 1;
  j["aggressiveness_attribute"] = kAggressivenessAttribute + 1;
  j["cuts"] = c.cuts;
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.patients[i];
    pts.push_back({{"id", i},
                   {"z", p.z},
                   {"labels", p.labels},
                   {"malignant", p.malignant},
                   {"aggressive", p.aggressive},
                   {"risk", p.risk},
                   {"event_time", p.event_time},
                   {"censor_time", std::isfinite(p.censor_time) ? nlohmann::json(p.censor_time) : nlohmann::json(nullptr)}});
  }
  j["patients"] = pts;
  return j;
}

}  // namespace oncoclip::synth
