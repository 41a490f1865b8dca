#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oncoclip/encoders.hpp"
#include "oncoclip/linalg.hpp"

namespace oncoclip::synth {

// Attribute whose bins encode malignancy (bins >= 3 of 5) and the one whose
// top bin marks aggressive disease (bin 2 of 3). Both read single latent axes.
inline constexpr std::size_t kMalignancyAttribute = 11;
inline constexpr std::size_t kMalignantFromBin = 3;
inline constexpr std::size_t kAggressivenessAttribute = 13;
inline constexpr std::size_t kAggressiveFromBin = 2;
inline constexpr std::size_t kNumAttributes = 14;

// Phase tags in the order phases are added to a patient.
inline constexpr std::array<char, 4> kPhaseOrder{'A', 'V', 'N', 'D'};

struct SynthConfig {
  std::size_t latent_dim = 8;
  std::size_t feature_dim = 32;
  double noise_sigma = 0.1;  // image feature noise
  std::size_t phases = 1;    // jittered copies per patient, 1..4
  double phase_sigma = 0.05;
  std::size_t noise_tokens = 1;  // filler tokens per report
  double baseline_hazard = 0.05;  // per month
  double censor_rate = 0.02;      // 0 disables censoring
  std::vector<double> beta;       // empty: 1.0 on latent axis 1, 0 elsewhere
  std::uint64_t structure_seed = 0;  // fixes W, attribute directions and cuts

  std::vector<double> effective_beta() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// 64-token vocabulary: one block per attribute (one token per class) then
// filler tokens.
inline constexpr std::size_t kVocabSize = 64;
std::size_t attribute_token(std::size_t attribute, std::size_t cls);
std::size_t filler_token(std::size_t k);
std::size_t filler_count();
const std::vector<std::string>& vocabulary();
std::string token_word(std::size_t token);

using Sentence = std::vector<std::uint32_t>;

struct Patient {
  std::vector<double> z;
  std::vector<double> x;  // image features, W z + noise
  std::array<int, kNumAttributes> labels{};
  int malignant = 0;
  int aggressive = 0;
  std::vector<Sentence> report;               // one sentence per attribute
  std::vector<std::vector<Sentence>> shuffles;  // four reorderings of `report`
  std::vector<char> phase_tags;
  std::vector<std::vector<double>> phase_features;
  double event_time = 0.0;
  double censor_time = 0.0;  // +inf without censoring
  double time = 0.0;
  int event = 0;
  double risk = 0.0;  // beta . z
};

struct SynthCohort {
  SynthConfig config;
  std::uint64_t seed = 0;
  Matrix w;                                    // feature_dim x latent_dim
  std::vector<std::vector<double>> directions;  // unit attribute directions
  std::vector<std::vector<double>> cuts;        // standard-normal quantile cuts
  std::vector<Patient> patients;
  std::uint64_t fingerprint = 0;

  std::size_t size() const { return patients.size(); }
  Matrix features() const;
  std::vector<std::uint32_t> tokens(std::size_t i) const;  // report in original order
  std::vector<std::uint32_t> tokens(std::size_t i, std::size_t version) const;  // 0 original, 1..4 shuffles
  std::string text(std::size_t i) const;
  std::vector<double> times() const;
  std::vector<int> events() const;
  std::vector<int> malignancy() const;
  std::vector<int> attribute_labels(std::size_t attribute) const;
};

SynthCohort gen_cohort(std::size_t n, std::uint64_t seed, const SynthConfig& config = {});

// Content hash of a cohort; gen_cohort stores it in `fingerprint`.
std::uint64_t cohort_fingerprint(const SynthCohort& c);

struct OracleScores {
  std::vector<double> linear_predictor;  // beta . z
  std::vector<double> malignancy_score;  // latent coordinate behind the malignancy bins
  std::vector<double> p_malignant;       // P(malignant | z), 0/1 by construction
  std::vector<std::array<std::vector<double>, kNumAttributes>> posteriors;  // one-hot P(class | z)
};

// Throws std::invalid_argument for cohorts not produced (unchanged) by gen_cohort.
OracleScores oracle_scores(const SynthCohort& c);

// Standard normal quantile.
double normal_quantile(double p);

nlohmann::json ground_truth_json(const SynthCohort& c);

}  // namespace oncoclip::synth
