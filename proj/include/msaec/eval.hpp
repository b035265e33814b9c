#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msaec/datagen.hpp"
#include "msaec/model.hpp"

namespace msaec {

inline constexpr double kErleCapDb = 100.0;
inline constexpr double kPowerFloor = 1e-20;

// 10 log10(P_mic / P_residual) over the union of regions, capped at
// kErleCapDb.
double erle_db(std::span<const double> mic, std::span<const double> residual, const std::vector<Region>& regions);

struct NlmsConfig {
  std::size_t taps = 512;
  double mu = 0.5;      // step size, (0, 2)
  double delta = 1e-6;  // regularization

  void validate() const;
};

// Residual e(n) = mic(n) - w^T x_n with normalized LMS adaptation of w.
// `weights`, when given, supplies the initial filter (empty: zeros) and
// receives the final one.
Waveform nlms_cancel(std::span<const double> far, std::span<const double> mic, const NlmsConfig& config,
                     std::vector<double>* weights = nullptr);

// ---- PESQ adapter ----

// Runs `scorer +16000 <clean> <degraded>` and returns the score from its
// last line carrying a number (the first number after '=' on that line when
// present). Throws IoError on a nonzero exit or unparseable output.
double run_pesq_scorer(const std::string& scorer, const std::string& clean_wav, const std::string& degraded_wav);

// Parses scorer stdout; nullopt when no score line is found.
std::optional<double> parse_pesq_output(const std::string& output);

struct PesqResult {
  bool available = false;
  double pesq = 0.0;        // processed vs clean
  double delta_pesq = 0.0;  // pesq minus the unprocessed mixture's score
  std::string reason;       // why unavailable
};

PesqResult delta_pesq(const std::string& estimate_wav, const std::string& clean_wav, const std::string& mixture_wav,
                      const std::string& scorer);

// ---- Dataset evaluation ----

enum class MethodKind { kModel, kNlms, kIdentity };

struct EvalMethod {
  MethodKind kind = MethodKind::kIdentity;
  std::string tag;                     // label in reports
  const ModelParams* params = nullptr;  // kModel
  NlmsConfig nlms;                     // kNlms
};

EvalMethod identity_method();
EvalMethod nlms_method(const NlmsConfig& config = {});
EvalMethod model_method(const ModelParams& params, const std::string& tag = "model");

// Residual/estimate of one method, same length as the mixture.
Waveform run_method(const EvalMethod& method, std::span<const double> far, std::span<const double> mixture);

struct EvalRow {
  std::string id;
  std::string method;
  double ser_db = 0.0;
  std::optional<double> erle_db;  // nullopt without single-talk regions
  std::optional<double> pesq;
  std::optional<double> delta_pesq;
  double mic_power = 0.0;       // over single-talk regions
  double residual_power = 0.0;  // over single-talk regions
};

struct EvalAggregate {
  std::string method;
  double ser_db = 0.0;
  std::size_t count = 0;
  double mean_erle_db = 0.0;     // mean of per-item dB
  double erle_of_mean_db = 0.0;  // dB of the mean per-item power ratio
  std::optional<double> mean_delta_pesq;
};

struct EvalFailure {
  std::string id;
  std::string message;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // item-major, methods in the given order
  std::vector<EvalFailure> failures;
  std::string pesq_status;  // "unavailable: ..." or "ok"

  // Grouped by method (given order) then ascending SER.
  std::vector<EvalAggregate> aggregates() const;
  std::string table() const;
  std::string csv() const;
};

struct EvalOptions {
  std::string scorer;    // empty: PESQ unavailable
  std::string work_dir;  // temporary WAVs for the scorer; empty: system temp
  std::size_t jobs = 1;
};

EvalReport evaluate_dataset(const std::string& manifest_path, const std::vector<EvalMethod>& methods,
                            const EvalOptions& options = {});

}  // namespace msaec
