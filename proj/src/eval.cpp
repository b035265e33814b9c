#include "msaec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>
#include <sys/wait.h>

#include "msaec/error.hpp"
#include "msaec/parallel.hpp"

namespace msaec {
namespace fs = std::filesystem;

double erle_db(std::span<const double> mic, std::span<const double> residual, const std::vector<Region>& regions) {
  if (mic.size() != residual.size()) {
    throw DimensionError("erle: mic has " + std::to_string(mic.size()) + " samples, residual " +
                         std::to_string(residual.size()));
  }
  if (total_length(regions) == 0) throw ContractError("erle: no single-talk samples");
  for (const Region& r : regions) {
    if (r.end > mic.size()) throw DimensionError("erle: region past the end of the signal");
  }
  const double p_mic = mean_power(mic, regions);
  const double p_res = mean_power(residual, regions);
  if (p_res < kPowerFloor) return kErleCapDb;
  return std::min(kErleCapDb, 10.0 * std::log10(std::max(p_mic, kPowerFloor) / p_res));
}

void NlmsConfig::validate() const {
  if (taps == 0) throw ContractError("nlms: taps must be positive");
  if (!(mu > 0.0 && mu < 2.0)) throw ContractError("nlms: step size must lie in (0, 2), got " + std::to_string(mu));
  if (!(delta > 0.0)) throw ContractError("nlms: regularization must be positive");
}

Waveform nlms_cancel(std::span<const double> far, std::span<const double> mic, const NlmsConfig& config,
                     std::vector<double>* weights) {
  config.validate();
  if (far.size() != mic.size()) {
    throw DimensionError("nlms: far has " + std::to_string(far.size()) + " samples, mic " +
                         std::to_string(mic.size()));
  }
  if (config.taps > far.size()) {
    throw DimensionError("nlms: " + std::to_string(config.taps) + " taps exceed the signal length " +
                         std::to_string(far.size()));
  }
  const std::size_t taps = config.taps;
  std::vector<double> w(taps, 0.0);
  if (weights && !weights->empty()) {
    if (weights->size() != taps) throw DimensionError("nlms: initial weights do not match the tap count");
    w = *weights;
  }
  // Delay line x[k] = far(n - k).
  std::vector<double> x(taps, 0.0);
  Waveform e(mic.size());
  double energy = 0.0;
  for (std::size_t n = 0; n < mic.size(); ++n) {
    energy -= x[taps - 1] * x[taps - 1];
    std::copy_backward(x.begin(), x.end() - 1, x.end());
    x[0] = far[n];
    energy = std::max(0.0, energy + x[0] * x[0]);
    if (n % taps == 0) {
      energy = 0.0;
      for (double v : x) energy += v * v;
    }
    double y = 0.0;
    for (std::size_t k = 0; k < taps; ++k) y += w[k] * x[k];
    e[n] = mic[n] - y;
    const double g = config.mu * e[n] / (energy + config.delta);
    for (std::size_t k = 0; k < taps; ++k) w[k] += g * x[k];
  }
  if (weights) *weights = std::move(w);
  return e;
}

std::optional<double> parse_pesq_output(const std::string& output) {
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  std::istringstream in(output);
  std::string line;
  std::optional<double> found;
  while (std::getline(in, line)) {
    const auto eq = line.rfind('=');
    const std::string tail = eq == std::string::npos ? line : line.substr(eq + 1);
    std::smatch m;
    if (eq != std::string::npos) {
      if (std::regex_search(tail, m, number)) found = std::stod(m.str());
      continue;
    }
    std::optional<double> last;
    for (auto it = std::sregex_iterator(line.begin(), line.end(), number); it != std::sregex_iterator(); ++it) {
      last = std::stod(it->str());
    }
    if (last) found = last;
  }
  return found;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

double run_pesq_scorer(const std::string& scorer, const std::string& clean_wav, const std::string& degraded_wav) {
  const std::string cmd =
      shell_quote(scorer) + " +16000 " + shell_quote(clean_wav) + " " + shell_quote(degraded_wav) + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("cannot run scorer " + scorer);
  std::string output;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, got);
  const int status = pclose(pipe);
  if (status != 0) {
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    throw IoError("scorer " + scorer + " exited with status " + std::to_string(code) + " on " + degraded_wav);
  }
  const auto score = parse_pesq_output(output);
  if (!score) throw IoError("scorer " + scorer + " printed no score for " + degraded_wav);
  return *score;
}

PesqResult delta_pesq(const std::string& estimate_wav, const std::string& clean_wav, const std::string& mixture_wav,
                      const std::string& scorer) {
  PesqResult r;
  if (scorer.empty()) {
    r.reason = "no scorer configured";
    return r;
  }
  r.pesq = run_pesq_scorer(scorer, clean_wav, estimate_wav);
  r.delta_pesq = r.pesq - run_pesq_scorer(scorer, clean_wav, mixture_wav);
  r.available = true;
  return r;
}

EvalMethod identity_method() { return {MethodKind::kIdentity, "identity", nullptr, {}}; }

EvalMethod nlms_method(const NlmsConfig& config) {
  config.validate();
  return {MethodKind::kNlms, "nlms", nullptr, config};
}

EvalMethod model_method(const ModelParams& params, const std::string& tag) {
  return {MethodKind::kModel, tag, &params, {}};
}

Waveform run_method(const EvalMethod& method, std::span<const double> far, std::span<const double> mixture) {
  switch (method.kind) {
    case MethodKind::kIdentity:
      return Waveform(mixture.begin(), mixture.end());
    case MethodKind::kNlms:
      return nlms_cancel(far, mixture, method.nlms);
    case MethodKind::kModel: {
      if (!method.params) throw ContractError("model method without parameters");
      const std::size_t n = mixture.size();
      const Tensor est = forward_full(Tensor::from({1, n}, Waveform(mixture.begin(), mixture.end())),
                                      Tensor::from({1, n}, Waveform(far.begin(), far.end())), *method.params)
                             .estimate;
      Waveform out(est.data().begin(), est.data().end());
      out.resize(n, 0.0);
      return out;
    }
  }
  throw ContractError("unknown method");
}

std::vector<EvalAggregate> EvalReport::aggregates() const {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  }
  std::vector<EvalAggregate> out;
  for (const auto& method : order) {
    std::map<double, std::vector<const EvalRow*>> by_ser;
    for (const auto& r : rows) {
      if (r.method == method) by_ser[r.ser_db].push_back(&r);
    }
    for (const auto& [ser, group] : by_ser) {
      EvalAggregate a;
      a.method = method;
      a.ser_db = ser;
      double db_sum = 0.0, ratio_sum = 0.0, dp_sum = 0.0;
      std::size_t dp_count = 0;
      for (const EvalRow* r : group) {
        if (r->erle_db) {
          ++a.count;
          db_sum += *r->erle_db;
          ratio_sum += std::pow(10.0, *r->erle_db / 10.0);
        }
        if (r->delta_pesq) {
          ++dp_count;
          dp_sum += *r->delta_pesq;
        }
      }
      if (a.count > 0) {
        a.mean_erle_db = db_sum / static_cast<double>(a.count);
        a.erle_of_mean_db = 10.0 * std::log10(ratio_sum / static_cast<double>(a.count));
      }
      if (dp_count > 0) a.mean_delta_pesq = dp_sum / static_cast<double>(dp_count);
      out.push_back(a);
    }
  }
  return out;
}

namespace {

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string opt_fixed(const std::optional<double>& v, int digits = 2) { return v ? fixed(*v, digits) : "n/a"; }

}  // namespace

std::string EvalReport::table() const {
  const std::vector<std::string> head{"method", "SER(dB)", "items", "ERLE(dB)", "ERLE-pooled(dB)", "dPESQ"};
  std::vector<std::vector<std::string>> cells{head};
  for (const auto& a : aggregates()) {
    cells.push_back({a.method, fixed(a.ser_db, 1), std::to_string(a.count), fixed(a.mean_erle_db),
                     fixed(a.erle_of_mean_db), opt_fixed(a.mean_delta_pesq)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << "\n";
  }
  out << "PESQ: " << pesq_status << "\n";
  for (const auto& f : failures) out << "FAILED " << f.id << ": " << f.message << "\n";
  return out.str();
}

std::string EvalReport::csv() const {
  std::ostringstream out;
  out << "id,method,ser_db,erle_db,pesq,delta_pesq\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.id << "," << r.method << "," << r.ser_db << ",";
    if (r.erle_db) out << *r.erle_db;
    out << ",";
    if (r.pesq) out << *r.pesq;
    out << ",";
    if (r.delta_pesq) out << *r.delta_pesq;
    out << "\n";
  }
  return out.str();
}

EvalReport evaluate_dataset(const std::string& manifest_path, const std::vector<EvalMethod>& methods,
                            const EvalOptions& options) {
  if (methods.empty()) throw ContractError("no evaluation methods");
  const auto records = read_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  const bool scoring = !options.scorer.empty();
  fs::path work = options.work_dir.empty() ? fs::temp_directory_path() / "msaec_eval" : fs::path(options.work_dir);
  if (scoring) fs::create_directories(work);

  struct ItemResult {
    std::vector<EvalRow> rows;
    std::vector<EvalFailure> failures;
  };
  std::vector<ItemResult> results(records.size());
  parallel_for(records.size(), options.jobs, [&](std::size_t i) {
    const ManifestRecord& rec = records[i];
    ItemResult& out = results[i];
    Waveform far, mixture;
    try {
      far = read_wav((dir / rec.far_path).string()).samples;
      mixture = read_wav((dir / rec.mixture_path).string()).samples;
      if (far.size() != mixture.size()) throw IoError("far and mixture lengths differ");
    } catch (const std::exception& e) {
      out.failures.push_back({rec.spec.id, e.what()});
      return;
    }
    const std::string near_path = (dir / rec.near_path).string();
    const std::string mix_path = (dir / rec.mixture_path).string();
    std::optional<double> mix_score;
    if (scoring) {
      try {
        mix_score = run_pesq_scorer(options.scorer, near_path, mix_path);
      } catch (const std::exception& e) {
        out.failures.push_back({rec.spec.id, e.what()});
      }
    }
    for (const auto& method : methods) {
      EvalRow row;
      row.id = rec.spec.id;
      row.method = method.tag;
      row.ser_db = rec.spec.ser_db;
      Waveform estimate;
      try {
        estimate = run_method(method, far, mixture);
      } catch (const std::exception& e) {
        out.failures.push_back({rec.spec.id, method.tag + ": " + e.what()});
        continue;
      }
      if (total_length(rec.single_talk) > 0) {
        row.mic_power = mean_power(mixture, rec.single_talk);
        row.residual_power = mean_power(estimate, rec.single_talk);
        row.erle_db = erle_db(mixture, estimate, rec.single_talk);
      }
      if (mix_score) {
        try {
          if (method.kind == MethodKind::kIdentity) {
            row.pesq = mix_score;
          } else {
            const std::string est_path = (work / (rec.spec.id + "_" + method.tag + ".wav")).string();
            write_wav(est_path, estimate);
            row.pesq = run_pesq_scorer(options.scorer, near_path, est_path);
          }
          row.delta_pesq = *row.pesq - *mix_score;
        } catch (const std::exception& e) {
          out.failures.push_back({rec.spec.id, method.tag + ": " + e.what()});
        }
      }
      out.rows.push_back(std::move(row));
    }
  });

  EvalReport report;
  report.pesq_status = scoring ? "ok" : "unavailable: no scorer configured";
  for (auto& r : results) {
    for (auto& row : r.rows) report.rows.push_back(std::move(row));
    for (auto& f : r.failures) report.failures.push_back(std::move(f));
  }
  return report;
}

}  // namespace msaec
