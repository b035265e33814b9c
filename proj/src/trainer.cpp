#include "msaec/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "msaec/error.hpp"
#include "msaec/ops.hpp"
#include "msaec/parallel.hpp"

namespace msaec {
namespace fs = std::filesystem;
using nlohmann::json;

Tensor mse_loss(const Tensor& estimate, const Tensor& target, LossReduction reduction) {
  if (estimate.shape() != target.shape()) {
    throw DimensionError("mse_loss: estimate " + shape_str(estimate.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const Tensor diff = sub(estimate, target);
  const Tensor sq = mul(diff, diff);
  return reduction == LossReduction::kSum ? sum(sq) : mean(sq);
}

OptimizerState adam_init(const std::vector<Tensor>& params, const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(const std::vector<Tensor>& params, const Gradients& grads, OptimizerState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                         " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                           " entries, parameter has " + std::to_string(params[i].numel()));
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correct1;
      const double v_hat = v[k] / correct2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (!(lr_end > 0.0 && lr_start > lr_end)) throw ContractError("train config: need lr_start > lr_end > 0");
  if (early_stop_patience < 1) throw ContractError("train config: early_stop_patience must be >= 1");
  if (epochs_max < 1) throw ContractError("train config: epochs_max must be >= 1");
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (checkpoint_every < 1) throw ContractError("train config: checkpoint_every must be >= 1");
  if (grad_clip < 0.0) throw ContractError("train config: grad_clip must be >= 0");
}

std::vector<std::string> train_config_keys() {
  return {"epochs_max", "lr_start", "lr_end",   "early_stop_patience", "batch_size",
          "seed",       "checkpoint_every", "loss", "grad_clip",           "jobs"};
}

json to_json(const TrainConfig& c) {
  return {{"epochs_max", c.epochs_max},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"early_stop_patience", c.early_stop_patience},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"loss", c.loss == LossReduction::kSum ? "sum" : "mean"},
          {"grad_clip", c.grad_clip},
          {"jobs", c.jobs}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("train config must be a JSON object");
  const auto keys = train_config_keys();
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      std::string valid;
      for (const auto& k : keys) valid += (valid.empty() ? "" : ", ") + k;
      throw ContractError("unknown train config key '" + key + "'; valid keys: " + valid);
    }
  }
  TrainConfig c;
  try {
    c.epochs_max = j.value("epochs_max", c.epochs_max);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.jobs = j.value("jobs", c.jobs);
    const std::string loss = j.value("loss", std::string("mean"));
    if (loss != "mean" && loss != "sum") throw ContractError("train config: loss must be 'mean' or 'sum'");
    c.loss = loss == "sum" ? LossReduction::kSum : LossReduction::kMean;
  } catch (const json::exception& e) {
    throw ContractError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs_max) {
    throw ContractError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(config.epochs_max) + ")");
  }
  if (epoch == 0) return config.lr_start;
  if (epoch + 1 == config.epochs_max) return config.lr_end;
  const double frac = static_cast<double>(epoch) / static_cast<double>(config.epochs_max - 1);
  return config.lr_start * std::pow(config.lr_end / config.lr_start, frac);
}

bool early_stop_check(const std::vector<double>& val_losses, std::size_t patience) {
  if (val_losses.empty()) return false;
  double best = val_losses.front();
  std::size_t stagnant = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    if (val_losses[i] < best) {
      best = val_losses[i];
      stagnant = 0;
    } else {
      ++stagnant;
    }
  }
  return stagnant >= patience;
}

std::vector<double> TrainLog::val_losses() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.val_loss);
  return out;
}

namespace {

json epoch_to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},         {"train_loss", e.train_loss},     {"val_loss", e.val_loss},
          {"lr", e.lr},               {"wall_seconds", e.wall_seconds}, {"best", e.best}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<std::size_t>();
  e.train_loss = j.at("train_loss").get<double>();
  e.val_loss = j.at("val_loss").get<double>();
  e.lr = j.at("lr").get<double>();
  e.wall_seconds = j.at("wall_seconds").get<double>();
  e.best = j.at("best").get<bool>();
  return e;
}

}  // namespace

std::string TrainLog::to_lines() const {
  std::string out;
  for (const auto& e : epochs) out += epoch_to_json(e).dump() + "\n";
  return out;
}

std::vector<TrainItem> make_train_items(const std::vector<Utterance>& utterances) {
  std::vector<TrainItem> items;
  for (const auto& u : utterances) {
    if (u.far.size() != u.mixture.size() || u.near.size() != u.mixture.size()) {
      throw DimensionError(u.id + ": far, mixture and near lengths differ");
    }
    items.push_back({u.id, Tensor::from({1, u.far.size()}, u.far), Tensor::from({1, u.mixture.size()}, u.mixture),
                     Tensor::from({1, u.near.size()}, u.near)});
  }
  return items;
}

namespace {

double item_loss(const ModelParams& params, const TrainItem& item, LossReduction reduction) {
  const Tensor estimate = forward_full(item.mixture, item.far, params).estimate;
  return mse_loss(estimate, slice(item.near, 1, 0, estimate.dim(1)), reduction).item();
}

}  // namespace

StepResult batch_gradients(const ModelParams& params, const std::vector<const TrainItem*>& batch,
                           LossReduction reduction, std::size_t jobs) {
  if (batch.empty()) throw ContractError("empty batch");
  std::vector<double> losses(batch.size());
  std::vector<Gradients> per_item(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t b) {
    const TrainItem& item = *batch[b];
    ModelParams local = params.clone();
    const auto tensors = local.tensors();
    for (auto t : tensors) t.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    const Tensor estimate = forward_full(item.mixture, item.far, local).estimate;
    const Tensor loss = mse_loss(estimate, slice(item.near, 1, 0, estimate.dim(1)), reduction);
    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss on item '" + item.id + "'");
    tape.backward(loss);
    losses[b] = loss.item();
    Gradients& g = per_item[b];
    for (const auto& t : tensors) {
      g.emplace_back(t.numel(), 0.0);
      if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.back().begin());
    }
  });
  StepResult r;
  r.grads = std::move(per_item[0]);
  r.loss = losses[0];
  for (std::size_t b = 1; b < batch.size(); ++b) {
    r.loss += losses[b];
    for (std::size_t i = 0; i < r.grads.size(); ++i) {
      for (std::size_t k = 0; k < r.grads[i].size(); ++k) r.grads[i][k] += per_item[b][i][k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  r.loss *= inv;
  for (auto& g : r.grads) {
    for (double& x : g) x *= inv;
  }
  return r;
}

double evaluate_loss(const ModelParams& params, const std::vector<TrainItem>& items, LossReduction reduction,
                     std::size_t jobs) {
  if (items.empty()) throw ContractError("no items to evaluate");
  std::vector<double> losses(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    losses[i] = item_loss(params, items[i], reduction);
    if (!std::isfinite(losses[i])) throw NumericError("non-finite loss on item '" + items[i].id + "'");
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(items.size());
}

namespace {

constexpr char kStateMagic[8] = {'M', 'S', 'A', 'E', 'T', 'R', 'S', '1'};

struct TrainState {
  std::size_t next_epoch = 0;
  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
};

json config_identity(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("jobs");
  j.erase("epochs_max");
  return j;
}

class StateWriter {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void bytes(std::span<const std::uint8_t> b) {
    u64(b.size());
    raw(b.data(), b.size());
  }
  void text(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  const std::string& data() const { return out_; }

 private:
  std::string out_;
};

class StateReader {
 public:
  explicit StateReader(std::string data) : in_(std::move(data)) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IoError("training state truncated");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, in_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> doubles() {
    const std::size_t n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::string text() {
    const std::size_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string in_;
  std::size_t pos_ = 0;
};

void copy_values(const std::vector<double>& src, Tensor dst, const std::string& what) {
  if (src.size() != dst.numel()) throw IoError("training state: size mismatch in " + what);
  std::copy(src.begin(), src.end(), dst.mutable_data().begin());
}

void save_state(const std::string& path, const TrainConfig& config, const ModelParams& params,
                const ModelParams& best, const OptimizerState& opt, const TrainState& state) {
  StateWriter w;
  w.raw(kStateMagic, sizeof kStateMagic);
  w.bytes(serialize_checkpoint(params));
  w.text(config_identity(config).dump());
  w.u64(state.next_epoch);
  w.f64(state.best_val);
  w.u64(state.log.best_epoch);
  w.f64(state.log.best_val_loss);
  w.u64(opt.step);
  const auto p = params.tensors(), b = best.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.doubles(p[i].data());
    w.doubles(b[i].data());
    w.doubles(opt.m[i]);
    w.doubles(opt.v[i]);
  }
  w.text(state.log.to_lines());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!f) throw IoError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

void load_state(const std::string& path, const TrainConfig& config, ModelParams& params, ModelParams& best,
                OptimizerState& opt, TrainState& state) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open training state " + path);
  StateReader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  if (r.raw(sizeof kStateMagic) != std::string(kStateMagic, sizeof kStateMagic)) {
    throw IoError(path + ": not a training state file");
  }
  const std::string ckpt = r.text();
  const ModelParams saved = deserialize_checkpoint(
      std::span(reinterpret_cast<const std::uint8_t*>(ckpt.data()), ckpt.size()));
  if (!(saved.config == params.config)) throw ContractError(path + ": model config differs from the resumed run");
  if (r.text() != config_identity(config).dump()) {
    throw ContractError(path + ": training config differs from the resumed run");
  }
  state.next_epoch = r.u64();
  state.best_val = r.f64();
  state.log.best_epoch = r.u64();
  state.log.best_val_loss = r.f64();
  opt.step = r.u64();
  const auto p = params.tensors(), b = best.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    copy_values(r.doubles(), p[i], "parameters");
    copy_values(r.doubles(), b[i], "best parameters");
    opt.m[i] = r.doubles();
    opt.v[i] = r.doubles();
    if (opt.m[i].size() != p[i].numel() || opt.v[i].size() != p[i].numel()) {
      throw IoError("training state: size mismatch in optimizer moments");
    }
  }
  std::istringstream lines(r.text());
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) state.log.epochs.push_back(epoch_from_json(json::parse(line)));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

}  // namespace

TrainResult train(const ModelConfig& model_config, const std::vector<TrainItem>& train_items,
                  const std::vector<TrainItem>& val_items, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  model_config.validate();
  if (train_items.empty()) throw ContractError("training set is empty");
  if (val_items.empty()) throw ContractError("validation set is empty");
  const bool persist = !options.out_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir);
  }
  const fs::path out(options.out_dir);

  ModelParams params = init_params(model_config, config.seed);
  ModelParams best = params.clone();
  const std::vector<Tensor> tensors = params.tensors();
  OptimizerState opt = adam_init(tensors);
  TrainState state;
  if (options.resume) {
    if (!persist) throw ContractError("resume needs an output directory");
    load_state((out / kTrainStateName).string(), config, params, best, opt, state);
  }

  TrainResult result;
  std::vector<std::size_t> order(train_items.size());
  for (std::size_t epoch = state.next_epoch; epoch < config.epochs_max; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, config);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const TrainItem*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        batch.push_back(&train_items[order[k]]);
      }
      StepResult step = batch_gradients(params, batch, config.loss, config.jobs);
      clip_global_norm(step.grads, config.grad_clip);
      adam_step(tensors, step.grads, opt, lr);
      loss_sum += step.loss * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_items.size());
    rec.val_loss = evaluate_loss(params, val_items, config.loss, config.jobs);
    if (rec.val_loss < state.best_val) {
      state.best_val = rec.val_loss;
      rec.best = true;
      state.log.best_epoch = epoch;
      state.log.best_val_loss = rec.val_loss;
      best = params.clone();
      if (persist) save_checkpoint((out / kBestCheckpointName).string(), best);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.epochs.push_back(rec);
    state.next_epoch = epoch + 1;

    const bool stop = early_stop_check(state.log.val_losses(), config.early_stop_patience);
    const bool keep_going = !options.on_epoch_end || options.on_epoch_end(rec);
    if (persist) {
      write_text(out / kTrainLogName, state.log.to_lines());
      if (!keep_going || stop || state.next_epoch % config.checkpoint_every == 0 ||
          state.next_epoch == config.epochs_max) {
        save_state((out / kTrainStateName).string(), config, params, best, opt, state);
      }
    }
    if (stop) {
      result.stopped_early = true;
      break;
    }
    if (!keep_going) break;
  }
  result.params = std::move(best);
  result.log = std::move(state.log);
  return result;
}

}  // namespace msaec
