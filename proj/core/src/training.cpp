#include "midline/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "io_util.hpp"
#include "midline/decode.hpp"
#include "midline/metrics.hpp"
#include "midline/preprocess.hpp"
#include "net_core.hpp"

namespace midline {

using detail::Grads;
using detail::Net;
using detail::Plane;
using detail::Workspace;

namespace {

constexpr double kBceClamp = 1e-7;

// Shared single-slice loss/gradient kernel. Gradient outputs may be null.
// reg is the interval-MSE of the expectation (0 for an empty interval), bce
// the per-row mean cross-entropy; both unweighted and per-slice. Gradients
// include the lambda weights and the 1/batch averaging.
template <typename T>
void slice_loss_kernel(const T* logits, const T* limits_logits, int rows, int cols,
                       const MidlineAnnotation& ann, const LossWeights& w, int batch_size,
                       double* reg_out, double* bce_out, T* d_logits, T* d_limits) {
  const int len = ann.interval.length();
  double reg = 0.0;
  std::vector<double> p(static_cast<size_t>(cols));
  for (int y = 0; y < rows; ++y) {
    const T* row = logits + static_cast<size_t>(y) * cols;
    const bool in_interval = ann.interval.contains(y);
    if (!in_interval && !d_logits) continue;  // row does not affect the loss
    double m = static_cast<double>(row[0]);
    for (int x = 1; x < cols; ++x) m = std::max(m, static_cast<double>(row[x]));
    double sum = 0.0;
    for (int x = 0; x < cols; ++x) {
      p[static_cast<size_t>(x)] = std::exp(static_cast<double>(row[x]) - m);
      sum += p[static_cast<size_t>(x)];
    }
    double ex = 0.0;
    for (int x = 0; x < cols; ++x) {
      p[static_cast<size_t>(x)] /= sum;
      ex += x * p[static_cast<size_t>(x)];
    }
    if (d_logits) {
      T* d = d_logits + static_cast<size_t>(y) * cols;
      if (in_interval) {
        const double diff = ann.x_at(y) - ex;
        reg += diff * diff / len;
        const double coeff = w.lambda1 * (-2.0 * diff) / (static_cast<double>(len) * batch_size);
        for (int x = 0; x < cols; ++x)
          d[x] = static_cast<T>(coeff * p[static_cast<size_t>(x)] * (x - ex));
      } else {
        std::fill(d, d + cols, T(0));
      }
    } else if (in_interval) {
      const double diff = ann.x_at(y) - ex;
      reg += diff * diff / len;
    }
  }

  double bce = 0.0;
  for (int y = 0; y < rows; ++y) {
    const double z = static_cast<double>(limits_logits[y]);
    const double t = ann.interval.contains(y) ? 1.0 : 0.0;
    const double prob = 1.0 / (1.0 + std::exp(-z));
    const double pc = std::clamp(prob, kBceClamp, 1.0 - kBceClamp);
    bce -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    if (d_limits) {
      const bool clamped = prob < kBceClamp || prob > 1.0 - kBceClamp;
      d_limits[y] = clamped ? T(0)
                            : static_cast<T>(w.lambda2 * (prob - t) /
                                             (static_cast<double>(rows) * batch_size));
    }
  }
  *reg_out = reg;
  *bce_out = bce / rows;
}

}  // namespace

LossParts combined_loss(const NetworkOutputs& outputs,
                        std::span<const MidlineAnnotation> targets,
                        const LossWeights& weights) {
  if (static_cast<size_t>(outputs.batch) != targets.size())
    throw Error("combined_loss: batch/targets size mismatch");
  if (outputs.batch == 0) throw Error("combined_loss: empty batch");

  double reg_sum = 0.0, bce_sum = 0.0;
  for (int b = 0; b < outputs.batch; ++b) {
    const auto& ann = targets[static_cast<size_t>(b)];
    if (!ann.is_empty() && (ann.interval.y_lo < 0 || ann.interval.y_hi >= outputs.rows))
      throw Error("combined_loss: target interval outside the output rows");
    const float* prob = outputs.midline_prob.data() +
                        static_cast<size_t>(b) * outputs.rows * outputs.cols;
    if (!ann.is_empty()) {
      double reg = 0.0;
      for (int y = ann.interval.y_lo; y <= ann.interval.y_hi; ++y) {
        const float* row = prob + static_cast<size_t>(y) * outputs.cols;
        double ex = 0.0;
        for (int x = 0; x < outputs.cols; ++x) ex += static_cast<double>(x) * row[x];
        const double diff = ann.x_at(y) - ex;
        reg += diff * diff;
      }
      reg_sum += reg / ann.interval.length();
    }
    double bce = 0.0;
    for (int y = 0; y < outputs.rows; ++y) {
      const double t = ann.interval.contains(y) ? 1.0 : 0.0;
      const double pc = std::clamp(
          static_cast<double>(outputs.limits_prob[static_cast<size_t>(b) * outputs.rows + y]),
          kBceClamp, 1.0 - kBceClamp);
      bce -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    bce_sum += bce / outputs.rows;
  }
  LossParts parts;
  parts.reg = reg_sum / outputs.batch;
  parts.bce = bce_sum / outputs.batch;
  parts.total = weights.lambda1 * parts.reg + weights.lambda2 * parts.bce;
  return parts;
}

LossParts slice_loss_from_logits(const Grid<double>& midline_logits,
                                 std::span<const double> limits_logits,
                                 const MidlineAnnotation& target, const LossWeights& weights,
                                 int batch_size) {
  if (limits_logits.size() != static_cast<size_t>(midline_logits.rows))
    throw Error("slice_loss_from_logits: limits length mismatch");
  LossParts parts;
  slice_loss_kernel<double>(midline_logits.data.data(), limits_logits.data(),
                            midline_logits.rows, midline_logits.cols, target, weights,
                            batch_size, &parts.reg, &parts.bce, nullptr, nullptr);
  parts.total = weights.lambda1 * parts.reg + weights.lambda2 * parts.bce;
  return parts;
}

void slice_loss_gradients(const Grid<double>& midline_logits,
                          std::span<const double> limits_logits,
                          const MidlineAnnotation& target, const LossWeights& weights,
                          int batch_size, Grid<double>* d_midline_logits,
                          std::vector<double>* d_limits_logits) {
  if (!d_midline_logits || !d_limits_logits)
    throw Error("slice_loss_gradients: null outputs");
  *d_midline_logits = Grid<double>(midline_logits.rows, midline_logits.cols);
  d_limits_logits->assign(limits_logits.size(), 0.0);
  double reg = 0.0, bce = 0.0;
  slice_loss_kernel<double>(midline_logits.data.data(), limits_logits.data(),
                            midline_logits.rows, midline_logits.cols, target, weights,
                            batch_size, &reg, &bce, d_midline_logits->data.data(),
                            d_limits_logits->data());
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw Error("TrainConfig: negative learning rate");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw Error("TrainConfig: betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw Error("TrainConfig: adam_eps must be positive");
  if (batch_size < 1) throw Error("TrainConfig: batch_size must be positive");
  if (iterations < 1) throw Error("TrainConfig: iterations must be positive");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
    throw Error("TrainConfig: flip_prob outside [0, 1]");
  if (validation_every < 0) throw Error("TrainConfig: negative validation cadence");
  if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0)
    throw Error("TrainConfig: negative loss weights");
}

namespace {

struct AdamState {
  Grads<float> m, v;
};

void adam_step(Net<float>& net, const Grads<float>& grads, AdamState& state,
               const TrainConfig& tc, int t) {
  const double bc1 = 1.0 - std::pow(tc.beta1, t);
  const double bc2 = 1.0 - std::pow(tc.beta2, t);
  const float b1 = static_cast<float>(tc.beta1);
  const float b2 = static_cast<float>(tc.beta2);
  const float lr = static_cast<float>(tc.learning_rate);
  const float eps = static_cast<float>(tc.adam_eps);
  const float ibc1 = static_cast<float>(1.0 / bc1);
  const float ibc2 = static_cast<float>(1.0 / bc2);
  for (size_t s = 0; s < grads.slots.size(); ++s) {
    auto& p = *net.params[s];
    auto& m = state.m.slots[s];
    auto& v = state.v.slots[s];
    const auto& g = grads.slots[s];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] * ibc1) / (std::sqrt(v[i] * ibc2) + eps);
    }
  }
}

void check_sample(const TrainSample& s, const ModelConfig& mc) {
  if (s.image.rows != mc.input_rows || s.image.cols != mc.input_cols)
    throw Error("train: sample size " + std::to_string(s.image.rows) + "x" +
                std::to_string(s.image.cols) + " does not match the model input");
  s.annotation.validate(s.image.rows, s.image.cols);
}

std::vector<std::vector<float>> snapshot_params(const Net<float>& net) {
  std::vector<std::vector<float>> out;
  out.reserve(net.params.size());
  for (const auto* p : net.params) out.push_back(*p);
  return out;
}

void restore_params(Net<float>& net, const std::vector<std::vector<float>>& snap) {
  for (size_t i = 0; i < snap.size(); ++i) *net.params[i] = snap[i];
}

}  // namespace

double validation_rmses(const Model& model, std::span<const TrainSample> samples,
                        int threads) {
  const auto& cfg = model.config();
  std::vector<double> rmses;
  constexpr int kChunk = 16;
  std::vector<ImageF> chunk;
  std::vector<const MidlineAnnotation*> anns;
  auto flush = [&]() {
    if (chunk.empty()) return;
    const NetworkOutputs out = model.forward(chunk, threads);
    for (int b = 0; b < out.batch; ++b) {
      const auto curve = expected_midline(out.prob_slice(b));
      rmses.push_back(curve_errors(*anns[static_cast<size_t>(b)], curve).first);
    }
    chunk.clear();
    anns.clear();
  };
  for (const auto& s : samples) {
    if (s.annotation.is_empty()) continue;
    if (s.image.rows != cfg.input_rows || s.image.cols != cfg.input_cols)
      throw Error("validation_rmses: sample does not match the model input size");
    chunk.push_back(s.image);
    anns.push_back(&s.annotation);
    if (static_cast<int>(chunk.size()) == kChunk) flush();
  }
  flush();
  if (rmses.empty()) throw Error("validation_rmses: no annotated slices");
  double sum = 0.0;
  for (double r : rmses) sum += r;
  return sum / static_cast<double>(rmses.size());
}

TrainResult train(const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& config,
                  const ModelConfig& model_config) {
  config.validate();
  model_config.validate();
  if (train_set.empty()) throw Error("train: empty dataset");
  for (const auto& s : train_set) check_sample(s, model_config);
  for (const auto& s : val_set) check_sample(s, model_config);

  Model model(model_config);
  auto& net = model.net();
  const int batch_size = config.batch_size;
  const int n_threads = detail::resolve_threads(config.threads);
  const int slots = std::max(1, std::min(n_threads, batch_size));

  std::vector<Workspace<float>> workspaces(static_cast<size_t>(slots));
  std::vector<Plane<float>> d_logits(static_cast<size_t>(slots)),
      d_limits(static_cast<size_t>(slots));
  // One gradient buffer per batch slot keeps the reduction order (and so the
  // whole run) independent of the number of worker threads.
  std::vector<Grads<float>> sample_grads(static_cast<size_t>(batch_size));
  for (auto& g : sample_grads) g.init_like(net.layout);
  Grads<float> total_grads;
  total_grads.init_like(net.layout);
  AdamState adam;
  adam.m.init_like(net.layout);
  adam.v.init_like(net.layout);

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, train_set.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::vector<TrainSample> batch(static_cast<size_t>(batch_size));
  std::vector<double> regs(static_cast<size_t>(batch_size)),
      bces(static_cast<size_t>(batch_size));

  TrainResult result{std::move(model), {}, std::nullopt, 0};
  std::vector<std::vector<float>> best_params;
  result.history.reserve(static_cast<size_t>(config.iterations));

  for (int it = 1; it <= config.iterations; ++it) {
    for (int b = 0; b < batch_size; ++b) {
      const auto& src = train_set[pick(rng)];
      if (coin(rng) < config.flip_prob) {
        auto [img, ann] = hflip(src.image, src.annotation);
        batch[static_cast<size_t>(b)] = {std::move(img), std::move(ann)};
      } else {
        batch[static_cast<size_t>(b)] = src;
      }
    }
    for (auto& g : sample_grads) g.zero();

    detail::parallel_for(batch_size, n_threads, [&](int b, int worker) {
      auto& ws = workspaces[static_cast<size_t>(worker)];
      const auto& sample = batch[static_cast<size_t>(b)];
      net.forward_sample(sample.image.data.data(), ws);
      auto& dl = d_logits[static_cast<size_t>(worker)];
      auto& dz = d_limits[static_cast<size_t>(worker)];
      dl.ensure(1, ws.logits.h, ws.logits.w);
      dz.ensure(1, ws.lim_logits.h, 1);
      slice_loss_kernel<float>(ws.logits.v.data(), ws.lim_logits.v.data(), ws.logits.h,
                               ws.logits.w, sample.annotation, config.weights, batch_size,
                               &regs[static_cast<size_t>(b)], &bces[static_cast<size_t>(b)],
                               dl.v.data(), dz.v.data());
      net.backward_sample(ws, dl, dz, sample_grads[static_cast<size_t>(b)]);
    });

    total_grads.zero();
    for (const auto& g : sample_grads)
      for (size_t s = 0; s < g.slots.size(); ++s)
        for (size_t i = 0; i < g.slots[s].size(); ++i)
          total_grads.slots[s][i] += g.slots[s][i];

    double reg = 0.0, bce = 0.0;
    for (int b = 0; b < batch_size; ++b) {
      reg += regs[static_cast<size_t>(b)];
      bce += bces[static_cast<size_t>(b)];
    }
    reg /= batch_size;
    bce /= batch_size;
    const double total = config.weights.lambda1 * reg + config.weights.lambda2 * bce;
    if (!std::isfinite(total))
      throw Error("train: non-finite loss at iteration " + std::to_string(it) +
                  " (reg=" + std::to_string(reg) + ", bce=" + std::to_string(bce) +
                  ", lr=" + std::to_string(config.learning_rate) + ")");

    adam_step(net, total_grads, adam, config, it);

    HistoryRow row{it, total, reg, bce, std::nullopt};
    const bool validate_now =
        config.validation_every > 0 && !val_set.empty() &&
        (it % config.validation_every == 0 || it == config.iterations);
    if (validate_now) {
      row.val_rmses = validation_rmses(result.model, val_set, config.threads);
      if (!result.best_val_rmses || *row.val_rmses < *result.best_val_rmses) {
        result.best_val_rmses = row.val_rmses;
        result.best_iteration = it;
        best_params = snapshot_params(net);
      }
    }
    result.history.push_back(row);
  }

  if (!best_params.empty()) restore_params(net, best_params);
  return result;
}

GradCheckResult grad_check(const Model& model, std::span<const TrainSample> batch,
                           const LossWeights& weights, double epsilon, int parameter_samples,
                           uint64_t seed) {
  if (batch.empty()) throw Error("grad_check: empty batch");
  if (!(epsilon > 0.0)) throw Error("grad_check: epsilon must be positive");
  const auto& cfg = model.config();
  for (const auto& s : batch) check_sample(s, cfg);

  Net<double> net(cfg);
  net.copy_params_from(model.net());
  const int n = static_cast<int>(batch.size());
  const int n_threads = detail::resolve_threads(0);
  const int slots = std::max(1, std::min(n_threads, n));

  std::vector<std::vector<double>> inputs(static_cast<size_t>(n));
  for (int b = 0; b < n; ++b) {
    const auto& img = batch[static_cast<size_t>(b)].image;
    inputs[static_cast<size_t>(b)].assign(img.data.begin(), img.data.end());
  }

  std::vector<Workspace<double>> workspaces(static_cast<size_t>(slots));
  std::vector<Plane<double>> d_logits(static_cast<size_t>(slots)),
      d_limits(static_cast<size_t>(slots));
  std::vector<Grads<double>> sample_grads(static_cast<size_t>(n));
  for (auto& g : sample_grads) g.init_like(net.layout);
  std::vector<double> regs(static_cast<size_t>(n)), bces(static_cast<size_t>(n));

  detail::parallel_for(n, n_threads, [&](int b, int worker) {
    auto& ws = workspaces[static_cast<size_t>(worker)];
    net.forward_sample(inputs[static_cast<size_t>(b)].data(), ws);
    auto& dl = d_logits[static_cast<size_t>(worker)];
    auto& dz = d_limits[static_cast<size_t>(worker)];
    dl.ensure(1, ws.logits.h, ws.logits.w);
    dz.ensure(1, ws.lim_logits.h, 1);
    slice_loss_kernel<double>(ws.logits.v.data(), ws.lim_logits.v.data(), ws.logits.h,
                              ws.logits.w, batch[static_cast<size_t>(b)].annotation, weights,
                              n, &regs[static_cast<size_t>(b)], &bces[static_cast<size_t>(b)],
                              dl.v.data(), dz.v.data());
    net.backward_sample(ws, dl, dz, sample_grads[static_cast<size_t>(b)]);
  });

  Grads<double> analytic;
  analytic.init_like(net.layout);
  for (const auto& g : sample_grads)
    for (size_t s = 0; s < g.slots.size(); ++s)
      for (size_t i = 0; i < g.slots[s].size(); ++i)
        analytic.slots[s][i] += g.slots[s][i];

  GradCheckResult result;
  for (const auto& s : analytic.slots)
    for (double g : s) result.analytic_grad_max_abs = std::max(result.analytic_grad_max_abs, std::abs(g));

  auto eval_loss = [&]() {
    detail::parallel_for(n, n_threads, [&](int b, int worker) {
      auto& ws = workspaces[static_cast<size_t>(worker)];
      net.forward_sample(inputs[static_cast<size_t>(b)].data(), ws);
      slice_loss_kernel<double>(ws.logits.v.data(), ws.lim_logits.v.data(), ws.logits.h,
                                ws.logits.w, batch[static_cast<size_t>(b)].annotation, weights,
                                n, &regs[static_cast<size_t>(b)],
                                &bces[static_cast<size_t>(b)], nullptr, nullptr);
    });
    double reg = 0.0, bce = 0.0;
    for (int b = 0; b < n; ++b) {
      reg += regs[static_cast<size_t>(b)];
      bce += bces[static_cast<size_t>(b)];
    }
    return (weights.lambda1 * reg + weights.lambda2 * bce) / n;
  };

  size_t total_params = 0;
  for (const auto* p : net.params) total_params += p->size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, total_params - 1);
  for (int k = 0; k < parameter_samples; ++k) {
    size_t gi = pick(rng);
    size_t slot = 0;
    while (gi >= net.params[slot]->size()) {
      gi -= net.params[slot]->size();
      ++slot;
    }
    double& p = (*net.params[slot])[gi];
    const double orig = p;
    p = orig + epsilon;
    const double lp = eval_loss();
    p = orig - epsilon;
    const double lm = eval_loss();
    p = orig;
    const double fd = (lp - lm) / (2.0 * epsilon);
    const double a = analytic.slots[slot][gi];
    const double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, rel);
    ++result.parameters_checked;
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       std::span<const HistoryRow> history) {
  std::ostringstream out;
  out << "iteration,total,reg,bce,val_rmses\n";
  char buf[160];
  for (const auto& row : history) {
    if (row.val_rmses)
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", row.iteration, row.total,
                    row.reg, row.bce, *row.val_rmses);
    else
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,\n", row.iteration, row.total,
                    row.reg, row.bce);
    out << buf;
  }
  detail::write_file_atomic(path, out.str());
}

std::pair<TrainConfig, ModelConfig> parse_train_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  TrainConfig tc;
  ModelConfig mc;

  std::map<std::string, std::function<void(const std::string&)>> handlers = {
      {"learning_rate", [&](const std::string& v) { tc.learning_rate = std::stod(v); }},
      {"beta1", [&](const std::string& v) { tc.beta1 = std::stod(v); }},
      {"beta2", [&](const std::string& v) { tc.beta2 = std::stod(v); }},
      {"adam_eps", [&](const std::string& v) { tc.adam_eps = std::stod(v); }},
      {"batch_size", [&](const std::string& v) { tc.batch_size = std::stoi(v); }},
      {"iterations", [&](const std::string& v) { tc.iterations = std::stoi(v); }},
      {"flip_prob", [&](const std::string& v) { tc.flip_prob = std::stod(v); }},
      {"seed", [&](const std::string& v) { tc.seed = std::stoull(v); }},
      {"validation_every", [&](const std::string& v) { tc.validation_every = std::stoi(v); }},
      {"lambda1", [&](const std::string& v) { tc.weights.lambda1 = std::stod(v); }},
      {"lambda2", [&](const std::string& v) { tc.weights.lambda2 = std::stod(v); }},
      {"threads", [&](const std::string& v) { tc.threads = std::stoi(v); }},
      {"input_rows", [&](const std::string& v) { mc.input_rows = std::stoi(v); }},
      {"input_cols", [&](const std::string& v) { mc.input_cols = std::stoi(v); }},
      {"depth", [&](const std::string& v) { mc.depth = std::stoi(v); }},
      {"base_channels", [&](const std::string& v) { mc.base_channels = std::stoi(v); }},
      {"shared_layers", [&](const std::string& v) { mc.shared_layers = std::stoi(v); }},
      {"model_seed",
       [&](const std::string& v) { mc.seed = static_cast<uint32_t>(std::stoul(v)); }},
  };

  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(lineno) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = handlers.find(key);
    if (it == handlers.end())
      throw Error("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    try {
      it->second(value);
    } catch (const std::exception&) {
      throw Error("config: bad value for '" + key + "' on line " + std::to_string(lineno));
    }
  }
  tc.validate();
  mc.validate();
  return {tc, mc};
}

}  // namespace midline
