#include "midline/network.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "net_core.hpp"

namespace midline {

using nlohmann::json;

void ModelConfig::validate() const {
  if (depth < 2 || depth > 6) throw Error("ModelConfig: depth must be in [2, 6]");
  if (base_channels < 1) throw Error("ModelConfig: base_channels must be positive");
  if (shared_layers < 1) throw Error("ModelConfig: shared_layers must be positive");
  const int mult = 1 << depth;
  if (input_rows < mult || input_cols < mult)
    throw Error("ModelConfig: input smaller than 2^depth");
  if (input_rows % mult != 0 || input_cols % mult != 0)
    throw Error("ModelConfig: input size " + std::to_string(input_rows) + "x" +
                std::to_string(input_cols) + " not divisible by 2^depth = " +
                std::to_string(mult));
}

ImageF NetworkOutputs::logits_slice(int b) const {
  ImageF img(rows, cols);
  std::memcpy(img.data.data(), midline_logits.data() + static_cast<size_t>(b) * rows * cols,
              sizeof(float) * img.size());
  return img;
}

ImageF NetworkOutputs::prob_slice(int b) const {
  ImageF img(rows, cols);
  std::memcpy(img.data.data(), midline_prob.data() + static_cast<size_t>(b) * rows * cols,
              sizeof(float) * img.size());
  return img;
}

std::vector<double> NetworkOutputs::limits_slice(int b) const {
  std::vector<double> out(static_cast<size_t>(rows));
  for (int y = 0; y < rows; ++y)
    out[static_cast<size_t>(y)] = limits_prob[static_cast<size_t>(b) * rows + y];
  return out;
}

ImageF row_softmax(const ImageF& logits) {
  ImageF prob(logits.rows, logits.cols);
  for (int y = 0; y < logits.rows; ++y) {
    const float* in = logits.row(y);
    float* out = prob.row(y);
    float m = in[0];
    for (int x = 1; x < logits.cols; ++x) m = std::max(m, in[x]);
    double sum = 0.0;
    for (int x = 0; x < logits.cols; ++x) {
      const double e = std::exp(static_cast<double>(in[x]) - m);
      out[x] = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int x = 0; x < logits.cols; ++x) out[x] = static_cast<float>(out[x] * inv);
  }
  return prob;
}

Model::Model(const ModelConfig& config) : net_(std::make_unique<detail::Net<float>>(config)) {}
Model::Model(const Model& other) : net_(std::make_unique<detail::Net<float>>(*other.net_)) {}
Model& Model::operator=(const Model& other) {
  if (this != &other) net_ = std::make_unique<detail::Net<float>>(*other.net_);
  return *this;
}
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

const ModelConfig& Model::config() const { return net_->cfg; }
size_t Model::parameter_count() const { return net_->parameter_count(); }
detail::Net<float>& Model::net() { return *net_; }
const detail::Net<float>& Model::net() const { return *net_; }

NetworkOutputs Model::forward(std::span<const ImageF> batch, int threads) const {
  const auto& cfg = net_->cfg;
  const int H = cfg.input_rows, W = cfg.input_cols;
  for (const auto& img : batch) {
    if (img.rows != H || img.cols != W)
      throw Error("forward: slice shape " + std::to_string(img.rows) + "x" +
                  std::to_string(img.cols) + " does not match model input " +
                  std::to_string(H) + "x" + std::to_string(W));
    for (float v : img.data)
      if (!std::isfinite(v)) throw Error("forward: non-finite input");
  }

  NetworkOutputs out;
  out.batch = static_cast<int>(batch.size());
  out.rows = H;
  out.cols = W;
  out.midline_logits.resize(static_cast<size_t>(out.batch) * H * W);
  out.midline_prob.resize(out.midline_logits.size());
  out.limits_prob.resize(static_cast<size_t>(out.batch) * H);

  const int n_threads = detail::resolve_threads(threads);
  std::vector<detail::Workspace<float>> workspaces(
      static_cast<size_t>(std::max(1, std::min(n_threads, out.batch))));
  detail::parallel_for(out.batch, n_threads, [&](int b, int worker) {
    auto& ws = workspaces[static_cast<size_t>(worker)];
    net_->forward_sample(batch[static_cast<size_t>(b)].data.data(), ws);
    std::memcpy(out.midline_logits.data() + static_cast<size_t>(b) * H * W,
                ws.logits.v.data(), sizeof(float) * ws.logits.size());
    for (int y = 0; y < H; ++y) {
      const double z = ws.lim_logits.v[static_cast<size_t>(y)];
      out.limits_prob[static_cast<size_t>(b) * H + y] =
          static_cast<float>(1.0 / (1.0 + std::exp(-z)));
    }
  });

  for (int b = 0; b < out.batch; ++b) {
    const ImageF prob = row_softmax(out.logits_slice(b));
    std::memcpy(out.midline_prob.data() + static_cast<size_t>(b) * H * W, prob.data.data(),
                sizeof(float) * prob.size());
  }
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  json header;
  header["config"] = {{"input_rows", net_->cfg.input_rows},
                      {"input_cols", net_->cfg.input_cols},
                      {"depth", net_->cfg.depth},
                      {"base_channels", net_->cfg.base_channels},
                      {"shared_layers", net_->cfg.shared_layers},
                      {"seed", net_->cfg.seed}};
  header["params"] = json::array();
  size_t total = 0;
  for (size_t i = 0; i < net_->layout.size(); ++i) {
    header["params"].push_back(
        {{"name", net_->layout[i].name}, {"size", net_->layout[i].size}});
    total += net_->layout[i].size;
  }

  std::string blob = "midline-kit.ckpt.v1\n";
  const std::string hdr = header.dump();
  uint64_t hdr_len = hdr.size();
  blob.append(reinterpret_cast<const char*>(&hdr_len), sizeof(hdr_len));
  blob.append(hdr);
  blob.reserve(blob.size() + total * sizeof(float));
  for (const auto* p : net_->params)
    blob.append(reinterpret_cast<const char*>(p->data()), p->size() * sizeof(float));
  detail::write_file_atomic(path, blob, /*binary=*/true);
}

Model Model::load(const std::filesystem::path& path) {
  const std::string blob = detail::read_file(path, /*binary=*/true);
  const std::string magic = "midline-kit.ckpt.v1\n";
  if (blob.size() < magic.size() + sizeof(uint64_t) ||
      blob.compare(0, magic.size(), magic) != 0)
    throw Error("Model::load: not a midline-kit.ckpt.v1 file: " + path.string());
  size_t off = magic.size();
  uint64_t hdr_len = 0;
  std::memcpy(&hdr_len, blob.data() + off, sizeof(hdr_len));
  off += sizeof(hdr_len);
  if (off + hdr_len > blob.size()) throw Error("Model::load: truncated header");
  json header;
  try {
    header = json::parse(blob.substr(off, hdr_len));
  } catch (const json::exception& e) {
    throw Error("Model::load: bad header: " + std::string(e.what()));
  }
  off += hdr_len;

  ModelConfig cfg;
  try {
    const auto& c = header.at("config");
    cfg.input_rows = c.at("input_rows").get<int>();
    cfg.input_cols = c.at("input_cols").get<int>();
    cfg.depth = c.at("depth").get<int>();
    cfg.base_channels = c.at("base_channels").get<int>();
    cfg.shared_layers = c.at("shared_layers").get<int>();
    cfg.seed = c.at("seed").get<uint32_t>();
  } catch (const json::exception& e) {
    throw Error("Model::load: bad config: " + std::string(e.what()));
  }

  Model model(cfg);
  auto& net = model.net();
  const auto& params_meta = header.at("params");
  if (params_meta.size() != net.params.size())
    throw Error("Model::load: parameter table mismatch");
  for (size_t i = 0; i < net.params.size(); ++i) {
    const auto expected = params_meta[i].at("size").get<size_t>();
    if (expected != net.params[i]->size() ||
        params_meta[i].at("name").get<std::string>() != net.layout[i].name)
      throw Error("Model::load: parameter " + net.layout[i].name + " mismatch");
    if (off + expected * sizeof(float) > blob.size())
      throw Error("Model::load: truncated payload");
    std::memcpy(net.params[i]->data(), blob.data() + off, expected * sizeof(float));
    off += expected * sizeof(float);
  }
  if (off != blob.size()) throw Error("Model::load: trailing bytes in checkpoint");
  return model;
}

}  // namespace midline
