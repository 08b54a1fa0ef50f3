#include "segrobust/unet.hpp"

#include <cmath>
#include <functional>
#include <map>

#include <json.hpp>

#include "binary_io.hpp"
#include "segrobust/error.hpp"
#include "segrobust/rng.hpp"

namespace segrobust {

void UNetConfig::validate() const {
  if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must be in [0,1)");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("leaky_slope must be in (0,1)");
  }
}

namespace {

constexpr double kNormEps = 1e-5;
constexpr char kCheckpointMagic[4] = {'S', 'R', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

ConvBlock make_block(int in_ch, int out_ch, int k, int stride, Rng& rng) {
  ConvBlock b;
  b.kernel = he_uniform({out_ch, in_ch, k, k, k},
                        static_cast<int64_t>(in_ch) * k * k * k, rng);
  b.gamma = Tensor::full({out_ch}, 1.0);
  b.gamma.set_requires_grad(true);
  b.beta = Tensor::zeros({out_ch});
  b.beta.set_requires_grad(true);
  b.stride = stride;
  return b;
}

ResBlock make_resblock(int in_ch, int out_ch, bool dropout, Rng& rng) {
  ResBlock r;
  r.first = make_block(in_ch, out_ch, 3, 1, rng);
  r.second = make_block(out_ch, out_ch, 3, 1, rng);
  r.projection = he_uniform({out_ch, in_ch, 1, 1, 1}, in_ch, rng);
  r.dropout_between = dropout;
  return r;
}

using ParamVisitor =
    std::function<void(const std::string&, const Tensor&)>;

void visit_block(const std::string& prefix, const ConvBlock& b,
                 const ParamVisitor& fn) {
  fn(prefix + ".kernel", b.kernel);
  fn(prefix + ".gamma", b.gamma);
  fn(prefix + ".beta", b.beta);
}

}  // namespace

SegModel SegModel::build(const UNetConfig& config, uint64_t seed) {
  config.validate();
  SegModel m;
  m.config_ = config;
  m.init_seed_ = seed;
  Rng rng(seed);
  m.encoder_.push_back(
      make_resblock(config.input_channels, config.width_at(0), false, rng));
  for (int l = 0; l < config.depth; ++l) {
    m.downsample_.push_back(
        make_block(config.width_at(l), config.width_at(l + 1), 3, 2, rng));
    const bool bottleneck = (l + 1 == config.depth);
    m.encoder_.push_back(make_resblock(config.width_at(l + 1),
                                       config.width_at(l + 1), bottleneck,
                                       rng));
  }
  for (int l = config.depth - 1; l >= 0; --l) {
    DecoderStage s;
    s.after_up = make_block(config.width_at(l + 1), config.width_at(l), 3, 1, rng);
    s.after_concat =
        make_block(2 * config.width_at(l), config.width_at(l), 3, 1, rng);
    s.refine = make_block(config.width_at(l), config.width_at(l), 1, 1, rng);
    m.decoder_.push_back(std::move(s));
  }
  m.head_kernel_ = he_uniform({config.num_classes, config.width_at(0), 1, 1, 1},
                              config.width_at(0), rng);
  m.head_bias_ = Tensor::zeros({config.num_classes});
  m.head_bias_.set_requires_grad(true);
  return m;
}

namespace {

Tensor run_block(const ConvBlock& b, const Tensor& x, double slope) {
  const Padding pad =
      b.stride == 2 ? Padding::HalveAsymmetric
                    : (b.kernel.extent(2) == 3 ? Padding::Same : Padding::None);
  Tensor y = conv3d(x, b.kernel, Tensor(), b.stride, pad);
  y = instance_norm(y, b.gamma, b.beta, kNormEps);
  return leaky_relu(y, slope);
}

}  // namespace

Tensor SegModel::logits(const Tensor& input, bool training,
                        uint64_t dropout_seed) const {
  if (encoder_.empty()) throw Error("forward on an unbuilt model");
  if (input.rank() != 4 || input.extent(0) != config_.input_channels) {
    throw ShapeError("network input must be [" +
                     std::to_string(config_.input_channels) +
                     ",D,H,W], got " + shape_to_string(input.shape()));
  }
  const int64_t divisor = int64_t{1} << config_.depth;
  const char* axes[3] = {"D", "H", "W"};
  for (int a = 1; a <= 3; ++a) {
    if (input.extent(a) % divisor != 0) {
      throw ShapeError(std::string("input axis ") + axes[a - 1] + " extent " +
                       std::to_string(input.extent(a)) +
                       " is not divisible by 2^depth = " +
                       std::to_string(divisor));
    }
  }

  auto run_res = [&](const ResBlock& r, const Tensor& x) {
    Tensor h = run_block(r.first, x, config_.leaky_slope);
    if (r.dropout_between) {
      h = dropout_channels(h, config_.dropout_rate, dropout_seed, training);
    }
    h = run_block(r.second, h, config_.leaky_slope);
    return add(h, conv3d(x, r.projection, Tensor(), 1, Padding::None));
  };

  std::vector<Tensor> skips;
  Tensor h = run_res(encoder_[0], input);
  for (int l = 0; l < config_.depth; ++l) {
    skips.push_back(h);
    h = run_block(downsample_[l], h, config_.leaky_slope);
    h = run_res(encoder_[static_cast<size_t>(l) + 1], h);
  }
  for (int i = 0; i < config_.depth; ++i) {
    const DecoderStage& s = decoder_[static_cast<size_t>(i)];
    h = upsample_nearest2(h);
    h = run_block(s.after_up, h, config_.leaky_slope);
    h = concat_channels(h, skips[skips.size() - 1 - static_cast<size_t>(i)]);
    h = run_block(s.after_concat, h, config_.leaky_slope);
    h = run_block(s.refine, h, config_.leaky_slope);
  }
  return conv3d(h, head_kernel_, head_bias_, 1, Padding::None);
}

Tensor SegModel::forward(const Tensor& input, bool training,
                         uint64_t dropout_seed) const {
  return softmax_channels(logits(input, training, dropout_seed),
                          config_.temperature);
}

void SegModel::set_temperature(double t) {
  if (!(t > 0.0)) throw ConfigError("temperature must be positive");
  config_.temperature = t;
}

std::vector<std::pair<std::string, Tensor>> SegModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  ParamVisitor fn = [&out](const std::string& name, const Tensor& t) {
    out.emplace_back(name, t);
  };
  for (size_t l = 0; l < encoder_.size(); ++l) {
    const std::string p = "encoder" + std::to_string(l);
    visit_block(p + ".first", encoder_[l].first, fn);
    visit_block(p + ".second", encoder_[l].second, fn);
    fn(p + ".projection", encoder_[l].projection);
  }
  for (size_t l = 0; l < downsample_.size(); ++l) {
    visit_block("down" + std::to_string(l), downsample_[l], fn);
  }
  for (size_t i = 0; i < decoder_.size(); ++i) {
    const std::string p = "decoder" + std::to_string(i);
    visit_block(p + ".after_up", decoder_[i].after_up, fn);
    visit_block(p + ".after_concat", decoder_[i].after_concat, fn);
    visit_block(p + ".refine", decoder_[i].refine, fn);
  }
  fn("head.kernel", head_kernel_);
  fn("head.bias", head_bias_);
  return out;
}

std::vector<Tensor> SegModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& entry : named_parameters()) out.push_back(entry.second);
  return out;
}

int64_t SegModel::parameter_count() const {
  int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

void SegModel::set_parameters_require_grad(bool on) {
  for (Tensor t : parameters()) t.set_requires_grad(on);
}

void SegModel::zero_param_grads() {
  for (Tensor t : parameters()) t.zero_grad();
}

void SegModel::save_checkpoint(const std::string& path) const {
  nlohmann::json cfg;
  cfg["input_channels"] = config_.input_channels;
  cfg["num_classes"] = config_.num_classes;
  cfg["depth"] = config_.depth;
  cfg["base_width"] = config_.base_width;
  cfg["dropout_rate"] = config_.dropout_rate;
  cfg["temperature"] = config_.temperature;
  cfg["leaky_slope"] = config_.leaky_slope;
  cfg["init_seed"] = init_seed_;
  const std::string cfg_text = cfg.dump();

  auto os = binio::open_out(path);
  binio::write_bytes(os, kCheckpointMagic, 4);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_u32(os, static_cast<uint32_t>(cfg_text.size()));
  binio::write_bytes(os, cfg_text.data(), cfg_text.size());
  const auto named = named_parameters();
  binio::write_u32(os, static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    binio::write_u32(os, static_cast<uint32_t>(name.size()));
    binio::write_bytes(os, name.data(), name.size());
    binio::write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) binio::write_u32(os, static_cast<uint32_t>(e));
    binio::write_f64_array(os, t.data());
  }
  if (!os) throw IoError("write failure on " + path);
}

SegModel SegModel::load_checkpoint(const std::string& path) {
  auto is = binio::open_in(path);
  binio::check_magic(is, kCheckpointMagic, path);
  const uint32_t version = binio::read_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  }
  const uint32_t cfg_len = binio::read_u32(is, "config length");
  std::string cfg_text(cfg_len, '\0');
  binio::read_exact(is, cfg_text.data(), cfg_len, "config block");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(cfg_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint config in " + path + ": " + e.what());
  }
  UNetConfig config;
  uint64_t seed = 0;
  try {
    config.input_channels = cfg.at("input_channels").get<int>();
    config.num_classes = cfg.at("num_classes").get<int>();
    config.depth = cfg.at("depth").get<int>();
    config.base_width = cfg.at("base_width").get<int>();
    config.dropout_rate = cfg.at("dropout_rate").get<double>();
    config.temperature = cfg.at("temperature").get<double>();
    config.leaky_slope = cfg.at("leaky_slope").get<double>();
    seed = cfg.at("init_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("incomplete checkpoint config in " + path + ": " + e.what());
  }

  SegModel model = SegModel::build(config, seed);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

  const uint32_t n_params = binio::read_u32(is, "parameter count");
  if (n_params != by_name.size()) {
    throw IoError("checkpoint parameter count " + std::to_string(n_params) +
                  " does not match architecture (" +
                  std::to_string(by_name.size()) + ") in " + path);
  }
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = binio::read_u32(is, "parameter name length");
    std::string name(name_len, '\0');
    binio::read_exact(is, name.data(), name_len, "parameter name");
    const uint32_t rank = binio::read_u32(is, "parameter rank");
    Shape shape;
    for (uint32_t r = 0; r < rank; ++r) {
      shape.push_back(binio::read_u32(is, "parameter extent"));
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw IoError("unknown parameter '" + name + "' in " + path);
    }
    if (it->second.shape() != shape) {
      throw IoError("parameter '" + name + "' has shape " +
                    shape_to_string(shape) + " but architecture expects " +
                    shape_to_string(it->second.shape()) + " in " + path);
    }
    binio::read_f64_array(is, it->second.mutable_data(),
                          "parameter '" + name + "' payload");
  }
  return model;
}

}  // namespace segrobust
