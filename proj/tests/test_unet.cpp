#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "segrobust/data.hpp"
#include "segrobust/error.hpp"
#include "segrobust/losses.hpp"
#include "segrobust/unet.hpp"
#include "support/oracles.hpp"

using namespace segrobust;
namespace fs = std::filesystem;

namespace {

UNetConfig tiny_config(int depth = 1, int width = 2) {
  UNetConfig c;
  c.depth = depth;
  c.base_width = width;
  return c;
}

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("config validation and width doubling") {
  UNetConfig c = tiny_config();
  c.validate();
  CHECK(c.width_at(0) == 2);
  CHECK(c.width_at(2) == 8);

  UNetConfig bad = tiny_config();
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.base_width = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("same seed builds bit-identical parameters") {
  UNetConfig c = tiny_config(2, 2);
  SegModel a = SegModel::build(c, 99);
  SegModel b = SegModel::build(c, 99);
  SegModel other = SegModel::build(c, 100);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  const auto po = other.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_difference = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.data() == pb[i].second.data());
    if (pa[i].second.data() != po[i].second.data()) any_difference = true;
  }
  CHECK(any_difference);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("depth-1 width-1 forward preserves spatial shape") {
  UNetConfig c = tiny_config(1, 1);
  SegModel model = SegModel::build(c, 7);
  Rng rng(70);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  Tensor p = model.forward(x);
  REQUIRE(p.shape() == Shape{4, 8, 8, 8});
}

TEST_CASE("forward probabilities sum to one per voxel") {
  SegModel model = SegModel::build(tiny_config(2, 2), 8);
  Rng rng(71);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  Tensor p = model.forward(x);
  const int64_t vol = 8 * 8 * 8;
  for (int64_t v = 0; v < vol; ++v) {
    double s = 0;
    for (int64_t ch = 0; ch < 4; ++ch) s += p.data()[ch * vol + v];
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("all-zero input still yields finite probabilities") {
  SegModel model = SegModel::build(tiny_config(), 3);
  Tensor p = model.forward(Tensor::zeros({4, 8, 8, 8}));
  for (double v : p.data()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("eval-mode forward is deterministic") {
  SegModel model = SegModel::build(tiny_config(2, 2), 4);
  Rng rng(72);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  CHECK(model.forward(x).data() == model.forward(x).data());
  // training-mode dropout with the same seed is also replayable
  CHECK(model.forward(x, true, 5).data() == model.forward(x, true, 5).data());
}

TEST_CASE("indivisible spatial extents are rejected with the axis named") {
  SegModel model = SegModel::build(tiny_config(2, 2), 4);
  try {
    model.forward(Tensor::zeros({4, 8, 6, 8}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("H") != std::string::npos);
  }
  CHECK_THROWS_AS(model.forward(Tensor::zeros({4, 8, 8})), ShapeError);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({3, 8, 8, 8})), ShapeError);
}

TEST_CASE("temperature changes probabilities but never the argmax") {
  SegModel model = SegModel::build(tiny_config(1, 2), 12);
  Rng rng(73);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  Tensor p1 = model.forward(x);
  model.set_temperature(500.0);
  Tensor p500 = model.forward(x);
  model.set_temperature(1.0);
  CHECK(p1.data() != p500.data());
  const int64_t vol = 8 * 8 * 8;
  int agree = 0;
  for (int64_t v = 0; v < vol; ++v) {
    int a1 = 0, a2 = 0;
    for (int c = 1; c < 4; ++c) {
      if (p1.data()[c * vol + v] > p1.data()[a1 * vol + v]) a1 = c;
      if (p500.data()[c * vol + v] > p500.data()[a2 * vol + v]) a2 = c;
    }
    agree += a1 == a2;
  }
  CHECK(agree == vol);
  CHECK_THROWS_AS(model.set_temperature(0.0), ConfigError);
}

TEST_CASE("every parameter receives a gradient on a training step") {
  SegModel model = SegModel::build(tiny_config(2, 2), 21);
  Rng rng(74);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  LabelMap labels;
  labels.shape = {8, 8, 8};
  labels.codes.resize(512);
  for (auto& code : labels.codes) {
    code = kLabelCodes[rng.uniform_int(4)];
  }
  model.zero_param_grads();
  Tensor loss = dice_loss(model.forward(x, true, 17), one_hot(labels));
  backward(loss);
  for (const auto& [name, param] : model.named_parameters()) {
    CAPTURE(name);
    REQUIRE_FALSE(param.node()->grad.empty());
    double mag = 0;
    for (double g : param.node()->grad) mag += std::fabs(g);
    CHECK(mag > 0.0);  // dead-path detector
  }
}

TEST_CASE("parameter names follow the documented scheme") {
  SegModel model = SegModel::build(tiny_config(1, 2), 2);
  std::set<std::string> names;
  for (const auto& [name, param] : model.named_parameters()) {
    names.insert(name);
  }
  CHECK(names.count("encoder0.first.kernel") == 1);
  CHECK(names.count("encoder0.projection") == 1);
  CHECK(names.count("down0.kernel") == 1);
  CHECK(names.count("encoder1.second.gamma") == 1);
  CHECK(names.count("decoder0.after_up.kernel") == 1);
  CHECK(names.count("decoder0.after_concat.beta") == 1);
  CHECK(names.count("decoder0.refine.kernel") == 1);
  CHECK(names.count("head.kernel") == 1);
  CHECK(names.count("head.bias") == 1);
  CHECK(names.size() == model.named_parameters().size());  // unique names
}

TEST_CASE("checkpoint round trip is byte and value exact") {
  const fs::path p1 = temp_file("segrobust_ckpt_a.bin");
  const fs::path p2 = temp_file("segrobust_ckpt_b.bin");
  UNetConfig c = tiny_config(2, 2);
  c.temperature = 20.0;
  c.dropout_rate = 0.25;
  SegModel model = SegModel::build(c, 31);
  model.save_checkpoint(p1.string());
  SegModel loaded = SegModel::load_checkpoint(p1.string());
  loaded.save_checkpoint(p2.string());
  CHECK(file_bytes(p1) == file_bytes(p2));

  CHECK(loaded.config().temperature == 20.0);
  CHECK(loaded.config().dropout_rate == 0.25);
  CHECK(loaded.init_seed() == model.init_seed());

  Rng rng(75);
  Tensor x = oracle::random_tensor({4, 8, 8, 8}, rng, -1, 1);
  CHECK(model.forward(x).data() == loaded.forward(x).data());
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("truncated checkpoint fails cleanly") {
  const fs::path p = temp_file("segrobust_ckpt_trunc.bin");
  SegModel model = SegModel::build(tiny_config(1, 1), 5);
  model.save_checkpoint(p.string());
  const std::string bytes = file_bytes(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  CHECK_THROWS_AS(SegModel::load_checkpoint(p.string()), IoError);
  fs::remove(p);
  CHECK_THROWS_AS(SegModel::load_checkpoint("/nonexistent/model.ckpt"),
                  IoError);
}
