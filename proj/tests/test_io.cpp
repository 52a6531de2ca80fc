#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pinlab/checkpoint.hpp"
#include "pinlab/config.hpp"
#include "pinlab/image_io.hpp"

#include <cstring>

using namespace pinlab;

namespace {

// struct.pack('<...') of the two-tensor example below
const std::string kExpected(
    "\x53\x50\x43\x4b\x01\x00\x00\x00\x02\x00\x00\x00\x01\x00\x00\x00\x61\x01\x00\x00\x00\x02\x00"
    "\x00\x00\x00\x00\x80\x3f\x00\x00\x20\xc0\x02\x00\x00\x00\x78\x79\x02\x00\x00\x00\x01\x00\x00"
    "\x00\x01\x00\x00\x00\xcd\xcc\xcc\x3d",
    55);

TensorList example() {
  return {{"a", Tensor<float>({2}, {1.0f, -2.5f})}, {"xy", Tensor<float>({1, 1}, {0.1f})}};
}

std::string error_of(std::string_view bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("checkpoint byte layout") {
  CHECK(encode_checkpoint(example()) == kExpected);
  auto back = decode_checkpoint(kExpected);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].value == example()[0].value);
  CHECK(back[1].value.shape() == Shape{1, 1});
  CHECK(encode_checkpoint(back) == kExpected);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  TensorList big;
  Tensor<float> special({6}, {0.0f, -0.0f, 1e-38f, 3.4e38f, -1.5f, 7.0f});
  big.push_back({"special", special});
  big.push_back({"G/site0/conv/weight", Tensor<float>({2, 3, 3, 3}, 0.25f)});
  big.push_back({"naïve/ütf8", Tensor<float>({1}, {2.0f})});
  const std::string a = encode_checkpoint(big);
  const std::string b = encode_checkpoint(decode_checkpoint(a));
  CHECK(a == b);
  auto back = decode_checkpoint(a);
  CHECK(std::signbit(back[0].value[1]));
  CHECK(back[2].name == "naïve/ütf8");
}

TEST_CASE("corrupt checkpoints name the failing field") {
  std::string bad = kExpected;
  bad[0] = 'X';
  CHECK(error_of(bad).find("magic") != std::string::npos);

  bad = kExpected;
  bad[4] = 2;
  CHECK(error_of(bad).find("version") != std::string::npos);

  CHECK(error_of(kExpected.substr(0, 10)).find("tensor count") != std::string::npos);
  CHECK(error_of(kExpected.substr(0, 14)).find("name length") != std::string::npos);
  CHECK(error_of(kExpected.substr(0, 18)).find("a rank") != std::string::npos);
  CHECK(error_of(kExpected.substr(0, 24)).find("a dims") != std::string::npos);
  CHECK(error_of(kExpected.substr(0, 30)).find("a data") != std::string::npos);
  CHECK(error_of(kExpected.substr(0, 54)).find("xy data") != std::string::npos);
  CHECK(error_of(kExpected + "z").find("byte length") != std::string::npos);

  bad = kExpected;
  bad[17] = 9;  // rank of "a"
  CHECK(error_of(bad).find("rank") != std::string::npos);
}

TEST_CASE("64-bit metadata packing") {
  for (std::uint64_t v : {std::uint64_t{0}, std::uint64_t{2000}, ~std::uint64_t{0},
                          std::uint64_t{0x0123456789abcdefULL}})
    CHECK(unpack_u64(pack_u64(v), "v") == v);
  CHECK_THROWS_AS(unpack_u64(Tensor<float>({4}, {0.5f, 0, 0, 0}), "v"), CheckpointError);
  CHECK_THROWS_AS(unpack_u64(Tensor<float>({3}), "v"), CheckpointError);
}

TEST_CASE("run config parsing") {
  auto d = parse_run_config("{}");
  CHECK(d.generator.max_resolution == 32);
  CHECK(d.train.steps == 2000);
  CHECK(d.train.batch_size == 8);
  CHECK(d.train.learning_rate == 1e-3);
  CHECK(d.train.optimizer == OptimizerKind::Adam);
  CHECK(d.dataset.resolution == 32);
  CHECK(d.detect_k == 8.0);
  CHECK(d.out_dir == "out");

  auto c = parse_run_config(R"({
    "generator": {"max_resolution": 16, "channels": {"4": 8, "8": 6, "16": 4}, "latent_dim": 7,
                  "mapping_layers": 1, "norm": "AdaIN", "noise": false, "seed": 3},
    "train": {"steps": 5, "batch_size": 2, "learning_rate": 0.01, "optimizer": "sgd", "seed": 4,
              "checkpoint_interval": 1},
    "dataset": {"n_images": 20, "seed": 8},
    "detect_k": 6.5, "out_dir": "runs/a"})");
  CHECK(c.generator.channels.at(8) == 6);
  CHECK(c.generator.norm_at(3) == NormKind::AdaIN);
  CHECK_FALSE(c.generator.noise_enabled);
  CHECK(c.train.optimizer == OptimizerKind::SGD);
  CHECK(c.dataset.resolution == 16);
  CHECK(c.dataset.n_images == 20);
  CHECK(c.detect_k == 6.5);

  // written configs parse back to the same thing
  auto again = parse_run_config(run_config_json(c));
  CHECK(run_config_json(again) == run_config_json(c));
  CHECK(canonical_generator_json(again.generator) == canonical_generator_json(c.generator));

  auto per_site = parse_run_config(R"({"generator": {"max_resolution": 8, "norm": ["IN", "PN", "PIN", "PIN"]}})");
  CHECK(per_site.generator.norm_at(1) == NormKind::PixelStyle);
}

TEST_CASE("run config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_run_config(R"({"generatr": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"step": 5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"generator": {"norm": "BN"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"generator": {"max_resolution": 12}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"generator": {"norm": ["IN", "PN"]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"learning_rate": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"steps": -1}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"optimizer": "rmsprop"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"steps": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"dataset": {"resolution": 32}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[]"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/pinlab.json"), ConfigError);
}

TEST_CASE("generator config hash") {
  GeneratorConfig a;
  GeneratorConfig b = a;
  CHECK(generator_config_hash(a) == generator_config_hash(b));
  // channel entries above max_resolution do not matter
  b.channels[64] = 99;
  CHECK(generator_config_hash(a) == generator_config_hash(b));
  b.seed = 1;
  CHECK(generator_config_hash(a) != generator_config_hash(b));
  CHECK(generator_config_hash(a) != generator_config_hash(a.with_norm(NormKind::AdaIN)));
  CHECK(canonical_generator_json(a) ==
        R"({"channels":{"16":32,"32":16,"4":64,"8":64},"latent_dim":64,"mapping_layers":3,)"
        R"("max_resolution":32,"noise":true,"norm":"PIN","seed":0})");
}

TEST_CASE("ppm encoding") {
  Tensor<float> img({3, 1, 2}, {-1.0f, 1.0f, 0.0f, 2.0f, -3.0f, 0.5f});
  const std::string p = encode_ppm(img);
  const std::string header = "P6\n2 1\n255\n";
  REQUIRE(p.size() == header.size() + 6);
  CHECK(p.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(p.data() + header.size());
  // pixel 0: (-1, 0, -3) -> (0, 128, 0); pixel 1: (1, 2, 0.5) -> (255, 255, 191)
  CHECK(px[0] == 0);
  CHECK(px[1] == 128);
  CHECK(px[2] == 0);
  CHECK(px[3] == 255);
  CHECK(px[4] == 255);
  CHECK(px[5] == 191);
  CHECK_THROWS(encode_ppm(Tensor<float>({2, 1, 1})));
}

TEST_CASE("trace panel") {
  Tensor<float> act({3, 2, 2}, {0, 1, 2, 3, 5, 5, 5, 5, -1, 0, 0, 1});
  auto p = trace_panel(act);
  // 3 channels -> 2x2 grid of 2x2 tiles with 1 px gaps
  CHECK(p.width == 5);
  CHECK(p.height == 5);
  CHECK(p.ranges[0].min == 0.0);
  CHECK(p.ranges[0].max == 3.0);
  CHECK(p.pixels[0] == 0);
  CHECK(p.pixels[1] == 85);
  CHECK(p.pixels[5] == 170);
  CHECK(p.pixels[6] == 255);
  CHECK(p.pixels[3] == 0);  // constant channel
  CHECK(p.pixels[15] == 0);
  CHECK(p.pixels[21] == 255);
  CHECK(panel_ranges_csv(p) == "channel,min,max\n0,0,3\n1,5,5\n2,-1,1\n");
  const std::string pgm = encode_pgm(p.pixels, p.height, p.width);
  CHECK(pgm.rfind("P5\n5 5\n255\n", 0) == 0);
  CHECK(pgm.size() == 11 + 25);
}

TEST_CASE("region overlay") {
  std::vector<double> m(16, 1.0);
  m[5] = 4.0;
  auto rep = detect_regions_in_map(m, 4, 4);
  auto o = region_overlay(m, rep, 2);
  REQUIRE(o.size() == 64);
  CHECK(o[0] == 48);
  CHECK(o[2 * 8 + 2] == 255);
  CHECK(o[3 * 8 + 3] == 255);
  CHECK(o[2 * 8 + 4] == 48);
}
