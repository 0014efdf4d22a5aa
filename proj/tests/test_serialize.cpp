#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ekg/error.hpp"
#include "ekg/rng.hpp"
#include "ekg/serialize.hpp"

using namespace ekg;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

template <typename T>
Tensor<T> randn(Shape shape, SplitRng& rng) {
  Tensor<T> t(std::move(shape));
  for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("tensor stream round trip preserves bits") {
  SplitRng rng(61);
  Tensor<double> t = randn<double>({3, 4, 2}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor<double> back = read_tensor<double>(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.vec() == t.vec());

  Tensor<float> f = randn<float>({7}, rng);
  std::stringstream ss2;
  write_tensor(ss2, f);
  Tensor<float> backf = read_tensor<float>(ss2);
  CHECK(backf.vec() == f.vec());
}

TEST_CASE("dtype and magic mismatches fail loudly") {
  SplitRng rng(62);
  Tensor<float> t = randn<float>({4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK_THROWS_AS(read_tensor<double>(ss), FormatError);  // stored f32, asked f64

  std::stringstream junk("XXXXgarbage");
  CHECK_THROWS_AS(read_tensor<float>(junk), FormatError);

  std::stringstream truncated;
  write_tensor(truncated, t);
  std::string bytes = truncated.str();
  bytes.resize(bytes.size() - 6);
  std::stringstream cut(bytes);
  CHECK_THROWS_AS(read_tensor<float>(cut), FormatError);
}

TEST_CASE("checkpoint save/load restores every section") {
  SplitRng rng(63);
  const std::string path = temp_path("ekg_ckpt_test.ekgc");
  std::vector<ParamEntry<float>> entries{
      {"a.weight", randn<float>({2, 3}, rng), true},
      {"a.bias", randn<float>({3}, rng), true},
      {"bn.running_mean", randn<float>({3}, rng), false},
  };
  std::map<std::string, std::string> config{{"arch.k0", "8"}, {"run.seed", "42"}};
  save_checkpoint(path, config, entries);

  CheckpointHeader header = read_checkpoint_header(path);
  CHECK(header.config == config);

  std::vector<ParamEntry<float>> target{
      {"a.weight", Tensor<float>({2, 3}), true},
      {"a.bias", Tensor<float>({3}), true},
      {"bn.running_mean", Tensor<float>({3}), false},
  };
  load_checkpoint(path, target);
  for (std::size_t i = 0; i < entries.size(); ++i)
    CHECK(target[i].tensor.vec() == entries[i].tensor.vec());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint load rejects missing, extra and misshapen sections") {
  SplitRng rng(64);
  const std::string path = temp_path("ekg_ckpt_bad.ekgc");
  std::vector<ParamEntry<float>> entries{
      {"a.weight", randn<float>({2, 3}, rng), true},
      {"a.bias", randn<float>({3}, rng), true},
  };
  save_checkpoint(path, {}, entries);

  SUBCASE("missing section") {
    std::vector<ParamEntry<float>> target{
        {"a.weight", Tensor<float>({2, 3}), true},
        {"a.bias", Tensor<float>({3}), true},
        {"extra.param", Tensor<float>({1}), true},
    };
    CHECK_THROWS_AS(load_checkpoint(path, target), FormatError);
  }
  SUBCASE("unexpected section") {
    std::vector<ParamEntry<float>> target{{"a.weight", Tensor<float>({2, 3}), true}};
    CHECK_THROWS_AS(load_checkpoint(path, target), FormatError);
  }
  SUBCASE("shape mismatch names the section") {
    std::vector<ParamEntry<float>> target{
        {"a.weight", Tensor<float>({3, 2}), true},
        {"a.bias", Tensor<float>({3}), true},
    };
    try {
      load_checkpoint(path, target);
      CHECK(false);
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("a.weight") != std::string::npos);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("non-finite stored values are rejected on load") {
  const std::string path = temp_path("ekg_nan.ekgt");
  Tensor<double> t({2});
  t[0] = 1.0;
  t[1] = std::numeric_limits<double>::quiet_NaN();
  // Bypass the in-memory check by writing through the raw stream API.
  std::ofstream os(path, std::ios::binary);
  write_tensor(os, t);
  os.close();
  CHECK_THROWS_AS(load_tensor<double>(path), NumericError);
  std::filesystem::remove(path);
}
