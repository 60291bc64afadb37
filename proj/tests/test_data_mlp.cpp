#include "apinn/data_io.hpp"
#include "apinn/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace apinn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / "apinn_unit";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_text(const std::string &name, const std::string &text) {
  const auto p = scratch(name);
  std::ofstream(p) << text;
  return p;
}

Dataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(3.0, 2.0);
  Dataset ds;
  ds.dim = d;
  for (std::size_t j = 0; j < d; ++j) {
    ds.feature_names.push_back("f" + std::to_string(j));
    ds.feature_units.emplace_back();
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.x.push_back(g(rng));
    ds.y.push_back(1.0 + std::abs(g(rng)));
  }
  return ds;
}

} // namespace

TEST(Csv, ParsesThreeRows) {
  const auto p = write_text("three.csv", "pe,ar,nu\n100,1.5,7.1\n200,2.5,8.2\n300,3.5,9.3\n");
  const Dataset ds = load_csv(p);
  EXPECT_EQ(ds.rows(), 3u);
  EXPECT_EQ(ds.dim, 2u);
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"pe", "ar"}));
  EXPECT_DOUBLE_EQ(ds.at(1, 1), 2.5);
  EXPECT_DOUBLE_EQ(ds.y[2], 9.3);
}

TEST(Csv, HeaderUnitsAndTargetColumn) {
  const auto p = write_text("units.csv", "nu,w[mm],pe\n7,1,100\n8,2,200\n");
  const Dataset ds = load_csv(p, "nu");
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"w", "pe"}));
  EXPECT_EQ(ds.feature_units[0], "mm");
  EXPECT_DOUBLE_EQ(ds.y[1], 8.0);
  EXPECT_THROW(load_csv(p, "missing"), DataError);
}

TEST(Csv, NonNumericCellNamesRow) {
  const auto p = write_text("bad.csv", "pe,ar,nu\n1,2,3\n4,abc,6\n");
  try {
    load_csv(p);
    FAIL() << "expected DataError";
  } catch (const DataError &e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("abc"), std::string::npos) << e.what();
  }
}

TEST(Csv, HeaderOnlyIsNoRows) {
  const auto p = write_text("empty.csv", "pe,ar,nu\n");
  try {
    load_csv(p);
    FAIL() << "expected DataError";
  } catch (const DataError &e) {
    EXPECT_NE(std::string(e.what()).find("no rows"), std::string::npos);
  }
}

TEST(Csv, RoundTripIsExact) {
  const Dataset ds = random_dataset(25, 3, 5);
  const auto p = scratch("roundtrip.csv");
  save_csv(ds, p);
  const Dataset back = load_csv(p);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.y, ds.y);
}

TEST(Synth, CorrelationValues) {
  EXPECT_NEAR(sodium_nusselt(1000.0), 5.0 + 0.025 * std::pow(1000.0, 0.8), 1e-12);
  EXPECT_NEAR(sodium_nusselt(1000.0), 11.2797, 1e-4);
  EXPECT_NEAR(water_nusselt(10000.0, 5.0), 69.39, 0.01);
}

TEST(Synth, NoiseFreeMatchesCorrelationEverywhere) {
  for (auto domain : {SynthDomain::WaterAnalog, SynthDomain::SodiumAnalog}) {
    const Dataset ds = synthesize(default_synth_spec(domain, 200, 0.0, 3));
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      const double truth = correlation_truth(domain, ds.feature_names, ds.row(i));
      EXPECT_LE(std::abs(ds.y[i] - truth), 1e-12 * truth);
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  const auto spec = default_synth_spec(SynthDomain::SodiumAnalog, 87, 0.05, 9);
  const Dataset a = synthesize(spec), b = synthesize(spec);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.rows(), 87u);
  auto other = spec;
  other.seed = 10;
  EXPECT_NE(synthesize(other).y, a.y);
}

TEST(Normalize, PopulationConvention) {
  Dataset ds;
  ds.dim = 1;
  ds.feature_names = {"c"};
  ds.feature_units = {""};
  ds.x = {1.0, 3.0};
  ds.y = {1.0, 1.0};
  const auto [z, st] = normalize(ds);
  EXPECT_DOUBLE_EQ(z.x[0], -1.0);
  EXPECT_DOUBLE_EQ(z.x[1], 1.0);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.stddev[0], 1.0);
}

TEST(Normalize, ConstantColumnRejected) {
  Dataset ds;
  ds.dim = 1;
  ds.feature_names = {"k"};
  ds.feature_units = {""};
  ds.x = {5.0, 5.0, 5.0};
  ds.y = {1.0, 2.0, 3.0};
  EXPECT_THROW(normalize(ds), DataError);
}

TEST(Normalize, IdempotentAndInvertible) {
  const Dataset ds = random_dataset(50, 4, 2);
  const auto [z, st] = normalize(ds);
  const auto [z2, st2] = normalize(z);
  for (std::size_t k = 0; k < z.x.size(); ++k) EXPECT_NEAR(z2.x[k], z.x[k], 1e-12);
  const Dataset back = denormalize(z);
  for (std::size_t k = 0; k < ds.x.size(); ++k) EXPECT_LE(std::abs(back.x[k] - ds.x[k]), 1e-12 * std::max(1.0, std::abs(ds.x[k])));
}

TEST(Split, SizesAndRounding) {
  EXPECT_EQ(split_size(10, 0.8), 8u);
  EXPECT_EQ(split_size(87, 0.8), 70u);
  const auto s = split_indices(87, 0.8, 1);
  EXPECT_EQ(s.first.size(), 70u);
  EXPECT_EQ(s.second.size(), 17u);
  EXPECT_THROW(split_indices(2, 0.1, 1), DataError);
}

TEST(Split, PartitionFuzz) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    const double f = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
    const std::size_t k = split_size(n, f);
    if (k == 0 || k >= n) continue;
    const auto s = split_indices(n, f, rng());
    std::set<std::size_t> all(s.first.begin(), s.first.end());
    all.insert(s.second.begin(), s.second.end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(s.first.size() + s.second.size(), n);
  }
  const auto a = split_indices(40, 0.75, 3), b = split_indices(40, 0.75, 3);
  EXPECT_EQ(a.first, b.first);
}

TEST(Arch, ParameterCountAndParsing) {
  const auto a = ArchSpec::parse("2-[20,20,12]-1");
  EXPECT_EQ(a.param_count(), 745u);
  EXPECT_EQ(a.to_string(), "2-[20,20,12]-1");
  EXPECT_THROW(ArchSpec::parse("2-[20,,12]-1"), UsageError);
  EXPECT_THROW(ArchSpec::parse("2-[0]-1"), UsageError);
  EXPECT_THROW(ArchSpec::parse("2-[4]-2"), UsageError);
  EXPECT_THROW(ArchSpec::parse("nonsense"), UsageError);
}

TEST(Init, ZeroBiasesDeterministicXavierBounds) {
  const auto arch = ArchSpec::parse("3-[10,6]-1");
  const Mlp a = init_mlp(arch, 11), b = init_mlp(arch, 11);
  EXPECT_EQ(a.params, b.params);
  for (const auto &blk : arch.blocks()) {
    const double lim = std::sqrt(6.0 / static_cast<double>(blk.fan_in + blk.fan_out));
    for (std::size_t k = 0; k < blk.weight_count(); ++k) EXPECT_LE(std::abs(a.params[blk.offset + k]), lim);
    for (std::size_t k = 0; k < blk.fan_out; ++k) EXPECT_EQ(a.params[blk.bias_offset() + k], 0.0);
  }
}

TEST(Forward, HandComputedCases) {
  Mlp lin;
  lin.arch = ArchSpec::parse("2-[]-1");
  lin.params = {2.0, 3.0, 1.0};
  const std::vector<double> ones = {1.0, 1.0};
  EXPECT_DOUBLE_EQ(forward(lin, ones), 6.0);

  Mlp zero = init_mlp(ArchSpec::parse("3-[4]-1"), 1);
  std::fill(zero.params.begin(), zero.params.end(), 0.0);
  EXPECT_EQ(forward(zero, std::vector<double>{5, -2, 7}), 0.0);

  // 1-[2]-1, every weight and bias 0.1, x = 1: h = tanh(0.2), u = 0.1 * 2h + 0.1
  Mlp t;
  t.arch = ArchSpec::parse("1-[2]-1");
  t.params.assign(t.arch.param_count(), 0.1);
  const double h = std::tanh(0.1 * 1.0 + 0.1);
  EXPECT_NEAR(forward(t, std::vector<double>{1.0}), 0.1 * h + 0.1 * h + 0.1, 1e-12);
}

TEST(Forward, InputDerivativesOfSimpleNetworks) {
  Mlp lin;
  lin.arch = ArchSpec::parse("1-[]-1");
  lin.params = {2.0, 0.0};
  const auto d = forward_with_input_derivs(lin, std::vector<double>{0.7}, 0);
  EXPECT_DOUBLE_EQ(d[1], 2.0);
  EXPECT_DOUBLE_EQ(d[2], 0.0);
  EXPECT_DOUBLE_EQ(d[0], forward(lin, std::vector<double>{0.7}));

  // u = tanh(x): a single hidden unit with unit weights feeding an identity output
  Mlp th;
  th.arch = ArchSpec::parse("1-[1]-1");
  th.params = {1.0, 0.0, 1.0, 0.0};
  const auto t = forward_with_input_derivs(th, std::vector<double>{0.0}, 0);
  EXPECT_DOUBLE_EQ(t[0], 0.0);
  EXPECT_DOUBLE_EQ(t[1], 1.0);
  EXPECT_DOUBLE_EQ(t[2], 0.0);
}

TEST(Forward, LinearArchIsAffine) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Mlp net;
    net.arch = ArchSpec::parse("3-[]-1");
    net.params = {g(rng), g(rng), g(rng), g(rng)};
    const std::vector<double> x = {g(rng), g(rng), g(rng)};
    const double expect = net.params[0] * x[0] + net.params[1] * x[1] + net.params[2] * x[2] + net.params[3];
    EXPECT_NEAR(forward(net, x), expect, 1e-12);
  }
}

TEST(Forward, ValueChannelEqualsForward) {
  const Mlp net = init_mlp(ArchSpec::parse("3-[9,5]-1"), 21);
  const std::vector<double> x = {0.2, -0.1, 0.5};
  for (std::size_t dim = 0; dim < 3; ++dim) EXPECT_EQ(forward_with_input_derivs(net, x, dim)[0], forward(net, x));
}

TEST(Checkpoint, RoundTripHundredNetworksBitExact) {
  std::mt19937_64 rng(123);
  const auto p = scratch("net.json");
  for (int i = 0; i < 100; ++i) {
    ArchSpec arch;
    arch.input_dim = 1 + rng() % 5;
    const std::size_t layers = rng() % 4;
    for (std::size_t l = 0; l < layers; ++l) arch.hidden.push_back(1 + rng() % 16);
    arch.activation = rng() % 2 ? Activation::Tanh : Activation::Sigmoid;
    Mlp net = init_mlp(arch, rng());
    std::normal_distribution<double> g(0.0, 1e3);
    for (auto &v : net.params) v += g(rng) * 1e-7;
    net.output = {g(rng), 0.5 + std::abs(g(rng))};
    save_mlp(net, p);
    const Mlp back = load_mlp(p);
    ASSERT_EQ(back.arch, net.arch);
    ASSERT_EQ(back.params, net.params);
    EXPECT_EQ(back.output.shift, net.output.shift);
    EXPECT_EQ(back.output.scale, net.output.scale);
    std::vector<double> x(arch.input_dim, 0.3);
    EXPECT_EQ(forward(back, x), forward(net, x));
  }
}

TEST(Checkpoint, TruncatedWeightsNameCounts) {
  const Mlp net = init_mlp(ArchSpec::parse("2-[3]-1"), 1);
  auto j = to_json(net);
  j["params"].erase(j["params"].size() - 1);
  try {
    mlp_from_json(j);
    FAIL() << "expected DataError";
  } catch (const DataError &e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("13"), std::string::npos) << m;
    EXPECT_NE(m.find("12"), std::string::npos) << m;
  }
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
  const Mlp net = init_mlp(ArchSpec::parse("2-[3]-1"), 1);
  EXPECT_THROW(mlp_from_json(to_json(net), ArchSpec::parse("2-[4]-1")), DataError);
}
