#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "relgraph/synth.hpp"
#include "relgraph/train.hpp"

using namespace relgraph;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relgraph_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(GenIdentity, UniformStructureAtZeroSharpness) {
  Rng rng(1);
  const IdentitySpec s = gen_identity(rng, 6, 4, 0.0);
  for (double v : s.structure.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(GenIdentity, RowsStochasticAndDeterministic) {
  Rng a(2), b(2);
  const IdentitySpec s = gen_identity(a, 9, 5, 2.0), t = gen_identity(b, 9, 5, 2.0);
  EXPECT_EQ(s.parts, t.parts);
  EXPECT_EQ(s.structure, t.structure);
  for (std::size_t i = 0; i < 9; ++i) {
    double sum = 0.0;
    for (double v : s.structure.row(i)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(GenSample, CleanIdentityDomainIsMixedParts) {
  Rng rng(3);
  const IdentitySpec s = gen_identity(rng, 4, 3, 1.0);
  const Sample x = gen_sample(s, identity_domain(3, 0.0), 2, 2, rng);
  const Tensor mixed = matmul(s.structure, s.parts);
  EXPECT_EQ(nodes_from_feature_map(x.features), mixed);
}

TEST(GenSample, DomainsDifferByChannelAffine) {
  Rng rng(4);
  const IdentitySpec s = gen_identity(rng, 16, 6, 1.0);
  const DomainSpec nir = distorted_domain(Domain::nir, 6, 2.0, 0.0, rng);
  const Tensor a = nodes_from_feature_map(gen_sample(s, identity_domain(6, 0.0), 4, 4, rng).features);
  const Tensor b = nodes_from_feature_map(gen_sample(s, nir, 4, 4, rng).features);
  for (std::size_t c = 0; c < 6; ++c) {
    std::vector<double> ca, cb;
    for (std::size_t i = 0; i < 16; ++i) ca.push_back(a(i, c)), cb.push_back(b(i, c));
    EXPECT_NEAR(pearson(ca, cb), 1.0, 1e-9);
    EXPECT_GT(nir.gain[c], 0.0);
  }
}

TEST(GenSample, SameIdentityDiffersOnlyByNoise) {
  Rng rng(5);
  const double sigma = 0.3;
  const IdentitySpec s = gen_identity(rng, 16, 8, 1.0);
  const DomainSpec d = identity_domain(8, sigma);
  const double bound = 3.0 * sigma * std::sqrt(16.0 * 8.0);
  int within = 0;
  for (int t = 0; t < 1000; ++t) {
    const Sample a = gen_sample(s, d, 4, 4, rng), b = gen_sample(s, d, 4, 4, rng);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.features.data.size(); ++i) {
      const double diff = a.features.data[i] - b.features.data[i];
      sq += diff * diff;
    }
    within += std::sqrt(sq) <= bound;
  }
  EXPECT_GE(within, 990);
}

TEST(GenSample, ShapeMismatchRejected) {
  Rng rng(6);
  const IdentitySpec s = gen_identity(rng, 4, 3, 1.0);
  EXPECT_THROW(gen_sample(s, identity_domain(3, 0.0), 3, 2, rng), ShapeError);
  EXPECT_THROW(gen_sample(s, identity_domain(2, 0.0), 2, 2, rng), ShapeError);
}

TEST(GenDataset, CountsAndDisjointSplits) {
  DatasetConfig cfg;
  const Dataset ds = gen_dataset(cfg);
  EXPECT_EQ(ds.gallery.size(), 20u);
  EXPECT_EQ(ds.probe.size(), 100u);
  EXPECT_EQ(ds.train.size(), 40u * 5u * 2u);
  std::set<std::size_t> train_ids, test_ids;
  for (const auto& s : ds.train) train_ids.insert(s.identity);
  for (const auto& s : ds.gallery) {
    test_ids.insert(s.identity);
    EXPECT_EQ(s.domain, Domain::vis);
  }
  for (const auto& s : ds.probe) {
    EXPECT_TRUE(test_ids.count(s.identity));
    EXPECT_EQ(s.domain, Domain::nir);
  }
  for (auto id : test_ids) EXPECT_FALSE(train_ids.count(id));
  EXPECT_EQ(train_ids.size(), 40u);
}

TEST(GenDataset, InvalidCountsRejected) {
  DatasetConfig cfg;
  cfg.test_ids = 0;
  EXPECT_THROW(gen_dataset(cfg), ConfigError);
}

// Raw-feature matching collapses across domains but not within one.
TEST(GenDataset, DomainGapSeparatesRawMatching) {
  double cross = 0.0, same = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    DatasetConfig cfg;
    cfg.seed = seed;
    cross += evaluate_baseline(gen_dataset(cfg)).rank1;
    cfg.domain_gap = 0.0;
    same += evaluate_baseline(gen_dataset(cfg)).rank1;
  }
  EXPECT_LT(cross / 5, 0.6);
  EXPECT_GT(same / 5, 0.95);
}

TEST(TensorIo, RoundTripIsBitExact) {
  Rng rng(7);
  const fs::path dir = scratch_dir("tensor");
  for (const Dims& d : {Dims{7}, Dims{3, 4}, Dims{2, 3, 5}}) {
    Tensor t = rng.normal_tensor(d, 1e3);
    t[0] = -0.0;
    t[t.size() - 1] = 5e-324;
    save_tensor(dir / "t.rgt", t);
    const Tensor u = load_tensor(dir / "t.rgt");
    ASSERT_EQ(u.dims(), t.dims());
    EXPECT_EQ(std::memcmp(u.data().data(), t.data().data(), 8 * t.size()), 0);
  }
}

TEST(TensorIo, HeaderLayout) {
  const std::string b = encode_tensor(Tensor::matrix({{1.0, 2.0}}));
  ASSERT_EQ(b.size(), 8u + 16u + 16u);
  EXPECT_EQ(b.substr(0, 4), "RGT1");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 2);
  EXPECT_EQ(b[6], 0);
  EXPECT_EQ(b[8], 1);
  EXPECT_EQ(b[16], 2);
  EXPECT_EQ(static_cast<unsigned char>(b[24 + 7]), 0x3F);  // 1.0 little-endian
}

TEST(TensorIo, BadMagicNamesOffsetZero) {
  std::string b = encode_tensor(Tensor::vector({1, 2, 3}));
  b[0] = 'X';
  try {
    decode_tensor(bytes(b));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(TensorIo, TruncationAndSizeMismatchRejected) {
  const std::string b = encode_tensor(Tensor::vector({1, 2, 3}));
  EXPECT_THROW(decode_tensor(bytes(b.substr(0, b.size() - 1))), FormatError);
  EXPECT_THROW(decode_tensor(bytes(b.substr(0, 6))), FormatError);
  EXPECT_THROW(decode_tensor(bytes(b + "extra123")), FormatError);
  std::string dtype = b;
  dtype[4] = 2;
  EXPECT_THROW(decode_tensor(bytes(dtype)), FormatError);
  std::string dims = b;
  dims[8] = 4;  // claims 4 values, payload has 3
  EXPECT_THROW(decode_tensor(bytes(dims)), FormatError);
}

TEST(TensorIo, MissingFileIsIoError) { EXPECT_THROW(load_tensor("/nonexistent/x.rgt"), IoError); }

TEST(Bundle, RoundTripAndCorruption) {
  Rng rng(8);
  const NamedTensors entries{{"a", rng.normal_tensor({3})}, {"bb", rng.normal_tensor({2, 2})}};
  const std::string b = encode_bundle(entries);
  EXPECT_EQ(decode_bundle(bytes(b)), entries);
  std::string bad = b;
  bad[1] = 'Z';
  EXPECT_THROW(decode_bundle(bytes(bad)), FormatError);
  for (std::size_t cut : {std::size_t{5}, std::size_t{12}, b.size() - 3})
    EXPECT_THROW(decode_bundle(bytes(b.substr(0, cut))), FormatError) << cut;
}

TEST(DatasetIo, RoundTripAndByteIdenticalRegeneration) {
  DatasetConfig cfg;
  cfg.train_ids = 3;
  cfg.test_ids = 2;
  cfg.per_id = 2;
  const fs::path a = scratch_dir("ds_a"), b = scratch_dir("ds_b");
  save_dataset(a, gen_dataset(cfg));
  save_dataset(b, gen_dataset(cfg));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 1u + 12u + 2u + 4u);

  const Dataset back = load_dataset(a), orig = gen_dataset(cfg);
  ASSERT_EQ(back.probe.size(), orig.probe.size());
  for (std::size_t i = 0; i < orig.probe.size(); ++i) {
    EXPECT_EQ(back.probe[i].features.data, orig.probe[i].features.data);
    EXPECT_EQ(back.probe[i].identity, orig.probe[i].identity);
    EXPECT_EQ(back.probe[i].domain, orig.probe[i].domain);
  }
  EXPECT_EQ(back.config.seed, cfg.seed);
}

TEST(DatasetIo, CorruptManifestAndTensorRejected) {
  DatasetConfig cfg;
  cfg.train_ids = 1;
  cfg.test_ids = 1;
  cfg.per_id = 1;
  const fs::path dir = scratch_dir("ds_bad");
  save_dataset(dir, gen_dataset(cfg));
  {
    std::ofstream f(dir / "tensors" / "probe_00000.rgt", std::ios::binary | std::ios::trunc);
    f << "RGT1";
  }
  EXPECT_THROW(load_dataset(dir), FormatError);
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    f << "{ not json";
  }
  EXPECT_THROW(load_dataset(dir), FormatError);
}
