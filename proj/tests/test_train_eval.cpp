#include <gtest/gtest.h>

#include <filesystem>

#include "relgraph/gradcheck.hpp"
#include "relgraph/train.hpp"
#include "oracles.hpp"

using namespace relgraph;
namespace fs = std::filesystem;

namespace {

DatasetConfig desk_data(std::uint64_t seed = 1) {
  DatasetConfig c;
  c.train_ids = 8;
  c.test_ids = 4;
  c.per_id = 4;
  c.seed = seed;
  return c;
}

TrainConfig quick_train(LossId loss = LossId::csoftmax, std::uint64_t seed = 1) {
  TrainConfig t;
  t.lr = 0.005;
  t.batch = 16;
  t.epochs = 15;
  t.loss.id = loss;
  t.seed = seed;
  return t;
}

std::vector<Tensor> snapshot(const HeadModel& m) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : m.parameters(LossId::softmax)) out.push_back(*t);
  return out;
}

}  // namespace

TEST(Sgd, ZeroMomentumIsGradientDescent) {
  Tensor p = Tensor::vector({1, 2});
  std::vector<Tensor> v;
  Tensor* ptrs[] = {&p};
  const Tensor g[] = {Tensor::vector({0.5, -1})};
  sgd_momentum_step(ptrs, g, v, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], 2.1);
}

TEST(Sgd, VelocityDecaysGeometrically) {
  Tensor p = Tensor::vector({0});
  std::vector<Tensor> v{Tensor::vector({1})};
  Tensor* ptrs[] = {&p};
  const Tensor g[] = {Tensor::vector({0})};
  for (int k = 1; k <= 5; ++k) {
    sgd_momentum_step(ptrs, g, v, 0.1, 0.9);
    EXPECT_NEAR(v[0][0], std::pow(0.9, k), 1e-15);
  }
}

TEST(Sgd, TwoStepsUnrolled) {
  Tensor p = Tensor::vector({1.0});
  std::vector<Tensor> v;
  Tensor* ptrs[] = {&p};
  const Tensor g1[] = {Tensor::vector({2.0})}, g2[] = {Tensor::vector({-1.0})};
  sgd_momentum_step(ptrs, g1, v, 0.1, 0.9);
  sgd_momentum_step(ptrs, g2, v, 0.1, 0.9);
  // v1 = 2, p1 = 0.8; v2 = 1.8 − 1 = 0.8, p2 = 0.72
  EXPECT_NEAR(v[0][0], 0.8, 1e-15);
  EXPECT_NEAR(p[0], 0.72, 1e-15);
}

TEST(Sgd, ShapeMismatch) {
  Tensor p = Tensor::vector({1, 2});
  std::vector<Tensor> v;
  Tensor* ptrs[] = {&p};
  const Tensor g[] = {Tensor::vector({1})};
  EXPECT_THROW(sgd_momentum_step(ptrs, g, v, 0.1, 0.9), ShapeError);
}

TEST(TrainConfigTest, ValidationAndSchedule) {
  TrainConfig t;
  t.dropout = 1.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.batch = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.epochs = 100;
  EXPECT_DOUBLE_EQ(t.lr_at(49), t.lr);
  EXPECT_DOUBLE_EQ(t.lr_at(50), t.lr * 0.1);
  EXPECT_DOUBLE_EQ(t.lr_at(75), t.lr * 0.01);
}

TEST(Train, ZeroEpochsLeavesParameters) {
  const Dataset ds = gen_dataset(desk_data());
  TrainConfig tc = quick_train();
  tc.epochs = 0;
  Rng rng(1);
  HeadModel m = init_head(head_config_for(ds, Variant::rgm_nau, 8, 16), rng);
  const auto before = snapshot(m);
  EXPECT_TRUE(train(ds.train, m, tc).empty());
  EXPECT_EQ(snapshot(m), before);
}

TEST(Train, ZeroRateLeavesParametersAndLoss) {
  const Dataset ds = gen_dataset(desk_data());
  TrainConfig tc = quick_train();
  tc.lr = 0.0;
  tc.dropout = 0.0;
  tc.epochs = 3;
  Rng rng(1);
  HeadModel m = init_head(head_config_for(ds, Variant::rgm_nau, 8, 16), rng);
  const auto before = snapshot(m);
  const auto log = train(ds.train, m, tc);
  EXPECT_EQ(snapshot(m), before);
  ASSERT_EQ(log.size(), 3u);
  EXPECT_NEAR(log[1].loss, log[0].loss, 1e-12);
  EXPECT_NEAR(log[2].loss, log[0].loss, 1e-12);
}

TEST(Train, LossDecreasesForEveryLossAndSeed) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = gen_dataset(desk_data(seed));
    auto [m, log] = fit(ds, head_config_for(ds, Variant::rgm_nau, 8, 16), quick_train(LossId::csoftmax, seed));
    EXPECT_LT(log.back().loss, log.front().loss) << "seed " << seed;
  }
  const Dataset ds = gen_dataset(desk_data());
  for (LossId id : {LossId::softmax, LossId::nsoftmax, LossId::cosface, LossId::arcface, LossId::triplet_cond}) {
    auto [m, log] = fit(ds, head_config_for(ds, Variant::rgm_nau, 8, 16), quick_train(id));
    EXPECT_LT(log.back().loss, log.front().loss) << to_string(id);
  }
}

TEST(Train, DeterministicGivenSeeds) {
  const Dataset ds = gen_dataset(desk_data());
  const HeadConfig hc = head_config_for(ds, Variant::rgm_nau, 8, 16);
  auto [a, la] = fit(ds, hc, quick_train());
  auto [b, lb] = fit(ds, hc, quick_train());
  EXPECT_EQ(snapshot(a), snapshot(b));
  const EvalReport ra = evaluate_model(a, ds), rb = evaluate_model(b, ds);
  EXPECT_EQ(ra.rank1, rb.rank1);
  for (std::size_t k = 0; k < ra.verification.size(); ++k) EXPECT_EQ(ra.verification[k].vr, rb.verification[k].vr);
}

TEST(Train, NonFiniteLossAborts) {
  const Dataset ds = gen_dataset(desk_data());
  TrainConfig tc = quick_train(LossId::softmax);
  tc.lr = 1e6;
  tc.epochs = 20;
  Rng rng(1);
  HeadModel m = init_head(head_config_for(ds, Variant::rgm, 8, 16), rng);
  EXPECT_THROW(train(ds.train, m, tc), NumericalError);
}

TEST(Train, LabelBeyondClassifierRejected) {
  const Dataset ds = gen_dataset(desk_data());
  HeadConfig hc = head_config_for(ds, Variant::rgm_nau, 8, 16);
  hc.classes = 3;
  Rng rng(1);
  HeadModel m = init_head(hc, rng);
  EXPECT_THROW(train(ds.train, m, quick_train()), ConfigError);
}

// Every head variant and loss: analytic batch gradients agree with
// central differences at the small gradcheck dims.
TEST(Gradcheck, AllLossesAndVariantsPass) {
  for (Variant v : {Variant::linear, Variant::rgm, Variant::rgm_nau})
    for (LossId id : {LossId::softmax, LossId::nsoftmax, LossId::csoftmax, LossId::cosface, LossId::arcface,
                      LossId::triplet_cond})
      for (EdgeActivation act : {EdgeActivation::sigmoid, EdgeActivation::softmax}) {
        GradCheckProblem p = make_gradcheck_problem(3, id, v, act);
        const GradCheckReport r = gradcheck(p.model, p.input, LossConfig{id});
        EXPECT_TRUE(r.passed()) << to_string(v) << " " << to_string(id) << " " << r.max_rel_error();
      }
}

// Input gradients are ~1e-5 against a loss of ~1, so central differences
// carry ~1e-11 of roundoff; judge them at 1e-4.
TEST(Gradcheck, InputGradientsPass) {
  GradCheckProblem p = make_gradcheck_problem(4, LossId::csoftmax);
  GradCheckOptions opt;
  opt.check_input = true;
  opt.tolerance = 1e-4;
  const GradCheckReport r = gradcheck(p.model, p.input, LossConfig{}, opt);
  EXPECT_TRUE(r.passed()) << r.max_rel_error();
  EXPECT_EQ(r.groups.size(), p.model.parameters(LossId::csoftmax).size() + 4);
}

TEST(Gradcheck, CorruptAdjointIsCaught) {
  GradCheckProblem p = make_gradcheck_problem(5, LossId::csoftmax);
  GradCheckOptions opt;
  opt.corrupt_adjoint = true;
  const GradCheckReport r = gradcheck(p.model, p.input, LossConfig{}, opt);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.groups.front().max_rel_error, 0.1);
}

TEST(Gradcheck, EmptyBatchRejected) {
  GradCheckDims d;
  d.batch = 0;
  EXPECT_THROW(make_gradcheck_problem(1, LossId::csoftmax, Variant::rgm_nau, EdgeActivation::sigmoid, d), ConfigError);
}

TEST(Similarity, KnownEntriesAndOracle) {
  const Tensor p = Tensor::matrix({{1, 2, 0}, {0, 0, 3}});
  const Tensor s = cosine_similarity_matrix(p, Tensor::matrix({{1, 2, 0}}));
  EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
  EXPECT_EQ(s(1, 0), 0.0);
  Rng rng(1);
  const Tensor a = rng.normal_tensor({7, 5}), b = rng.normal_tensor({4, 5});
  const Tensor c = cosine_similarity_matrix(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(c(i, j), oracle::cosine(a, i, transpose(b), j), 1e-12);
  EXPECT_THROW(cosine_similarity_matrix(Tensor({1, 5}), b), DegenerateInputError);
}

TEST(Rank1, BlockAndAdversarial) {
  const std::vector<std::size_t> gallery{0, 1, 2}, probe{0, 0, 1, 2};
  Tensor sim({4, 3});
  for (std::size_t i = 0; i < 4; ++i) sim(i, probe[i]) = 1.0;
  EXPECT_EQ(rank1(sim, probe, gallery), 1.0);
  Tensor wrong({4, 3});
  for (std::size_t i = 0; i < 4; ++i) wrong(i, (probe[i] + 1) % 3) = 1.0;
  EXPECT_EQ(rank1(wrong, probe, gallery), 0.0);
}

TEST(Rank1, TiesGoToLowestIndex) {
  const Tensor sim = Tensor::matrix({{0.5, 0.5}});
  EXPECT_EQ(rank1(sim, {7}, {7, 8}), 1.0);
  EXPECT_EQ(rank1(sim, {8}, {7, 8}), 0.0);
}

TEST(Rank1, MatchesBruteForce) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor sim = rng.uniform_tensor({10, 5}, -1, 1);
    std::vector<std::size_t> gallery{0, 1, 2, 3, 4}, probe;
    for (int i = 0; i < 10; ++i) probe.push_back(rng.below(5));
    EXPECT_EQ(rank1(sim, probe, gallery), oracle::rank1(sim, probe, gallery));
  }
}

TEST(Rank1, MissingIdentityRejected) {
  EXPECT_THROW(rank1(Tensor({1, 2}), {5}, {0, 1}), std::out_of_range);
}

TEST(VrAtFar, PerfectSeparation) {
  const ScoreSplit s{{0.9, 0.9, 0.9}, std::vector<double>(1000, 0.1)};
  for (const auto& p : vr_at_far(s, kDefaultFarLevels)) EXPECT_EQ(p.vr, 1.0);
}

TEST(VrAtFar, FourImpostorWorkedExample) {
  const ScoreSplit s{{0.8}, {0.9, 0.7, 0.5, 0.3}};
  const auto pts = vr_at_far(s, {0.25, 0.5});
  EXPECT_EQ(pts[0].threshold, 0.9);
  EXPECT_EQ(pts[0].vr, 0.0);
  EXPECT_EQ(pts[0].achieved_far, 0.25);
  EXPECT_EQ(pts[1].threshold, 0.7);
  EXPECT_EQ(pts[1].vr, 1.0);
  EXPECT_EQ(pts[1].achieved_far, 0.5);
}

TEST(VrAtFar, NoQualifyingImpostorGivesZeroFar) {
  const ScoreSplit s{{0.95, 0.5}, {0.9, 0.7}};
  const auto p = vr_at_far(s, {0.01}).front();
  EXPECT_GT(p.threshold, 0.9);
  EXPECT_EQ(p.achieved_far, 0.0);
  EXPECT_EQ(p.vr, 0.5);
}

TEST(VrAtFar, MatchesBruteForceAndIsMonotone) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    ScoreSplit s;
    for (int i = 0; i < 20; ++i) s.genuine.push_back(std::round(rng.uniform() * 20) / 20);
    for (int i = 0; i < 60; ++i) s.impostor.push_back(std::round(rng.uniform() * 20) / 20);
    const std::vector<double> levels{0.01, 0.05, 0.1, 0.25, 0.5, 1.0};
    const auto pts = vr_at_far(s, levels);
    for (std::size_t k = 0; k < levels.size(); ++k) {
      EXPECT_EQ(pts[k].vr, oracle::vr_at_far(s.genuine, s.impostor, levels[k]));
      EXPECT_LE(pts[k].achieved_far, levels[k]);
      if (k) EXPECT_GE(pts[k].vr, pts[k - 1].vr);
    }
  }
}

TEST(VrAtFar, OverlappingDistributionsTrackFar) {
  Rng rng(4);
  ScoreSplit s;
  for (int i = 0; i < 10000; ++i) s.genuine.push_back(rng.normal());
  for (int i = 0; i < 10000; ++i) s.impostor.push_back(rng.normal());
  for (const auto& p : vr_at_far(s, {0.01, 0.1, 0.3, 0.5})) EXPECT_NEAR(p.vr, p.far_level, 0.05);
}

TEST(VrAtFar, EmptySetsRejected) {
  EXPECT_THROW(vr_at_far(ScoreSplit{{}, {0.1}}, {0.01}), DegenerateInputError);
  EXPECT_THROW(vr_at_far(ScoreSplit{{0.1}, {}}, {0.01}), DegenerateInputError);
}

TEST(Evaluate, ReportCountsAndRescaleInvariance) {
  Rng rng(5);
  const Tensor probe = rng.normal_tensor({12, 6}), gallery = rng.normal_tensor({4, 6});
  std::vector<std::size_t> pid, gid{0, 1, 2, 3};
  for (int i = 0; i < 12; ++i) pid.push_back(i % 4);
  const EvalReport a = evaluate_embeddings(probe, gallery, pid, gid, {0.1, 0.5});
  EXPECT_EQ(a.genuine_pairs + a.impostor_pairs, 48u);
  EXPECT_EQ(a.genuine_pairs, 12u);
  const EvalReport b = evaluate_embeddings(scale(probe, 37.5), scale(gallery, 1e-3), pid, gid, {0.1, 0.5});
  EXPECT_NEAR(a.rank1, b.rank1, 1e-12);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.verification[k].vr, b.verification[k].vr, 1e-12);
}

TEST(Sweep, RowsFollowDims) {
  const Dataset ds = gen_dataset(desk_data());
  TrainConfig tc = quick_train();
  tc.epochs = 2;
  const HeadConfig hc = head_config_for(ds, Variant::rgm_nau, 8, 16);
  const auto one = dim_sweep(ds, {4}, hc, tc);
  ASSERT_EQ(one.size(), 1u);
  const auto dup = dim_sweep(ds, {4, 4}, hc, tc);
  EXPECT_EQ(dup[0].report.rank1, dup[1].report.rank1);
  EXPECT_EQ(dup[0].report.verification[0].vr, dup[1].report.verification[0].vr);
  EXPECT_THROW(dim_sweep(ds, {}, hc, tc), ConfigError);
}

TEST(Toy, UntrainedStatsAreFinite) {
  ToyConfig tc;
  tc.train.epochs = 0;
  const ToyResult r = toy2d(tc);
  EXPECT_EQ(r.points.size(), 8u * 30u);
  ASSERT_TRUE(r.stats.min_gap.has_value());
  EXPECT_TRUE(std::isfinite(*r.stats.min_gap));
  EXPECT_TRUE(std::isfinite(r.stats.intra_std));
  for (const auto& p : r.points) EXPECT_NEAR(std::hypot(p.x, p.y), 1.0, 1e-12);
}

TEST(Toy, SingleClassHasNoGap) {
  ToyConfig tc;
  tc.classes = 1;
  tc.train.epochs = 0;
  const ToyResult r = toy2d(tc);
  EXPECT_FALSE(r.stats.min_gap.has_value());
  EXPECT_TRUE(std::isfinite(r.stats.intra_std));
}

TEST(Toy, AngularStatsOnKnownLayout) {
  std::vector<ToyPoint> pts;
  for (std::size_t c = 0; c < 4; ++c)
    for (double d : {-0.1, 0.1}) pts.push_back({c, Domain::vis, 0, 0, wrap_angle(c * std::numbers::pi / 2 + d)});
  const AngularStats st = angular_stats(pts, 4);
  EXPECT_NEAR(*st.min_gap, std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(st.intra_std, 0.1, 1e-12);
}

TEST(Checkpoint, RoundTripReproducesMetrics) {
  const Dataset ds = gen_dataset(desk_data());
  TrainConfig tc = quick_train();
  tc.epochs = 3;
  auto [m, log] = fit(ds, head_config_for(ds, Variant::rgm_nau, 8, 16, EdgeActivation::softmax), tc);
  const fs::path path = fs::temp_directory_path() / "relgraph_test_ckpt.rgb";
  save_checkpoint(path, m);
  const HeadModel back = load_checkpoint(path);
  EXPECT_EQ(snapshot(back), snapshot(m));
  EXPECT_EQ(back.config.edge_activation, EdgeActivation::softmax);
  const EvalReport a = evaluate_model(m, ds), b = evaluate_model(back, ds);
  EXPECT_EQ(a.rank1, b.rank1);
  for (std::size_t k = 0; k < a.verification.size(); ++k) EXPECT_EQ(a.verification[k].vr, b.verification[k].vr);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const fs::path path = fs::temp_directory_path() / "relgraph_test_ckpt_bad.rgb";
  save_bundle(path, {{"meta", Tensor::vector({9, 1, 1, 1, 1, 1, 1, 1, 0})}});
  EXPECT_THROW(load_checkpoint(path), FormatError);
  save_bundle(path, {{"W1", Tensor::vector({1})}});
  EXPECT_THROW(load_checkpoint(path), FormatError);
}
