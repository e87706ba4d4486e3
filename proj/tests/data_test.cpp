#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "zofa/data.hpp"
#include "zofa/engine.hpp"
#include "zofa/error.hpp"
#include "zofa/gradients.hpp"

using namespace zofa;

namespace {

Dataset small_task(std::uint64_t seed, std::size_t dim = 8) {
  TaskSpec t;
  t.seed = seed;
  t.dim = dim;
  t.classes = 3;
  t.n_train = 60;
  t.n_test = 40;
  return make_source_task(t).second;
}

double mean_shift(const Dataset& a, const Dataset& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.x.size(); ++i) s += std::abs(a.x[i] - b.x[i]);
  return s / static_cast<double>(a.x.size());
}

const CorruptionKind kAllKinds[] = {CorruptionKind::gauss_noise, CorruptionKind::feature_scale,
                                    CorruptionKind::rotation_2plane, CorruptionKind::mask_dropout,
                                    CorruptionKind::mixed};

}  // namespace

TEST(SourceTask, DeterministicAndShaped) {
  TaskSpec t;
  t.n_train = 100;
  t.n_test = 50;
  const auto [a_train, a_test] = make_source_task(t);
  const auto [b_train, b_test] = make_source_task(t);
  EXPECT_EQ(a_train.x, b_train.x);
  EXPECT_EQ(a_test.y, b_test.y);
  EXPECT_EQ(a_train.x.rows(), 100u);
  EXPECT_EQ(a_test.x.cols(), t.dim);
  EXPECT_NE(a_train.x.row(0)[0], a_test.x.row(0)[0]);
  t.seed = 1;
  EXPECT_NE(make_source_task(t).first.x, a_train.x);
  for (int y : a_train.y) {
    EXPECT_GE(y, 0);
    EXPECT_LT(y, static_cast<int>(t.classes));
  }
  t.dim = 1;
  EXPECT_THROW(make_source_task(t), InputError);
}

TEST(Corruption, DeterministicAndLabelPreserving) {
  const Dataset ds = small_task(2);
  for (CorruptionKind k : kAllKinds) {
    const CorruptionSpec spec{k, 3, 11};
    const Dataset a = corrupt(ds, spec), b = corrupt(ds, spec);
    EXPECT_EQ(a.x, b.x) << to_string(k);
    EXPECT_EQ(a.y, ds.y);
    EXPECT_NE(a.x, ds.x) << to_string(k);
    EXPECT_EQ(a.meta.severity, 3);
  }
}

TEST(Corruption, SeverityZeroIsIdentity) {
  const Dataset ds = small_task(3);
  for (CorruptionKind k : kAllKinds) EXPECT_EQ(corrupt(ds, {k, 0, 5}).x, ds.x) << to_string(k);
}

TEST(Corruption, ShiftGrowsWithSeverity) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = small_task(seed, 32);
    for (CorruptionKind k : kAllKinds) {
      double prev = 0.0;
      for (int sev = 1; sev <= 5; ++sev) {
        const double shift = mean_shift(corrupt(ds, {k, sev, seed + 40}), ds);
        EXPECT_GT(shift, prev) << to_string(k) << " severity " << sev << " seed " << seed;
        prev = shift;
      }
    }
  }
}

TEST(Corruption, RotationKeepsRowNorms) {
  const Dataset ds = small_task(4);
  const Dataset r = corrupt(ds, {CorruptionKind::rotation_2plane, 5, 2});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double a = 0.0, b = 0.0;
    for (double v : ds.x.row(i)) a += v * v;
    for (double v : r.x.row(i)) b += v * v;
    EXPECT_NEAR(a, b, 1e-9 * a);
  }
}

TEST(Corruption, RejectsBadInputs) {
  Dataset narrow;
  narrow.x = Tensor::matrix(2, 1, {1.0, 2.0});
  narrow.y = {0, 1};
  EXPECT_THROW(corrupt(narrow, {CorruptionKind::rotation_2plane, 3, 1}), InputError);
  EXPECT_THROW(corrupt(small_task(1), {CorruptionKind::gauss_noise, 6, 1}), InputError);
  EXPECT_THROW(corruption_kind_from_string("fog"), InputError);
  EXPECT_EQ(corruption_kind_from_string(to_string(CorruptionKind::mask_dropout)), CorruptionKind::mask_dropout);
}

TEST(Corruption, DegradesSourceAccuracy) {
  // Averaged over seeds: heavier corruption costs more accuracy.
  double acc1 = 0.0, acc5 = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TaskSpec t;
    t.seed = seed;
    t.dim = 8;
    t.classes = 4;
    t.n_train = 400;
    t.n_test = 300;
    const auto [train, test] = make_source_task(t);
    MlpSpec m;
    m.input = 8;
    m.classes = 4;
    m.hidden = 16;
    m.depth = 1;
    PretrainOptions opt;
    opt.steps = 150;
    opt.batch_size = 64;
    const Network net = pretrain_source(make_mlp(m, seed), train, opt);
    acc1 += static_accuracy(net, corrupt(test, {CorruptionKind::gauss_noise, 1, seed}));
    acc5 += static_accuracy(net, corrupt(test, {CorruptionKind::gauss_noise, 5, seed}));
  }
  EXPECT_GT(acc1, acc5);
}

TEST(Protocol, PresetHasFifteenDomains) {
  const auto domains = preset_domains(5, 7);
  ASSERT_EQ(domains.size(), 15u);
  std::set<std::string> names;
  for (const auto& d : domains) {
    EXPECT_EQ(d.severity, 5);
    names.insert(domain_name(d));
  }
  EXPECT_EQ(names.size(), 15u);
}

TEST(Protocol, DomainListParsing) {
  const auto list = parse_domain_list("gauss-noise:3, rotation-2plane:5:42,mask-dropout", 2, 9);
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0].kind, CorruptionKind::gauss_noise);
  EXPECT_EQ(list[0].severity, 3);
  EXPECT_EQ(list[1].seed, 42u);
  EXPECT_EQ(list[2].severity, 2);
  EXPECT_EQ(parse_domain_list("preset15", 4, 1).size(), 15u);
  EXPECT_THROW(parse_domain_list("", 5, 1), InputError);
  EXPECT_THROW(parse_domain_list("gauss-noise:x", 5, 1), InputError);
}

TEST(Protocol, SeededOrders) {
  const auto domains = parse_domain_list("gauss-noise,feature-scale", 5, 1);
  const auto a = build_protocol(domains, 100, 30, 4);
  const auto b = build_protocol(domains, 100, 30, 4);
  const auto c = build_protocol(domains, 100, 30, 5);
  ASSERT_EQ(a.domains.size(), 2u);
  EXPECT_EQ(a.domains[0].order, b.domains[0].order);
  EXPECT_NE(a.domains[0].order, c.domains[0].order);
  EXPECT_NE(a.domains[0].order, a.domains[1].order);
  EXPECT_EQ(a.domains[0].order.size(), 30u);
  std::set<std::size_t> unique(a.domains[0].order.begin(), a.domains[0].order.end());
  EXPECT_EQ(unique.size(), 30u);
  EXPECT_EQ(build_protocol(domains, 100, 0, 4).domains[0].order.size(), 100u);
}

TEST(DatasetFile, RoundTrip) {
  const Dataset ds = corrupt(small_task(5), {CorruptionKind::mixed, 4, 3});
  const std::string bytes = encode_dataset(ds);
  EXPECT_EQ(bytes.substr(0, 5), "ZOFD1");
  const Dataset back = decode_dataset(bytes);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.y, ds.y);
  const auto path = std::filesystem::temp_directory_path() / "zofa_data_test.zofd";
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path).x, ds.x);
  std::filesystem::remove(path);
}

TEST(DatasetFile, RejectsMalformed) {
  EXPECT_THROW(decode_dataset("ZOFD0"), IoError);
  std::string bytes = encode_dataset(small_task(1));
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(decode_dataset(bytes + "x"), IoError);
  EXPECT_THROW(load_dataset("/nonexistent/zofa.zofd"), IoError);
}

TEST(DatasetFile, RejectsOutOfRangeLabels) {
  Dataset ds = small_task(1);
  ds.y[0] = 7;
  EXPECT_THROW(ds.validate(), InputError);
}
