#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "osld/adaptation.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace osld;

namespace {

ClusterAssignment single_cluster(std::size_t n, std::size_t dim) {
  ClusterAssignment a;
  a.k = 1;
  a.dim = dim;
  a.labels.assign(n, 0);
  a.centroids.assign(dim, 0.0f);
  return a;
}

EmbeddingMatrix rows(const std::vector<std::vector<float>>& vs) {
  EmbeddingMatrix X(0, vs[0].size());
  for (std::size_t i = 0; i < vs.size(); ++i) X.append("m" + std::to_string(i), vs[i]);
  return X;
}


ClusterProfile profile(std::size_t cluster, const std::string& token, std::vector<float> centroid) {
  return {cluster, {{token, 1.0}}, std::move(centroid)};
}

}  // namespace

TEST(Method, Names) {
  EXPECT_EQ(to_string(Method::v2), "v2");
  EXPECT_EQ(method_from_string("baseline"), Method::baseline);
  EXPECT_THROW(method_from_string("v3"), std::invalid_argument);
}

TEST(SelectPseudolabeled, KeepCounts) {
  for (auto [n, expected] : {std::pair<std::size_t, std::size_t>{10, 4}, {3, 2}, {1, 1}, {20, 8}}) {
    std::vector<std::vector<float>> vs;
    for (std::size_t i = 0; i < n; ++i) vs.push_back({1.0f, static_cast<float>(i)});
    const auto set = select_pseudolabeled(single_cluster(n, 2), {{1.0f, 0.0f}}, rows(vs));
    EXPECT_EQ(set.kept_count(), expected) << n;
  }
}

TEST(SelectPseudolabeled, HandBuiltCosines) {
  // Cosines to (1, 0): 1, 0.7071, 0, 0.9950, -1.
  const auto X = rows({{1, 0}, {1, 1}, {0, 1}, {1, -0.1f}, {-1, 0}});
  const auto set = select_pseudolabeled(single_cluster(5, 2), {{1.0f, 0.0f}}, X);
  const auto kept = set.kept();
  ASSERT_EQ(kept.size(), 2u);
  std::set<std::string> ids{kept[0].id, kept[1].id};
  EXPECT_EQ(ids, (std::set<std::string>{"m0", "m3"}));
  EXPECT_NEAR(set.clusters[0][1].cosine, 1.0 / std::sqrt(1.01), 1e-6);
}

TEST(SelectPseudolabeled, ZeroNormNeverKept) {
  const auto X = rows({{0, 0}, {0, 0}, {1, 1}});
  const auto set = select_pseudolabeled(single_cluster(3, 2), {{1.0f, 0.0f}}, X);
  ASSERT_EQ(set.kept_count(), 1u);
  EXPECT_EQ(set.kept()[0].id, "m2");
}

TEST(SelectPseudolabeled, InvariantToPositiveRescaling) {
  Rng rng(3);
  std::vector<std::vector<float>> vs, scaled;
  for (int i = 0; i < 12; ++i) {
    std::vector<float> v{static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1)),
                         static_cast<float>(rng.uniform(-1, 1))};
    vs.push_back(v);
    for (auto& x : v) x *= 4.0f;
    scaled.push_back(v);
  }
  ClusterAssignment a = single_cluster(12, 3);
  a.k = 2;
  for (int i = 0; i < 12; ++i) a.labels[i] = i % 2;
  const std::vector<std::vector<float>> c{{1, 0, 0}, {0, 1, 0}};
  const auto k1 = select_pseudolabeled(a, c, rows(vs)).kept();
  const auto k2 = select_pseudolabeled(a, c, rows(scaled)).kept();
  ASSERT_EQ(k1.size(), k2.size());
  for (std::size_t i = 0; i < k1.size(); ++i) EXPECT_EQ(k1[i].id, k2[i].id);
}

TEST(SelectPseudolabeled, RejectsDegenerateCentroid) {
  EXPECT_THROW(select_pseudolabeled(single_cluster(2, 2), {{0.0f, 0.0f}}, rows({{1, 0}, {0, 1}})), DegenerateCentroid);
  EXPECT_FALSE(pseudolabels_csv(select_pseudolabeled(single_cluster(2, 2), {{1.0f, 0.0f}}, rows({{1, 0}, {0, 1}}))).empty());
}

TEST(ExpandLabelSpace, GrowsAndPreservesRows) {
  TrainConfig cfg;
  const Network net = make_network({"a", "b", "c", "d"}, 3, cfg);
  const LabelSpace labels = known_label_space({"a", "b", "c", "d"});
  const std::vector<ClusterProfile> profiles{profile(0, "x", {1, 0, 0}), profile(1, "y", {0, 1, 0}),
                                             profile(2, "z", {0, 0, 1})};
  const Expansion ex = expand_label_space(labels, net, 1, profiles, 5);
  ASSERT_EQ(ex.labels.size(), 7u);
  ASSERT_EQ(ex.network.classes(), 7u);
  for (std::size_t i = 0; i < net.head.weight.size(); ++i) EXPECT_EQ(ex.network.head.weight[i], net.head.weight[i]);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ex.network.head.bias[i], net.head.bias[i]);
    EXPECT_EQ(ex.network.class_order()[i], net.class_order()[i]);
  }
  EXPECT_EQ(ex.labels.classes[4].id, "stage1_cluster0");
  EXPECT_EQ(ex.labels.classes[6].keywords[0].token, "z");
}

TEST(ExpandLabelSpace, IdentifiersUniqueAcrossStages) {
  TrainConfig cfg;
  const Network net = make_network({"a", "b"}, 2, cfg);
  const auto first = expand_label_space(known_label_space({"a", "b"}), net, 1,
                                        {profile(0, "x", {1, 0}), profile(1, "y", {0, 1})}, 1);
  const auto second = expand_label_space(first.labels, first.network, 2,
                                         {profile(0, "u", {1, 0}), profile(1, "v", {0, 1})}, 2);
  const auto ids = second.labels.ids();
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
  EXPECT_EQ(second.network.class_order(), ids);
  const auto back = LabelSpace::from_json(second.labels.to_json());
  EXPECT_EQ(back.ids(), ids);
  EXPECT_EQ(back.classes[5].stage, 2);
}

TEST(Contrastive, UniformSimilaritiesGiveLogK) {
  // Embedding orthogonal to every centroid: all cosines 0.
  const std::vector<std::vector<float>> C{{0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  const std::vector<std::vector<double>> E{{2.0, 0, 0, 0}, {-0.5, 0, 0, 0}};
  const std::vector<std::size_t> y{0, 2};
  EXPECT_NEAR(contrastive_loss_and_grad(E, y, C, 0.07).loss, std::log(3.0), 1e-12);
}

TEST(Contrastive, ClosedFormTwoCentroids) {
  const std::vector<std::vector<float>> C{{1, 0}, {0, 1}};
  const std::vector<std::vector<double>> E{{1.0, 0.0}};
  const std::vector<std::size_t> y{0};
  const double loss = contrastive_loss_and_grad(E, y, C, 0.07).loss;
  EXPECT_NEAR(loss, 6.24874755712038e-7, 1e-9 * 6.24874755712038e-7 + 1e-18);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  const std::size_t d = 5, k = 3;
  std::vector<std::vector<float>> C(k, std::vector<float>(d));
  for (auto& c : C) {
    for (auto& v : c) v = static_cast<float>(rng.normal());
  }
  std::vector<std::vector<double>> E(4, std::vector<double>(d));
  for (auto& e : E) {
    for (auto& v : e) v = rng.normal();
  }
  const std::vector<std::size_t> y{0, 1, 2, 1};
  const double tau = 0.5;
  const auto r = contrastive_loss_and_grad(E, y, C, tau);
  EXPECT_NEAR(r.loss, fixtures::cl_oracle(E, y, C, tau), 1e-12);
  const double eps = 1e-3;
  double worst = 0.0;
  for (std::size_t i = 0; i < E.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      auto P = E, M = E;
      P[i][c] += eps;
      M[i][c] -= eps;
      const double fd = (fixtures::cl_oracle(P, y, C, tau) - fixtures::cl_oracle(M, y, C, tau)) / (2 * eps);
      worst = std::max(worst, fixtures::relative_error(fd, r.grad[i][c]));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Contrastive, NonNegativeAndValidated) {
  Rng rng(2);
  const std::vector<std::vector<float>> C{{1, 0.2f}, {-0.3f, 1}};
  for (int t = 0; t < 20; ++t) {
    const std::vector<std::vector<double>> E{{rng.normal(), rng.normal()}};
    const std::vector<std::size_t> y{static_cast<std::size_t>(t % 2)};
    EXPECT_GE(contrastive_loss_and_grad(E, y, C, 0.07).loss, 0.0);
  }
  const std::vector<std::size_t> bad{5};
  EXPECT_THROW(contrastive_loss_and_grad({{1.0, 0.0}}, bad, C, 0.07), std::out_of_range);
  const std::vector<std::size_t> y0{0};
  EXPECT_THROW(contrastive_loss_and_grad({{0.0, 0.0}}, y0, C, 0.07), std::invalid_argument);
  EXPECT_THROW(contrastive_loss_and_grad({{1.0, 0.0}}, y0, C, 0.0), std::invalid_argument);
}

TEST(Contrastive, TotalGradientIsAdditive) {
  const auto blobs = fixtures::make_blobs(2, 6, 4, 1.0, 0.3, 9);
  TrainConfig cfg;
  Network net = make_network({"a", "b"}, 4, cfg);
  net.add_identity_projection();
  const std::vector<std::vector<float>> C{{1, 0, 0, 0}, {0, 1, 0, 0}};
  std::vector<std::size_t> rows_idx;
  for (std::size_t r = 0; r < blobs.X.rows(); ++r) rows_idx.push_back(r);
  TrainOptions plain;
  TrainOptions with_aux;
  with_aux.aux_weight = 0.3;
  with_aux.aux = [&](std::span<const std::size_t> rows, const std::vector<std::vector<double>>& reps,
                     std::vector<std::vector<double>>& grad) {
    std::vector<std::size_t> y;
    for (auto r : rows) y.push_back(static_cast<std::size_t>(blobs.labels[r]));
    auto cl = contrastive_loss_and_grad(reps, y, C, 0.07);
    grad = cl.grad;
    return cl.loss;
  };
  TrainOptions aux_only = with_aux;
  const auto g_ce = network_loss_and_grad(net, blobs.X, rows_idx, blobs.labels, plain);
  const auto g_all = network_loss_and_grad(net, blobs.X, rows_idx, blobs.labels, with_aux);
  EXPECT_NEAR(g_all.loss, g_ce.loss + 0.3 * g_all.aux_loss, 1e-12);
  EXPECT_NEAR(g_all.ce_loss, g_ce.ce_loss, 0.0);
  // Head gradients do not see the representation loss; the projection does.
  const std::size_t head_w = g_all.tensors.size() - 2;
  for (std::size_t i = 0; i < g_all.tensors[head_w].size(); ++i) {
    EXPECT_NEAR(g_all.tensors[head_w][i], g_ce.tensors[head_w][i], 1e-12);
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < g_all.tensors[0].size(); ++i) diff += std::abs(g_all.tensors[0][i] - g_ce.tensors[0][i]);
  EXPECT_GT(diff, 0.0);
}

namespace {

struct RetrainFixture {
  fixtures::Blobs known = fixtures::make_blobs(2, 300, 6, 1.0, 0.1, 1);
  EmbeddingMatrix pseudo;
  std::vector<int> pseudo_labels;
  std::vector<std::size_t> pseudo_centroid;
  std::vector<std::vector<float>> centroids{{0, 0, 1, 0, 0, 0}, {0, 0, 0, 1, 0, 0}};

  RetrainFixture() {
    auto all = fixtures::make_blobs(4, 60, 6, 1.0, 0.1, 2);
    pseudo = EmbeddingMatrix(0, 6);
    for (std::size_t r = 0; r < all.X.rows(); ++r) {
      if (all.labels[r] < 2) continue;
      pseudo.append(all.X.ids()[r], all.X.row(r));
      pseudo_labels.push_back(all.labels[r]);
      pseudo_centroid.push_back(static_cast<std::size_t>(all.labels[r] - 2));
    }
  }

  RetrainData data() const {
    RetrainData d;
    d.known = &known.X;
    d.known_labels = known.labels;
    d.pseudo = &pseudo;
    d.pseudo_labels = pseudo_labels;
    d.pseudo_centroid = pseudo_centroid;
    d.centroids = &centroids;
    return d;
  }

  Network network(const TrainConfig& cfg) const {
    Network net = make_network({"a", "b"}, 6, cfg);
    train(net, known.X, known.labels, cfg);
    net.expand({"c", "d"}, 3);
    return net;
  }
};

}  // namespace

TEST(Retrain, V2WithZeroLambdaEqualsV1) {
  RetrainFixture f;
  TrainConfig cfg;
  cfg.seed = 6;
  Network v1 = f.network(cfg);
  Network v2 = v1;
  retrain(v1, f.data(), Method::v1, cfg, {0.3, 0.07});
  retrain(v2, f.data(), Method::v2, cfg, {0.0, 0.07});
  EXPECT_EQ(v1, v2);
  Network v2_on = f.network(cfg);
  retrain(v2_on, f.data(), Method::v2, cfg, {0.3, 0.07});
  EXPECT_NE(v1, v2_on);
}

TEST(Retrain, LearnsPseudoClassesWithoutForgetting) {
  RetrainFixture f;
  TrainConfig cfg;
  cfg.seed = 2;
  for (Method m : {Method::v1, Method::v2}) {
    Network net = f.network(cfg);
    retrain(net, f.data(), m, cfg, {});
    EXPECT_GE(accuracy(net, f.pseudo, f.pseudo_labels), 0.95) << to_string(m);
    EXPECT_GE(accuracy(net, f.known.X, f.known.labels), 0.95) << to_string(m);
    ASSERT_TRUE(net.projection.has_value());
  }
}

TEST(Retrain, ErrorCases) {
  RetrainFixture f;
  TrainConfig cfg;
  Network net = f.network(cfg);
  EXPECT_THROW(retrain(net, f.data(), Method::baseline, cfg, {}), std::invalid_argument);
  RetrainData empty = f.data();
  const EmbeddingMatrix none(0, 6);
  empty.pseudo = &none;
  empty.pseudo_labels = {};
  EXPECT_THROW(retrain(net, empty, Method::v1, cfg, {}), DiscoveryFailure);
}
