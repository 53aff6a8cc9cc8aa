#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "dense_reference.hpp"
#include "hgp/enrichment.hpp"
#include "hgp/error.hpp"
#include "hgp/interpret.hpp"
#include "model_fixtures.hpp"

using namespace hgp;

namespace {

SaliencyReport report_from(const std::vector<std::vector<double>>& rows) {
  SaliencyReport r;
  const std::size_t f = rows.empty() ? 0 : rows[0].size();
  r.raw = Tensor({rows.size(), f});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    r.sample_ids.push_back("s" + std::to_string(i));
    for (std::size_t j = 0; j < f; ++j) r.raw.at(i, j) = rows[i][j];
  }
  for (std::size_t j = 0; j < f; ++j) r.feature_ids.push_back("feature" + std::to_string(j));
  normalize_rows(r);
  return r;
}

std::vector<std::string> ids(std::initializer_list<int> v) {
  std::vector<std::string> out;
  for (int i : v) out.push_back("g" + std::to_string(i));
  return out;
}

std::vector<std::string> universe(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("g" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("affine score gives exactly |w|") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Tensor w({7, 1});
  for (double& v : w.values()) v = u(gen);
  const double bias = 0.37;
  const ScoreFunction score = [&](ad::Tape& t, ad::Var x) {
    return ad::reduce_sum(ad::add_bias(ad::matmul(x, t.leaf(w)), t.leaf(Tensor::vector({bias}))));
  };
  Tensor x({9, 7});
  for (double& v : x.values()) v = u(gen);
  const Tensor g = score_gradients(score, x, 3);
  for (std::size_t s = 0; s < 9; ++s) {
    for (std::size_t j = 0; j < 7; ++j) CHECK(g.at(s, j) == std::abs(w[j]));
  }
  // Scaling w scales the saliency by |alpha|.
  for (double alpha : {2.0, 0.5, -2.0}) {
    Tensor ws = w;
    for (double& v : ws.values()) v *= alpha;
    const ScoreFunction scaled = [&](ad::Tape& t, ad::Var xv) { return ad::reduce_sum(ad::matmul(xv, t.leaf(ws))); };
    const Tensor gs = score_gradients(scaled, x, 2);
    for (std::size_t k = 0; k < gs.size(); ++k) CHECK(gs[k] == doctest::Approx(std::abs(alpha) * g[k]).epsilon(1e-15));
  }
}

TEST_CASE("score_gradients is independent of the thread count") {
  std::mt19937_64 gen(2);
  const auto h = fixtures::random_hierarchy(12, 6, 2, 3);
  ArchitectureConfig cfg;
  cfg.n_levels = 2;
  cfg.conv_start_level = 0;
  cfg.hidden_units = 6;
  GnnModel model(cfg, h, 1);
  fixtures::randomize(model, gen);
  const Tensor x = fixtures::random_input(11, 12, gen);
  std::vector<std::string> sid;
  for (int i = 0; i < 11; ++i) sid.push_back("s" + std::to_string(i));
  const auto one = input_saliency(model, x, sid, 1, 1);
  const auto many = input_saliency(model, x, sid, 1, 4);
  CHECK(one.raw == many.raw);
  CHECK(one.feature_ids == h->original().node_ids());
}

TEST_CASE("input saliency matches central differences of the class score") {
  std::mt19937_64 gen(3);
  const auto h = fixtures::random_hierarchy(12, 6, 2, 4);
  for (int head = 0; head < 2; ++head) {
    ArchitectureConfig cfg;
    cfg.n_levels = 2;
    cfg.conv_start_level = 0;
    cfg.hidden_units = 6;
    if (head == 1) {
      cfg.head = HeadKind::kMulticlass;
      cfg.n_classes = 3;
    }
    GnnModel model(cfg, h, 2);
    fixtures::randomize(model, gen);
    const Tensor x = fixtures::random_input(4, 12, gen);
    const std::vector<std::string> sid{"a", "b", "c", "d"};
    for (int c = 0; c < static_cast<int>(cfg.n_classes); ++c) {
      const auto rep = input_saliency(model, x, sid, c, 2);
      for (std::size_t s = 0; s < 4; ++s) {
        Tensor row({1, 12});
        for (std::size_t j = 0; j < 12; ++j) row[j] = x.at(s, j);
        const auto res = ad::grad_check(
            [&](ad::Tape& t, ad::Var xv) {
              const auto params = model.bind(t, false);
              return class_score(model.forward(t, params, xv, {}).logits, c, cfg.head);
            },
            row);
        CHECK(res.max_rel_error <= 1e-4);
        // The analytic gradient is what input_saliency reports, up to sign.
        ad::Tape t;
        const auto params = model.bind(t, false);
        auto xv = t.leaf(row, true);
        auto score = class_score(model.forward(t, params, xv, {}).logits, c, cfg.head);
        const auto grads = t.backward(score);
        for (std::size_t j = 0; j < 12; ++j) CHECK(rep.raw.at(s, j) == std::abs(grads[xv][j]));
      }
    }
  }
}

TEST_CASE("binary class 0 saliency equals class 1 saliency") {
  std::mt19937_64 gen(4);
  const auto h = fixtures::random_hierarchy(12, 6, 2, 5);
  ArchitectureConfig cfg;
  cfg.n_levels = 2;
  cfg.conv_start_level = 1;
  cfg.hidden_units = 6;
  GnnModel model(cfg, h, 3);
  fixtures::randomize(model, gen);
  const Tensor x = fixtures::random_input(3, 12, gen);
  const std::vector<std::string> sid{"a", "b", "c"};
  CHECK(input_saliency(model, x, sid, 0).raw == input_saliency(model, x, sid, 1).raw);
  CHECK_THROWS_AS(input_saliency(model, x, sid, 2), LabelError);
}

TEST_CASE("supernode saliency") {
  std::mt19937_64 gen(5);
  const auto h = fixtures::random_hierarchy(30, 15, 3, 6);
  ArchitectureConfig cfg;
  cfg.n_levels = 3;
  cfg.conv_start_level = 1;
  cfg.hidden_units = 8;
  GnnModel model(cfg, h, 4);
  fixtures::randomize(model, gen);
  const Tensor x = fixtures::random_input(5, 30, gen);
  const std::vector<std::string> sid{"a", "b", "c", "d", "e"};
  const std::size_t nl = h->size_at(3);
  const std::size_t fl = model.embedding_channels();

  SUBCASE("shape, ids and reductions") {
    const auto mean = supernode_saliency(model, x, sid, 1, SupernodeReduction::kMean, 2);
    const auto max = supernode_saliency(model, x, sid, 1, SupernodeReduction::kMax, 2);
    CHECK(mean.raw.shape() == Shape{5, nl, fl});
    CHECK(mean.reduced.feature_ids == h->graph_at(3)->node_ids());
    CHECK(mean.raw == max.raw);
    for (std::size_t s = 0; s < 5; ++s) {
      for (std::size_t j = 0; j < nl; ++j) {
        double sum = 0.0, mx = 0.0;
        for (std::size_t f = 0; f < fl; ++f) {
          sum += mean.raw.at(s, j, f);
          mx = std::max(mx, mean.raw.at(s, j, f));
        }
        CHECK(mean.reduced.raw.at(s, j) == doctest::Approx(sum / static_cast<double>(fl)));
        CHECK(max.reduced.raw.at(s, j) == mx);
      }
    }
  }
  SUBCASE("a supernode the head ignores has zero saliency") {
    const std::size_t j = nl / 2;
    auto& w1 = model.parameter("fc1.weight");
    for (std::size_t f = 0; f < fl; ++f) {
      for (std::size_t k = 0; k < cfg.hidden_units; ++k) w1.at(j * fl + f, k) = 0.0;
    }
    const auto sal = supernode_saliency(model, x, sid, 1);
    for (std::size_t s = 0; s < 5; ++s) CHECK(sal.reduced.raw.at(s, j) == 0.0);
  }
  SUBCASE("raw values are the absolute embedding gradient") {
    const auto sal = supernode_saliency(model, x, sid, 1);
    for (std::size_t s = 0; s < 5; ++s) {
      Tensor row({1, 30});
      for (std::size_t i = 0; i < 30; ++i) row[i] = x.at(s, i);
      ad::Tape t;
      const auto params = model.bind(t, false);
      const auto out = model.forward(t, params, t.leaf(row, true), {});
      const auto grads = t.backward(class_score(out.logits, 1, cfg.head));
      const Tensor& ge = grads[out.embeddings];
      for (std::size_t j = 0; j < nl; ++j)
        for (std::size_t f = 0; f < fl; ++f) CHECK(sal.raw.at(s, j, f) == std::abs(ge.at(0, j, f)));
    }
  }
}

TEST_CASE("row normalization") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<std::vector<double>> rows(6, std::vector<double>(9));
  for (auto& r : rows)
    for (double& v : r) v = u(gen);
  rows[2] = std::vector<double>(9, 1.5);
  const auto rep = report_from(rows);
  for (std::size_t s = 0; s < 6; ++s) {
    if (s == 2) {
      CHECK(rep.zero_variance[s]);
      for (std::size_t j = 0; j < 9; ++j) CHECK(rep.normalized.at(s, j) == 0.0);
      continue;
    }
    CHECK_FALSE(rep.zero_variance[s]);
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 9; ++j) mean += rep.normalized.at(s, j);
    mean /= 9.0;
    for (std::size_t j = 0; j < 9; ++j) var += std::pow(rep.normalized.at(s, j) - mean, 2);
    var /= 9.0;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto dir = oracle::scratch_dir("interpret_csv");
  rep.write_csv(dir / "s.csv");
  std::ifstream in(dir / "s.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "sample_id,feature_id,raw,normalized");
  std::size_t n = 0, empty_norm = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.back() == ',') ++empty_norm;
  }
  CHECK(n == 54);
  CHECK(empty_norm == 9);
}

TEST_CASE("ranking") {
  SUBCASE("tie broken by id") {
    const auto rep = report_from({{1.0, 3.0}, {3.0, 1.0}});
    const auto r = rank_features(rep);
    CHECK(r[0].feature_id == "feature0");
    CHECK(r[1].feature_id == "feature1");
    CHECK(r[0].mean_saliency == 2.0);
  }
  SUBCASE("single sample is a descending sort") {
    const auto rep = report_from({{0.5, 4.0, 2.0, 1.0}});
    const auto r = rank_features(rep, std::vector<std::size_t>{0});
    std::vector<std::size_t> order;
    for (const auto& f : r) order.push_back(f.feature);
    CHECK(order == std::vector<std::size_t>{1, 2, 3, 0});
  }
  SUBCASE("group restricts the mean") {
    const auto rep = report_from({{5.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}});
    CHECK(rank_features(rep)[0].feature == 0);
    CHECK(rank_features(rep, std::vector<std::size_t>{1, 2})[0].feature == 1);
  }
  SUBCASE("ties use the id string, not the column position") {
    SaliencyReport rep = report_from({{2.0, 2.0, 2.0}});
    rep.feature_ids = {"c", "a", "b"};
    const auto r = rank_features(rep);
    CHECK(r[0].feature_id == "a");
    CHECK(r[1].feature_id == "b");
    CHECK(r[2].feature_id == "c");
  }
  SUBCASE("errors and export") {
    SaliencyReport empty;
    empty.raw = Tensor({0, 2});
    empty.feature_ids = {"a", "b"};
    CHECK_THROWS_AS(rank_features(empty), ContractError);
    const auto rep = report_from({{1.0, 3.0, 2.0}});
    const auto dir = oracle::scratch_dir("interpret_rank");
    write_ranking_tsv(rank_features(rep), dir / "r.tsv", 2);
    std::ifstream in(dir / "r.tsv");
    std::string l1, l2, l3, l4;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l1 == "rank\tfeature_id\tmean_saliency");
    CHECK(l2 == "1\tfeature1\t3");
    CHECK(l3 == "2\tfeature2\t2");
    CHECK_FALSE(std::getline(in, l4));
  }
}

TEST_CASE("hypergeometric worked example") {
  const auto u = universe(10);
  const GeneSetCollection sets{{"S", "set", ids({0, 1, 2, 3})}};
  const auto res = ora(ids({0, 1, 2, 3, 4}), sets, u);
  REQUIRE(res.size() == 1);
  CHECK(res[0].overlap == 4);
  CHECK(res[0].enrichment_ratio == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(res[0].p_value == doctest::Approx(6.0 / 252.0).epsilon(1e-12));
  CHECK(res[0].overlap_genes == ids({0, 1, 2, 3}));
}

TEST_CASE("ORA degenerate cases") {
  const auto u = universe(10);
  SUBCASE("set equals universe") {
    const GeneSetCollection sets{{"U", "all", u}};
    const auto r = ora(ids({1, 2, 3}), sets, u);
    CHECK(r[0].enrichment_ratio == 1.0);
    CHECK(r[0].p_value == 1.0);
  }
  SUBCASE("disjoint set") {
    const GeneSetCollection sets{{"D", "disjoint", ids({7, 8, 9})}};
    const auto r = ora(ids({1, 2, 3}), sets, u);
    CHECK(r[0].enrichment_ratio == 0.0);
    CHECK(r[0].p_value == 1.0);
  }
  SUBCASE("sets outside the universe are not tested") {
    const GeneSetCollection sets{{"X", "outside", {"zz1", "zz2"}}, {"S", "in", {"g1", "g2", "zz3"}}};
    const auto r = ora(ids({1, 2}), sets, u);
    REQUIRE(r.size() == 1);
    CHECK(r[0].set_id == "S");
  }
  SUBCASE("contract errors") {
    const GeneSetCollection sets{{"S", "s", ids({1})}};
    try {
      ora(std::vector<std::string>{"g1", "nope", "nada"}, sets, u);
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("nope") != std::string::npos);
      CHECK(std::string(e.what()).find("nada") != std::string::npos);
    }
    CHECK_THROWS_AS(ora(ids({1}), sets, std::vector<std::string>{}), ContractError);
  }
}

TEST_CASE("hypergeometric tail matches exhaustive enumeration for N <= 20") {
  double worst = 0.0;
  for (unsigned N = 1; N <= 20; ++N) {
    for (unsigned K = 0; K <= N; ++K) {
      const auto counts = oracle::enumerate_overlaps(N, K);
      for (unsigned n = 0; n <= N; ++n) {
        for (unsigned k = 0; k <= std::min(n, K) + 1; ++k) {
          const double expected = k > std::min(n, K) ? 0.0 : oracle::enumerated_upper_tail(counts, n, k);
          worst = std::max(worst, std::abs(hypergeometric_upper_tail(k, N, K, n) - expected));
        }
      }
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("Benjamini-Hochberg") {
  CHECK(bh_fdr(std::vector<double>{0.03}) == std::vector<double>{0.03});
  CHECK(bh_fdr(std::vector<double>{0.01, 0.04}) == std::vector<double>{0.02, 0.04});
  CHECK(bh_fdr(std::vector<double>{0.9, 0.9, 0.9}) == std::vector<double>{0.9, 0.9, 0.9});
  // Step-up by hand: sorted 0.01, 0.02, 0.04 -> 0.03, 0.03, 0.04; returned in input order.
  CHECK(bh_fdr(std::vector<double>{0.04, 0.01, 0.02}) == std::vector<double>{0.04, 0.03, 0.03});
  // Running minimum from the top: 0.5*3/2 = 0.75 is capped by 0.6. The
  // first entry is the double product 3 * 0.1, not the literal 0.3.
  CHECK(bh_fdr(std::vector<double>{0.1, 0.5, 0.6}) == std::vector<double>{3.0 * 0.1, 0.6, 0.6});
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{0.0}), ContractError);
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{1.2}), ContractError);

  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(12);
    for (double& v : p) v = u(gen);
    const auto q = bh_fdr(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(q[i] >= p[i]);
      CHECK(q[i] <= 1.0);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[i] <= p[j]) CHECK(q[i] <= q[j]);
      }
    }
  }
}

TEST_CASE("ORA results are sorted and adjusted") {
  const auto u = universe(20);
  const GeneSetCollection sets{{"B", "b", ids({0, 1, 2, 3})},
                               {"A", "a", ids({10, 11, 12})},
                               {"C", "c", ids({0, 1, 2, 3, 4, 5})}};
  const auto r = ora(ids({0, 1, 2, 3, 4, 5}), sets, u);
  REQUIRE(r.size() == 3);
  for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].fdr <= r[i].fdr);
  std::vector<double> p;
  for (const auto& x : r) p.push_back(x.p_value);
  const auto q = bh_fdr(p);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].fdr == q[i]);

  const auto dir = oracle::scratch_dir("interpret_ora");
  write_ora_tsv(r, dir / "o.tsv");
  std::ifstream in(dir / "o.tsv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("set_id\tdescription\tenrichment_ratio\tp_value\tfdr", 0) == 0);
}

TEST_CASE("GMT loading") {
  const auto dir = oracle::scratch_dir("interpret_gmt");
  oracle::write_file(dir / "s.gmt", "S1\tfirst\tg1\tg2\tg2\nS2\tsecond\tg3\n");
  const auto sets = load_gmt(dir / "s.gmt");
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].genes == std::vector<std::string>{"g1", "g2"});
  CHECK(sets[1].description == "second");
  oracle::write_file(dir / "dup.gmt", "S1\ta\tg1\nS1\tb\tg2\n");
  CHECK_THROWS_AS(load_gmt(dir / "dup.gmt"), ParseError);
  oracle::write_file(dir / "short.gmt", "S1\n");
  CHECK_THROWS_AS(load_gmt(dir / "short.gmt"), ParseError);
}

TEST_CASE("clusters handed to ORA are the expanded supernodes") {
  const auto h = fixtures::random_hierarchy(40, 20, 3, 8);
  std::vector<std::string> all = h->original().node_ids();
  std::set<std::string> covered;
  for (std::size_t j = 0; j < h->size_at(3); ++j) {
    const auto cluster = h->expand_cluster(2, j);
    // Every final supernode expands to original genes that ORA accepts.
    const GeneSetCollection sets{{"S", "s", cluster}};
    const auto r = ora(cluster, sets, all);
    REQUIRE(r.size() == 1);
    CHECK(r[0].overlap == cluster.size());
    CHECK(r[0].cluster_size == cluster.size());
    covered.insert(cluster.begin(), cluster.end());
  }
  CHECK(covered.size() == all.size());
}
