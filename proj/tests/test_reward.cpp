#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "oracles.hpp"
#include "restorl/dataset.hpp"
#include "restorl/external_scorer.hpp"
#include "restorl/metrics.hpp"
#include "restorl/reward.hpp"
#include "restorl/scorer.hpp"

using namespace restorl;
namespace fs = std::filesystem;

namespace {

Grid scalar_grid(double v) {
  Grid g(1, 1, 1);
  g[0] = v;
  return g;
}

fs::path scorer_dataset_dir() {
  static fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "restorl_reward_ds";
    fs::remove_all(d);
    DatasetConfig config;
    config.count = 48;
    config.size = 16;
    config.severity_min = 0.15;
    config.severity_max = 1.0;
    make_dataset(d, config, 2024);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("reconstruction reward: identity, scalar case, symmetry") {
  const Grid g = scalar_grid(0.0);
  CHECK(reconstruction_reward(g, g) == 0.0);
  CHECK(reconstruction_reward(scalar_grid(0.5), scalar_grid(0.0)) == doctest::Approx(-0.5));
  Rng rng(3);
  const Grid a = rng.normal_grid(1, 3, 3);
  const Grid b = rng.normal_grid(1, 3, 3);
  CHECK(reconstruction_reward(a, b) == reconstruction_reward(b, a));
  CHECK(reconstruction_reward(a, b) <= 0.0);
  CHECK_THROWS_AS(reconstruction_reward(a, Grid(1, 2, 2)), std::invalid_argument);
}

TEST_CASE("track statistics: first observation, constant stream, decayed mean") {
  RewardStats stats;
  update_stats(stats, "img", {1.5});
  CHECK(stats.track.at("img").mean == 1.5);
  CHECK(stats.track.at("img").var == 0.0);
  CHECK(stats.track.at("img").count == 1.0);

  RewardStats constant;
  update_stats(constant, "c", {2.0, 2.0, 2.0, 2.0});
  CHECK(constant.track.at("c").mean == 2.0);
  CHECK(constant.track.at("c").var == 0.0);

  RewardStats half;
  half.decay = 0.5;
  update_stats(half, "h", {1.0, 3.0});
  CHECK(half.track.at("h").mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(half.track.at("h").mean ==
        doctest::Approx(oracles::exp_average_ref({1.0, 3.0}, 0.5)).epsilon(1e-12));

  RewardStats bad;
  bad.decay = 1.5;
  CHECK_THROWS_AS(update_stats(bad, "x", {1.0}), std::invalid_argument);
}

TEST_CASE("advantage: zero numerator, batch-only normalization, cold start") {
  RewardStats stats;
  stats.batch = {3.0, 3.0, 3.0};
  for (double r : stats.batch) CHECK(advantage(r, stats, "unseen") == 0.0);

  RewardStats abc;
  abc.eps_var = 1e-12;
  abc.batch = {1.0, 2.0, 3.0};
  const auto [mean, var] = oracles::mean_var_ref(abc.batch);
  CHECK(mean == 2.0);
  CHECK(var == doctest::Approx(2.0 / 3.0));
  CHECK(advantage(1.0, abc, "cold") == doctest::Approx(-1.224744871391589).epsilon(1e-5));
  CHECK(advantage(2.0, abc, "cold") == doctest::Approx(0.0));
  CHECK(advantage(3.0, abc, "cold") == doctest::Approx(1.224744871391589).epsilon(1e-5));

  RewardStats empty;
  CHECK_THROWS_AS(advantage(1.0, empty, "x"), std::invalid_argument);
}

TEST_CASE("advantage is invariant to shifting every reward by a constant") {
  RewardStats stats;
  stats.mix = 0.5;
  update_stats_batch(stats, {{"a", {1.0, 2.0}}, {"b", {4.0}}});

  RewardStats shifted;
  shifted.mix = 0.5;
  const double c = 17.5;
  update_stats_batch(shifted, {{"a", {1.0 + c, 2.0 + c}}, {"b", {4.0 + c}}});

  for (double r : {1.0, 2.0, 4.0}) {
    CHECK(advantage(r, stats, "a") == doctest::Approx(advantage(r + c, shifted, "a")).epsilon(1e-9));
    CHECK(advantage(r, stats, "b") == doctest::Approx(advantage(r + c, shifted, "b")).epsilon(1e-9));
  }
}

TEST_CASE("mix=1 with a populated track reproduces track-only normalization") {
  RewardStats stats;
  stats.mix = 1.0;
  stats.decay = 0.5;
  update_stats_batch(stats, {{"a", {1.0, 3.0}}});
  // Track after [1,3] at decay 0.5: mean 2, var 0.5*(0 + 0.5*4) = 1.
  const TrackStats& t = stats.track.at("a");
  CHECK(t.mean == doctest::Approx(2.0));
  CHECK(t.var == doctest::Approx(1.0));
  const double expected = (3.0 - 2.0) / std::sqrt(1.0 + stats.eps_var);
  CHECK(advantage(3.0, stats, "a") == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("batch advantages with empty tracks have mean zero and variance at most one") {
  RewardStats stats;
  Rng rng(8);
  std::vector<double> rewards;
  for (int i = 0; i < 40; ++i) rewards.push_back(rng.normal() * 3.0 + 1.0);
  stats.batch = rewards;
  std::vector<double> advs;
  for (double r : rewards) advs.push_back(advantage(r, stats, "none"));
  const auto [mean, var] = oracles::mean_var_ref(advs);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var <= 1.0);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));  // eps_var is tiny
}

TEST_CASE("proxy scorer training meets the separation and ranking contracts") {
  const DatasetHandle ds = DatasetHandle::load(scorer_dataset_dir());
  ScorerTrainConfig config;
  config.epochs = 250;
  Rng rng(5);
  const ScorerParams scorer = train_quality_scorer(ds, config, rng);
  CHECK(scorer.holdout_rank_corr >= 0.8);

  // Determinism: retraining with the same seed gives identical parameters.
  Rng rng2(5);
  const ScorerParams again = train_quality_scorer(ds, config, rng2);
  CHECK(scorer.w1 == again.w1);
  CHECK(scorer.w2 == again.w2);
  CHECK(scorer.b2 == again.b2);

  // Label rule endpoints.
  CHECK(severity_label(0.0) == 5.0);
  CHECK(severity_label(1.0) == 1.0);

  // Held-out separation: ground truths outscore their severity-0.8
  // degradations, on average and for most pairs.
  const auto val = ds.indices(Split::val);
  double gt_mean = 0.0, deg_mean = 0.0;
  int wins = 0;
  for (std::size_t i : val) {
    const RestorationPair p = ds.pair(i);
    Rng deg_rng(Rng::derive(99, i));
    const Grid heavy = degrade(p.gt, p.task, 0.8, deg_rng);
    const double s_gt = iqa_reward(scorer, p.gt);
    const double s_deg = iqa_reward(scorer, heavy);
    gt_mean += s_gt;
    deg_mean += s_deg;
    if (s_gt > s_deg) ++wins;
  }
  gt_mean /= static_cast<double>(val.size());
  deg_mean /= static_cast<double>(val.size());
  CHECK(gt_mean > deg_mean);
  CHECK(wins >= static_cast<int>(0.9 * val.size()));

  // Scores stay in [1,5] for random inputs and repeat deterministically.
  Rng noise_rng(77);
  for (int i = 0; i < 10000; ++i) {
    Grid img(1, 8, 8);
    for (double& v : img.values()) v = noise_rng.uniform();
    const double s = iqa_reward(scorer, img);
    CHECK(s >= 1.0);
    CHECK(s <= 5.0);
  }
  const RestorationPair p0 = ds.pair(0);
  CHECK(iqa_reward(scorer, p0.gt) == iqa_reward(scorer, p0.gt));

  Grid bad(1, 2, 2, std::nan(""));
  CHECK_THROWS_AS(iqa_reward(scorer, bad), std::invalid_argument);

  // Round trip through the scorer file preserves behavior.
  const auto path = fs::temp_directory_path() / "restorl_scorer_test.bin";
  save_scorer(path, scorer);
  const ScorerParams loaded = load_scorer(path);
  CHECK(iqa_reward(loaded, p0.gt) == iqa_reward(scorer, p0.gt));
  fs::remove(path);
}

TEST_CASE("scorer training requires severity diversity") {
  const auto dir = fs::temp_directory_path() / "restorl_flat_sev";
  fs::remove_all(dir);
  DatasetConfig config;
  config.count = 12;
  config.size = 16;
  config.severity_min = 0.5;
  config.severity_max = 0.5;
  make_dataset(dir, config, 1);
  const DatasetHandle ds = DatasetHandle::load(dir);
  ScorerTrainConfig tc;
  Rng rng(1);
  CHECK_THROWS_WITH_AS(train_quality_scorer(ds, tc, rng),
                       doctest::Contains("insufficient severity diversity"),
                       std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("subprocess scorer: loopback, validation, and timeout errors") {
  Grid img(1, 4, 4, 0.5);

  ExternalScorerConfig ok;
  ok.command = "while read line; do echo 3.0; done";
  {
    ExternalScorer scorer(ok);
    CHECK(scorer.score(img) == doctest::Approx(3.0));
    CHECK(scorer.score(img) == doctest::Approx(3.0));  // stream stays up
  }

  ExternalScorerConfig out_of_range;
  out_of_range.command = "while read line; do echo 7.0; done";
  {
    ExternalScorer scorer(out_of_range);
    CHECK_THROWS_WITH_AS(scorer.score(img), doctest::Contains("out-of-range"),
                         RewardServiceError);
  }

  ExternalScorerConfig malformed;
  malformed.command = "while read line; do echo not-a-number; done";
  {
    ExternalScorer scorer(malformed);
    CHECK_THROWS_AS(scorer.score(img), RewardServiceError);
  }

  ExternalScorerConfig silent;
  silent.command = "sleep 30";
  silent.timeout_ms = 200;
  {
    ExternalScorer scorer(silent);
    CHECK_THROWS_WITH_AS(scorer.score(img), doctest::Contains("timed out"), RewardServiceError);
  }

  ExternalScorerConfig dead;
  dead.command = "true";  // exits immediately, closing its stdout
  {
    ExternalScorer scorer(dead);
    CHECK_THROWS_AS(scorer.score(img), RewardServiceError);
  }
}

TEST_CASE("http scorer: loopback server and unreachable endpoint") {
  httplib::Server server;
  std::string last_body;
  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = req.body;
    res.set_content("2.5", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  Grid img(1, 2, 2, 0.25);
  ExternalScorerConfig http;
  http.mode = "http";
  http.url = "http://127.0.0.1:" + std::to_string(port) + "/score";
  {
    ExternalScorer scorer(http);
    CHECK(scorer.score(img) == doctest::Approx(2.5));
  }
  // The request carried the documented shape header and base64 payload.
  CHECK(last_body.find("\"shape\":[1,2,2]") != std::string::npos);
  CHECK(last_body.find("\"dtype\":\"f64le\"") != std::string::npos);
  CHECK(last_body.find("\"data\":\"") != std::string::npos);

  server.stop();
  server_thread.join();

  ExternalScorerConfig unreachable;
  unreachable.mode = "http";
  unreachable.url = "http://127.0.0.1:1/score";
  unreachable.timeout_ms = 300;
  {
    ExternalScorer scorer(unreachable);
    CHECK_THROWS_AS(scorer.score(img), RewardServiceError);
  }
}
