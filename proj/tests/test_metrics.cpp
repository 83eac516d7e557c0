#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedshot/metrics/metrics.hpp"

using namespace fedshot;

TEST_CASE("diagonal confusion matrix scores perfect F1") {
  ConfusionMatrix cm({1, 2, 3});
  cm.add(1, 1, 5);
  cm.add(2, 2, 7);
  cm.add(3, 3, 2);
  for (const auto& [label, f1] : f1_per_class(cm)) CHECK(f1 == doctest::Approx(1.0));
}

TEST_CASE("always predicting one class on balanced queries") {
  ConfusionMatrix cm({0, 1});
  cm.add(0, 0, 10);  // class 0 all predicted 0
  cm.add(1, 0, 10);  // class 1 also predicted 0
  auto f1 = f1_per_class(cm);
  CHECK(f1[0] == doctest::Approx(2.0 / 3.0));  // P=0.5, R=1
  CHECK(f1[1] == doctest::Approx(0.0));
}

TEST_CASE("empty class row yields zero F1") {
  ConfusionMatrix cm({0, 1});
  cm.add(0, 0, 4);
  auto f1 = f1_per_class(cm);
  CHECK(f1[1] == doctest::Approx(0.0));
}

TEST_CASE("f1 is invariant to label insertion order") {
  ConfusionMatrix a({0, 1, 2});
  ConfusionMatrix b({2, 1, 0});
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) {
      a.add(t, p, t * 3 + p + 1);
      b.add(t, p, t * 3 + p + 1);
    }
  CHECK(f1_per_class(a) == f1_per_class(b));
}

TEST_CASE("summary statistics") {
  auto single = summarize({0.42});
  CHECK(single.mean == doctest::Approx(0.42));
  CHECK(single.stddev == 0.0);

  auto pair = summarize({0.8, 1.0});
  CHECK(pair.mean == doctest::Approx(0.90));
  CHECK(pair.stddev == doctest::Approx(0.10));
  CHECK(format_mean_std(pair) == "0.90 ± 0.10");

  auto constant = summarize({0.7, 0.7, 0.7, 0.7});
  CHECK(constant.stddev == 0.0);

  auto spread = summarize({0.2, 0.9, 0.5});
  CHECK(spread.mean >= 0.2);
  CHECK(spread.mean <= 0.9);

  CHECK_THROWS_AS(summarize({}), EmptyInput);
}

TEST_CASE("format matches the 0.87 +- 0.02 table style") {
  SummaryStat s;
  s.mean = 0.87;
  s.stddev = 0.02;
  s.count = 200;
  CHECK(format_mean_std(s) == "0.87 ± 0.02");
}

TEST_CASE("render_table lists every label with its statistic") {
  MetricSummary ms;
  ms.setting = "2-way 2-shot";
  ms.fold_id = "fold0";
  ms.per_label.push_back({"alpha", {0.91, 0.03, 40}});
  ms.per_label.push_back({"beta", {0.88, 0.05, 40}});
  auto table = render_table(ms);
  CHECK(table.find("alpha") != std::string::npos);
  CHECK(table.find("beta") != std::string::npos);
  CHECK(table.find("0.91 ± 0.03") != std::string::npos);
  CHECK(table.find("2-way 2-shot") != std::string::npos);
}

TEST_CASE("confusion matrix rejects unknown labels") {
  ConfusionMatrix cm({0, 1});
  CHECK_THROWS_AS(cm.add(5, 0), UnknownLabel);
  CHECK_THROWS_AS(ConfusionMatrix({}), EmptyInput);
}
