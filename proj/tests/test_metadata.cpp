#include <cmath>

#include "attmix/error.hpp"
#include "attmix/metadata.hpp"
#include "attmix/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attmix;

namespace {

FeatureSchema small_schema() {
  return {{"age", FeatureKind::kNumeric, {}},
          {"gcs", FeatureKind::kNumeric, {}},
          {"site", FeatureKind::kCategorical, {"A", "B", "C"}}};
}

MetadataRecord rec(std::vector<std::optional<double>> v) {
  MetadataRecord r;
  for (const auto& x : v) {
    r.values.push_back(x.value_or(0.0));
    r.observed.push_back(x.has_value());
  }
  return r;
}

}  // namespace

TEST_CASE("one-hot expansion") {
  const FeatureSchema s = small_schema();
  CHECK(expanded_width(s) == 5);
  CHECK(expanded_names(s) == std::vector<std::string>{"age", "gcs", "site=A", "site=B", "site=C"});
  CHECK(numeric_columns(s) == std::vector<bool>{true, true, false, false, false});

  RawRecord raw{{"age", {61.0, std::nullopt}}, {"gcs", {14.0, std::nullopt}}, {"site", {std::nullopt, "A"}}};
  MetadataRecord r = one_hot_expand(s, "P1", raw);
  CHECK(r.values == std::vector<double>{61, 14, 1, 0, 0});
  CHECK(r.complete());

  raw["site"] = RawField{};
  r = one_hot_expand(s, "P1", raw);
  CHECK(r.observed == std::vector<bool>{true, true, false, false, false});
  CHECK_FALSE(r.fully_missing);

  r = one_hot_expand(s, "P2", std::nullopt);
  CHECK(r.fully_missing);
  CHECK(std::none_of(r.observed.begin(), r.observed.end(), [](bool b) { return b; }));

  raw["site"] = RawField{std::nullopt, "Z"};
  CHECK_THROWS_AS(one_hot_expand(s, "P3", raw), SchemaError);
  RawRecord unknown{{"weight", {70.0, std::nullopt}}};
  CHECK_THROWS_AS(one_hot_expand(s, "P4", unknown), SchemaError);
}

TEST_CASE("knn imputation hand cases") {
  {
    KnnImputer imp(2);
    imp.fit({rec({1.0, 5.0}), rec({1.0, 7.0})});
    const MetadataRecord out = imp.transform(rec({1.0, std::nullopt}));
    CHECK(out.values[1] == 6.0);
    CHECK(out.complete());
  }
  {
    KnnImputer imp(1);
    imp.fit({rec({0.0, 4.0}), rec({9.0, 100.0})});
    CHECK(imp.transform(rec({0.0, std::nullopt})).values[1] == 4.0);
  }
  {
    KnnImputer imp(3);
    const MetadataRecord full = rec({1.0, 2.0});
    imp.fit({full, rec({3.0, 4.0})});
    CHECK(imp.transform(full).values == full.values);
  }
  CHECK_THROWS_AS(KnnImputer(0), ValidationError);
}

TEST_CASE("knn imputation falls back to the column mean with a warning") {
  KnnImputer imp(2);
  imp.fit({rec({std::nullopt, 2.0}), rec({std::nullopt, 4.0}), rec({5.0, std::nullopt})});
  std::vector<std::string> warnings;
  const MetadataRecord out = imp.transform(rec({1.0, std::nullopt}), &warnings);
  CHECK(out.values[1] == 3.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("knn imputation ignores fully missing records and leaves them untouched") {
  KnnImputer imp(1);
  MetadataRecord gone = rec({std::nullopt, std::nullopt});
  gone.fully_missing = true;
  imp.fit({gone, rec({0.0, 10.0})});
  CHECK(imp.transform(rec({0.0, std::nullopt})).values[1] == 10.0);
  const MetadataRecord out = imp.transform(gone);
  CHECK(out.fully_missing);
  CHECK_FALSE(out.observed[0]);
}

TEST_CASE("knn imputation matches the exhaustive oracle on random tables") {
  Rng rng(31);
  for (int table = 0; table < 30; ++table) {
    const std::size_t rows = 3 + rng.below(18);
    const std::size_t cols = 2 + rng.below(5);
    std::vector<MetadataRecord> recs;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<std::optional<double>> v;
      for (std::size_t c = 0; c < cols; ++c) {
        if (rng.bernoulli(0.25)) {
          v.push_back(std::nullopt);
        } else {
          v.push_back(static_cast<double>(rng.below(5)));
        }
      }
      recs.push_back(rec(v));
    }
    const std::size_t k = 1 + rng.below(4);
    KnnImputer imp(k);
    imp.fit(recs);
    for (const MetadataRecord& r : recs) {
      const MetadataRecord got = imp.transform(r);
      const MetadataRecord want = oracle::knn_fill(recs, r, k);
      for (std::size_t c = 0; c < cols; ++c) {
        CHECK(got.values[c] == doctest::Approx(want.values[c]).epsilon(1e-12));
        if (r.observed[c]) CHECK(got.values[c] == r.values[c]);
      }
      CHECK(got.complete());
    }
  }
}

TEST_CASE("standardizer uses training statistics and skips indicators") {
  Standardizer s;
  s.fit({rec({1.0, 1.0}), rec({3.0, 0.0})}, {true, false});
  CHECK(s.mean()[0] == 2.0);
  CHECK(s.stddev()[0] == 1.0);
  const MetadataRecord out = s.transform(rec({5.0, 1.0}));
  CHECK(out.values == std::vector<double>{3.0, 1.0});
  Standardizer flat;
  flat.fit({rec({2.0, 0.0}), rec({2.0, 0.0})}, {true, false});
  CHECK(flat.transform(rec({2.0, 0.0})).values[0] == 0.0);
}
