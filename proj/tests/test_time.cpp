#include <catch_amalgamated.hpp>

#include "memtier/time.hpp"

using namespace memtier;
using Catch::Approx;

TEST_CASE("ISO timestamps parse to UTC instants") {
  const auto z = parse_timestamp("2024-03-05T10:20:30Z");
  CHECK(format_timestamp(z) == "2024-03-05T10:20:30Z");
  CHECK(parse_timestamp("2024-03-05 10:20:30") == z);
  CHECK(parse_timestamp("2024-03-05T12:20:30+02:00") == z);
  CHECK(parse_timestamp("2024-03-05T05:20:30-0500") == z);
  CHECK(format_timestamp(parse_timestamp("2024-03-05T10:20:30.25Z")) == "2024-03-05T10:20:30.250Z");
  CHECK(format_timestamp(parse_timestamp("2024-03-05")) == "2024-03-05T00:00:00Z");
  CHECK(format_timestamp(parse_timestamp("2024-03-05T10:20")) == "2024-03-05T10:20:00Z");
}

TEST_CASE("malformed timestamps are validation errors") {
  for (const char* bad : {"", "2024-3-05", "2024-02-30T00:00:00Z", "2024-03-05T25:00:00Z", "yesterday",
                          "2024-03-05T10:20:30Q", "2024-03-05T10:20:30."}) {
    INFO(bad);
    CHECK_THROWS_AS(parse_timestamp(bad), ValidationError);
  }
}

TEST_CASE("dataset dates accept the weekday form and ISO") {
  CHECK(format_timestamp(parse_dataset_date("2023/05/20 (Sat) 02:21")) == "2023-05-20T02:21:00Z");
  CHECK(format_timestamp(parse_dataset_date("2023/05/20")) == "2023-05-20T00:00:00Z");
  CHECK(parse_dataset_date("2023-05-20T02:21:00Z") == parse_dataset_date("2023/05/20 (Sat) 02:21"));
  CHECK_THROWS_AS(parse_dataset_date("2023/05/20 (Sat"), ValidationError);
}

TEST_CASE("day keys and ages") {
  const auto t = parse_timestamp("2024-01-01T23:59:59Z");
  CHECK(day_key(t) == "2024-01-01");
  CHECK(day_key(parse_timestamp("2024-01-02T00:30:00+01:00")) == "2024-01-01");
  CHECK(age_days(t, t + std::chrono::hours(36)) == Approx(1.5));
  CHECK(age_days(t, t - std::chrono::hours(12)) == Approx(-0.5));
}
