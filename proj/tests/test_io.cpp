#include <sstream>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/io.hpp"
#include "nbe/model_gh.hpp"

using namespace nbe;

namespace {

IncompleteField random_field(std::size_t a, std::size_t b, Rng& rng) {
  IncompleteField f;
  f.values = Tensor({a, b});
  f.observed.assign(a * b, 1);
  for (std::size_t i = 0; i < a * b; ++i) {
    f.values[i] = (uniform01(rng) - 0.5) * std::pow(10.0, 6 * uniform01(rng) - 3);
    if (uniform01(rng) < 0.3) {
      f.observed[i] = 0;
      f.values[i] = 0.0;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("grid csv round trip is exact") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const IncompleteField f = random_field(1 + rng() % 9, 1 + rng() % 9, rng);
    std::stringstream ss;
    write_grid_csv(ss, f);
    const IncompleteField g = read_grid_csv(ss);
    CHECK(g.values.shape() == f.values.shape());
    CHECK(g == f);
    CHECK(g.observed == f.observed);
  }
}

TEST_CASE("row csv round trip is exact") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const IncompleteField f = random_field(1 + rng() % 20, 1 + rng() % 4, rng);
    std::stringstream ss;
    write_rows_csv(ss, f);
    const IncompleteField g = read_rows_csv(ss);
    CHECK(g == f);
    CHECK(g.observed == f.observed);
  }
}

TEST_CASE("grid csv details") {
  std::stringstream ss("\nrow,col,value,observed\n1,0,2.5,1\n0,0,NA,0\n0,1,7,0\n1,1,-1,1\n");
  const IncompleteField f = read_grid_csv(ss);
  CHECK(f.values.shape() == Shape{2, 2});
  CHECK(f.observed == std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(f.values[2] == 2.5);
  CHECK(f.values[3] == -1.0);
  CHECK(f.values[1] == f.fill);

  auto err = [](const std::string& text) {
    std::stringstream in(text);
    try {
      read_grid_csv(in);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err("r,c,v,o\n").find("expected header") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,1\n").find("line 2: expected 4 columns") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,x,1\n").find("value must be") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,NA,1\n").find("observed cell has value NA") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,1,2\n").find("observed must be 0 or 1") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,1,1\n0,0,1,1\n").find("duplicate") != std::string::npos);
  CHECK(err("row,col,value,observed\n0,0,1,1\n1,1,1,1\n").find("incomplete table") != std::string::npos);
  CHECK(err("row,col,value,observed\n").find("no data rows") != std::string::npos);
  CHECK(err("row,col,value,observed\n-1,0,1,1\n").find("row must be") != std::string::npos);
}

TEST_CASE("field files check the model shape") {
  GHModel m(GHModelSpec::preset(2, 5));
  Rng rng(5);
  const std::string path = "io_test_rows.csv";
  IncompleteField f = random_field(5, 2, rng);
  write_field_file(m, f, path);
  CHECK(read_field_file(m, path) == f);
  GHModel other(GHModelSpec::preset(3, 5));
  CHECK_THROWS_AS(read_field_file(other, path), Error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_field_file(m, "does/not/exist.csv"), Error);
}
