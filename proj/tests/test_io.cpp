#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "karst/error.hpp"
#include "karst/io.hpp"

using namespace karst;
using namespace karst::io;
using namespace std::chrono;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = (std::filesystem::temp_directory_path() / ("karst_io_" + name)).string();
  std::ofstream(path) << content;
  return path;
}

std::string error_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("dates round trip and reject nonsense") {
  const auto d = parse_date("2008-02-29");
  CHECK(d == sys_days{year{2008} / February / 29});
  CHECK(format_date(d) == "2008-02-29");
  for (int k = 0; k < 800; k += 37) {
    const model::Date x = sys_days{year{2006} / January / 1} + days{k};
    CHECK(parse_date(format_date(x)) == x);
  }
  CHECK_THROWS_AS(parse_date("2007-02-29"), Error);
  CHECK_THROWS_AS(parse_date("2007/01/01"), Error);
  CHECK_THROWS_AS(parse_date("yesterday"), Error);
}

TEST_CASE("doubles round trip bit for bit") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 20 - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(42) == "42");
}

TEST_CASE("csv parsing skips comments and reports line numbers") {
  const auto path = temp_file("table.csv", "# header comment\na,b\n1,2\n\n3,x\n");
  const auto t = read_csv(path);
  CHECK(t.rows.size() == 2);
  CHECK(t.number(0, 1) == 2.0);
  const auto msg = error_of([&] { t.numbers("b"); });
  CHECK(msg.find(":5") != std::string::npos);
  CHECK(error_of([&] { t.column("zzz"); }).find("'zzz'") != std::string::npos);

  const auto ragged = temp_file("ragged.csv", "a,b\n1,2\n3\n");
  CHECK(error_of([&] { read_csv(ragged); }).find(":3") != std::string::npos);
  CHECK_THROWS_AS(read_csv("/nonexistent/karst.csv"), Error);
}

TEST_CASE("forcing files") {
  const auto good = temp_file("forcing.csv", "date,precip_mm,temp_c\n2006-01-01,1.5,-2\n2006-01-02,0,3.25\n");
  const auto f = read_forcing(good);
  REQUIRE(f.size() == 2);
  CHECK(f.temp_c[1] == 3.25);
  const auto out = (std::filesystem::temp_directory_path() / "karst_io_forcing_out.csv").string();
  write_forcing(out, f);
  const auto back = read_forcing(out);
  CHECK(back.dates == f.dates);
  CHECK(back.precip_mm == f.precip_mm);
  CHECK(back.temp_c == f.temp_c);

  const auto no_temp = temp_file("forcing_no_temp.csv", "date,precip_mm\n2006-01-01,1\n");
  const auto msg = error_of([&] { read_forcing(no_temp); });
  CHECK(msg.find("temp_c") != std::string::npos);

  const auto gap = temp_file("forcing_gap.csv", "date,precip_mm,temp_c\n2006-01-01,1,0\n2006-01-03,1,0\n");
  CHECK_THROWS_AS(read_forcing(gap), Error);
  const auto negative = temp_file("forcing_neg.csv", "date,precip_mm,temp_c\n2006-01-01,-1,0\n");
  CHECK_THROWS_AS(read_forcing(negative), Error);
}

TEST_CASE("observations") {
  const auto ok = temp_file("obs.csv", "date,q_obs_m3d\n2006-01-01,100\n2006-01-02,120.5\n");
  const auto o = read_observations(ok);
  CHECK(o.q_m3d == std::vector<double>{100, 120.5});
  const auto alt = temp_file("obs_alt.csv", "date,q_total_m3d\n2006-01-01,7\n");
  CHECK(read_observations(alt).q_m3d[0] == 7);
  const auto neg = temp_file("obs_neg.csv", "date,q_obs_m3d\n2006-01-01,1\n2006-01-02,-3\n");
  CHECK(error_of([&] { read_observations(neg); }).find(":3") != std::string::npos);
}

TEST_CASE("key-value files and model config") {
  const auto path = temp_file("model.cfg",
                              "# catchment\narea_1 = 1e5\narea_2: 2e5\narea_3 = 3e5\narea_total = 1e6\n"
                              "l_hyd_1 = 100\nl_hyd_2 = 200\nl_hyd_3 = 300\nk_b = 0.02\n"
                              "c_m = 2.5\npet_method = thornthwaite\nwarmup_days = 30\n");
  const auto kv = read_key_values(path);
  CHECK(kv.at("area_2") == "2e5");
  const auto cfg = read_model_config(path);
  CHECK(cfg.catchment.area_m2[1] == 2e5);
  CHECK(cfg.catchment.k_b == 0.02);
  CHECK(cfg.forcing.c_m == 2.5);
  CHECK(cfg.forcing.pet_method == model::PetMethod::Thornthwaite);
  CHECK(cfg.forcing.warmup_days == 30);

  const auto out = (std::filesystem::temp_directory_path() / "karst_io_model_out.cfg").string();
  write_model_config(out, cfg);
  const auto back = read_model_config(out);
  CHECK(back.catchment.area_m2 == cfg.catchment.area_m2);
  CHECK(back.catchment.l_hyd_m == cfg.catchment.l_hyd_m);
  CHECK(back.forcing.warmup_days == 30);

  auto missing = kv;
  missing.erase("k_b");
  try {
    parse_model_config(missing);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("k_b") != std::string::npos);
  }
  auto bad_method = kv;
  bad_method["pet_method"] = "penman";
  CHECK_THROWS_AS(parse_model_config(bad_method), Error);

  const auto garbage = temp_file("garbage.cfg", "just words\n");
  CHECK_THROWS_AS(read_key_values(garbage), Error);
}

TEST_CASE("column matrices and checksums") {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 0.1, 1e-300, -7.25;
  const auto path = (std::filesystem::temp_directory_path() / "karst_io_cols.csv").string();
  write_columns(path, {"a", "b"}, m);
  const auto t = read_csv(path);
  CHECK(read_columns(t, {"a", "b"}) == m);
  CHECK(read_columns(t, {"b"}).row(0) == m.row(1));
  CHECK_THROWS_AS(write_columns(path, {"a"}, m), Error);

  const auto h1 = file_checksum(path);
  CHECK(h1.size() == 16);
  write_columns(path, {"a", "b"}, m);
  CHECK(file_checksum(path) == h1);
  // FNV-1a of the empty input is the offset basis
  CHECK(file_checksum(temp_file("empty.bin", "")) == "cbf29ce484222325");
}
