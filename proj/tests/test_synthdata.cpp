#include <filesystem>
#include <fstream>
#include <map>

#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "tepo/synthdata.hpp"

using namespace tepo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("tepo_synth_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generation is deterministic in seed and index") {
  SynthConfig cfg;
  cfg.seed = 17;
  const Case a = generate_case(cfg, 5), b = generate_case(cfg, 5);
  CHECK(a.id == b.id);
  CHECK(a.truth == b.truth);
  CHECK(a.image == b.image);
  CHECK(a.seed == b.seed);
  CHECK(generate_case(cfg, 6).truth != a.truth);
  cfg.seed = 18;
  CHECK(generate_case(cfg, 5).truth != a.truth);
  CHECK(generate_cases(cfg, 3, 4)[1].truth == generate_case(cfg, 5).truth);
}

TEST_CASE("500 cases meet the foreground filter and fraction range") {
  SynthConfig cfg;
  const auto cases = generate_cases(cfg, 500);
  for (const auto& c : cases) {
    const std::size_t fg = count_foreground(c.truth);
    CHECK(fg >= cfg.min_foreground);
    const double frac = static_cast<double>(fg) / (64.0 * 64.0);
    CHECK(frac > 0.01);
    CHECK(frac < 0.5);
    for (double v : c.image.values()) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      // already on the 8-bit lattice
      REQUIRE(quantize_intensity(v) / 255.0 == v);
    }
  }
}

TEST_CASE("image intensity follows the truth") {
  const auto cases = generate_cases(SynthConfig{}, 20);
  for (const auto& c : cases) {
    double fg = 0, bg = 0;
    std::size_t nf = 0, nb = 0;
    for (int r = 0; r < 64; ++r)
      for (int col = 0; col < 64; ++col) {
        if (c.truth(r, col)) {
          fg += c.image(r, col);
          ++nf;
        } else {
          bg += c.image(r, col);
          ++nb;
        }
      }
    CHECK(fg / nf == doctest::Approx(0.7).epsilon(0.03));
    CHECK(bg / nb == doctest::Approx(0.3).epsilon(0.03));
  }
}

TEST_CASE("infeasible configs fail") {
  SynthConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.min_foreground = 65;  // more than a quarter of the grid
  CHECK_THROWS(cfg.validate());
  cfg.min_foreground = 64;
  cfg.height = cfg.width = 64;
  cfg.blob_scale_min = cfg.blob_scale_max = 0.01;
  CHECK_THROWS_AS(generate_case(cfg, 0), GenerationError);
}

TEST_CASE("splits are stable and roughly 80/10/10") {
  std::map<Split, int> n;
  for (std::size_t i = 0; i < 5000; ++i) ++n[split_of(case_id_for(i))];
  CHECK(std::abs(n[Split::Train] / 5000.0 - 0.8) < 0.03);
  CHECK(std::abs(n[Split::Val] / 5000.0 - 0.1) < 0.02);
  CHECK(std::abs(n[Split::Test] / 5000.0 - 0.1) < 0.02);
  CHECK(split_of("abc") == split_of("abc"));
  CHECK(parse_split(split_name(Split::Val)) == Split::Val);
  CHECK_THROWS(parse_split("holdout"));
}

TEST_CASE("dataset write and read round trip") {
  TempDir tmp;
  SynthConfig cfg;
  cfg.seed = 3;
  const auto cases = generate_cases(cfg, 12);
  write_dataset(tmp.path, cases, cfg);
  const auto back = read_dataset(tmp.path);
  REQUIRE(back.size() == cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CHECK(back[i].id == cases[i].id);
    CHECK(back[i].seed == cases[i].seed);
    CHECK(back[i].truth == cases[i].truth);
    for (std::size_t k = 0; k < cases[i].image.values().size(); ++k)
      REQUIRE(std::abs(back[i].image.values()[k] - cases[i].image.values()[k]) <= 1.0 / 255.0);
  }
  // mask files hold only 0 and 255
  const auto pgm = read_pgm(tmp.path / (cases[0].id + "_msk.pgm"));
  for (auto v : pgm.pixels) CHECK((v == 0 || v == 255));
  // byte-stable across writes
  TempDir again;
  write_dataset(again.path, cases, cfg);
  for (const auto& e : fs::directory_iterator(tmp.path))
    CHECK(slurp(e.path()) == slurp(again.path / e.path().filename()));
  const auto manifest = nlohmann::json::parse(slurp(tmp.path / "manifest.json"));
  CHECK(manifest.contains("generator"));
}

TEST_CASE("missing files and foreign PGMs are rejected") {
  TempDir tmp;
  const auto cases = generate_cases(SynthConfig{}, 3);
  write_dataset(tmp.path, cases);
  fs::remove(tmp.path / (cases[1].id + "_img.pgm"));
  try {
    read_dataset(tmp.path);
    FAIL("expected a dataset error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find(cases[1].id) != std::string::npos);
  }

  const auto foreign = tmp.path / "foreign.pgm";
  {
    std::ofstream out(foreign, std::ios::binary);
    out << "P5\n2 2\n15\n";
    out.write("\x00\x01\x02\x03", 4);
  }
  CHECK_THROWS_AS(read_pgm(foreign), DatasetError);
  {
    std::ofstream out(foreign, std::ios::binary);
    out << "P5\n2 2\n255\n";
    out.write("\x00\x01", 2);
  }
  CHECK_THROWS_AS(read_pgm(foreign), DatasetError);
  CHECK_THROWS_AS(read_dataset(tmp.path / "nope"), DatasetError);
}

TEST_CASE("non-binary mask files are rejected") {
  TempDir tmp;
  const auto cases = generate_cases(SynthConfig{}, 2);
  write_dataset(tmp.path, cases);
  auto pgm = read_pgm(tmp.path / (cases[0].id + "_msk.pgm"));
  pgm.pixels[0] = 7;
  write_pgm(tmp.path / (cases[0].id + "_msk.pgm"), pgm.height, pgm.width, pgm.pixels);
  CHECK_THROWS_AS(read_dataset(tmp.path), DatasetError);
}
