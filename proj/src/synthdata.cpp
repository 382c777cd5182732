#include "tepo/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tepo/rng.hpp"

namespace tepo {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (height < kMinGridSide || width < kMinGridSide)
    throw std::invalid_argument("synth grid must be at least 8x8");
  if (blobs_min < 1 || blobs_max < blobs_min)
    throw std::invalid_argument("synth blob count range must satisfy 1 <= min <= max");
  if (!(blob_scale_min > 0.0 && blob_scale_max >= blob_scale_min && blob_scale_max <= 1.0))
    throw std::invalid_argument("synth blob scale range must satisfy 0 < min <= max <= 1");
  if (min_foreground < 1 ||
      min_foreground > static_cast<std::size_t>(height) * static_cast<std::size_t>(width) / 4)
    throw std::invalid_argument("synth min_foreground must be in [1, H*W/4]");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("synth noise_std must be >= 0");
}

std::string case_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%05zu", index);
  return buf;
}

std::uint8_t quantize_intensity(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

struct Blob {
  double r, c;      // center
  double sr, sc;    // axis scales
  double cos_t, sin_t;
};

// Union of thresholded anisotropic Gaussians, with a low-frequency wobble so
// the outlines are not perfect ellipses.
BinaryMask draw_truth(const SynthConfig& cfg, std::uint64_t key) {
  Rng rng(key);
  const int h = cfg.height;
  const int w = cfg.width;
  const double side = std::min(h, w);
  const int count = cfg.blobs_min + static_cast<int>(rng.below(cfg.blobs_max - cfg.blobs_min + 1));
  std::vector<Blob> blobs;
  for (int k = 0; k < count; ++k) {
    const double theta = rng.uniform(0.0, 3.141592653589793);
    blobs.push_back(Blob{rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w,
                         rng.uniform(cfg.blob_scale_min, cfg.blob_scale_max) * side,
                         rng.uniform(cfg.blob_scale_min, cfg.blob_scale_max) * side,
                         std::cos(theta), std::sin(theta)});
  }
  const std::uint64_t wobble_key = rng.next();
  const double cell = std::max(4.0, side / 4.0);
  auto wobble = [&](int r, int c) {
    // bilinear value noise on a coarse lattice, roughly in [-1,1]
    const int i = static_cast<int>(r / cell), j = static_cast<int>(c / cell);
    const double fy = r / cell - i, fx = c / cell - j;
    auto v = [&](int a, int b) {
      return 2.0 * counter_uniform(wobble_key, (static_cast<std::uint64_t>(a) << 32) |
                                                   static_cast<std::uint32_t>(b)) -
             1.0;
    };
    return (1 - fy) * ((1 - fx) * v(i, j) + fx * v(i, j + 1)) +
           fy * ((1 - fx) * v(i + 1, j) + fx * v(i + 1, j + 1));
  };
  BinaryMask truth(h, w, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double best = 0.0;
      for (const auto& b : blobs) {
        const double dr = r - b.r, dc = c - b.c;
        const double u = (b.cos_t * dr + b.sin_t * dc) / b.sr;
        const double v = (-b.sin_t * dr + b.cos_t * dc) / b.sc;
        best = std::max(best, std::exp(-0.5 * (u * u + v * v)));
      }
      truth(r, c) = best * (1.0 + 0.25 * wobble(r, c)) > 0.5 ? 1 : 0;
    }
  return truth;
}

}  // namespace

Case generate_case(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::uint64_t case_key = hash_combine(cfg.seed, index);
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    const std::uint64_t key = hash_combine(case_key, static_cast<std::uint64_t>(attempt));
    BinaryMask truth = draw_truth(cfg, key);
    if (count_foreground(truth) < cfg.min_foreground) continue;

    Image image(cfg.height, cfg.width, 0.0);
    const std::uint64_t noise_key = mix64(key ^ 0x5EEDF00Dull);
    for (int r = 0; r < cfg.height; ++r)
      for (int c = 0; c < cfg.width; ++c) {
        const std::uint64_t idx = static_cast<std::uint64_t>(r) * cfg.width + c;
        const double v = (truth(r, c) ? 0.7 : 0.3) + cfg.noise_std * counter_normal(noise_key, idx);
        image(r, c) = quantize_intensity(v) / 255.0;
      }
    return Case{case_id_for(index), std::move(image), std::move(truth), mix64(case_key)};
  }
  throw GenerationError("could not generate case " + std::to_string(index) + " with >= " +
                        std::to_string(cfg.min_foreground) + " foreground pixels after " +
                        std::to_string(kMaxGenerationAttempts) + " attempts");
}

std::vector<Case> generate_cases(const SynthConfig& cfg, std::size_t count,
                                 std::size_t first_index) {
  std::vector<Case> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_case(cfg, first_index + i));
  return out;
}

Split split_of(const std::string& id) {
  Fnv1a64 h;
  h.update(id);
  const auto bucket = mix64(h.digest()) % 100;
  if (bucket < 80) return Split::Train;
  if (bucket < 90) return Split::Val;
  return Split::Test;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<Case> filter_split(const std::vector<Case>& cases, Split s) {
  std::vector<Case> out;
  for (const auto& c : cases)
    if (split_of(c.id) == s) out.push_back(c);
  return out;
}

void write_pgm(const fs::path& path, int h, int w, const std::vector<std::uint8_t>& px) {
  if (px.size() != static_cast<std::size_t>(h) * w)
    throw DatasetError("pgm pixel count mismatch for " + path.string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw DatasetError("write failed for " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int pgm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pgm_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit))
    throw DatasetError("malformed pgm header in " + path.string());
  return std::stoi(tok);
}

}  // namespace

PgmImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  if (pgm_token(in) != "P5") throw DatasetError("not a binary P5 pgm: " + path.string());
  PgmImage img;
  img.width = pgm_int(in, path);
  img.height = pgm_int(in, path);
  const int maxval = pgm_int(in, path);
  if (maxval != 255)
    throw DatasetError("unsupported pgm maxval " + std::to_string(maxval) + " in " + path.string() +
                       " (expected 255)");
  if (img.width < 1 || img.height < 1) throw DatasetError("empty pgm: " + path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DatasetError("truncated pgm: " + path.string());
  return img;
}

namespace {

json synth_to_json(const SynthConfig& s) {
  return json{{"height", s.height},       {"width", s.width},
              {"blobs_min", s.blobs_min}, {"blobs_max", s.blobs_max},
              {"blob_scale_min", s.blob_scale_min}, {"blob_scale_max", s.blob_scale_max},
              {"min_foreground", s.min_foreground}, {"noise_std", s.noise_std},
              {"seed", s.seed}};
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<Case>& cases,
                   const std::optional<SynthConfig>& generator) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DatasetError("cannot create dataset directory " + dir.string());
  json entries = json::array();
  for (const auto& c : cases) {
    validate_case(c);
    const int h = c.image.height(), w = c.image.width();
    std::vector<std::uint8_t> img(c.image.size()), msk(c.truth.size());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = quantize_intensity(c.image.data()[i]);
    for (std::size_t i = 0; i < msk.size(); ++i) msk[i] = c.truth.data()[i] ? 255 : 0;
    const std::string img_name = c.id + "_img.pgm";
    const std::string msk_name = c.id + "_msk.pgm";
    write_pgm(dir / img_name, h, w, img);
    write_pgm(dir / msk_name, h, w, msk);
    entries.push_back(json{{"id", c.id},
                           {"height", h},
                           {"width", w},
                           {"seed", c.seed},
                           {"image", img_name},
                           {"mask", msk_name},
                           {"split", split_name(split_of(c.id))}});
  }
  json manifest{{"format", "tepo-dataset"},
                {"version", 1},
                {"generator", generator ? synth_to_json(*generator) : json(nullptr)},
                {"cases", entries}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

std::vector<Case> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir.string());
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError("corrupt manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "tepo-dataset" || manifest.value("version", 0) != 1)
    throw DatasetError("manifest.json is not a version 1 tepo dataset");
  std::vector<Case> cases;
  try {
    for (const auto& e : manifest.at("cases")) {
      const std::string id = e.at("id").get<std::string>();
      const int h = e.at("height").get<int>();
      const int w = e.at("width").get<int>();
      const fs::path img_path = dir / e.value("image", id + "_img.pgm");
      const fs::path msk_path = dir / e.value("mask", id + "_msk.pgm");
      if (!fs::exists(img_path) || !fs::exists(msk_path))
        throw DatasetError("case '" + id + "': file listed in manifest is missing (" +
                           (!fs::exists(img_path) ? img_path : msk_path).string() + ")");
      const PgmImage img = read_pgm(img_path);
      const PgmImage msk = read_pgm(msk_path);
      if (img.height != h || img.width != w || msk.height != h || msk.width != w)
        throw DatasetError("case '" + id + "': file shape disagrees with manifest");
      Case c;
      c.id = id;
      c.seed = e.at("seed").get<std::uint64_t>();
      c.image = Image(h, w, 0.0);
      c.truth = BinaryMask(h, w, 0);
      for (std::size_t i = 0; i < img.pixels.size(); ++i) c.image.data()[i] = img.pixels[i] / 255.0;
      for (std::size_t i = 0; i < msk.pixels.size(); ++i) {
        const auto v = msk.pixels[i];
        if (v != 0 && v != 255)
          throw DatasetError("case '" + id + "': mask values must be 0 or 255");
        c.truth.data()[i] = v ? 1 : 0;
      }
      try {
        validate_case(c);
      } catch (const std::exception& ex) {
        throw DatasetError(ex.what());
      }
      cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest entry: " + std::string(e.what()));
  }
  return cases;
}

}  // namespace tepo
