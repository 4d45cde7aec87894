#include "maskcl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "maskcl/error.hpp"
#include "maskcl/hash.hpp"
#include "maskcl/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskcl {

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::query:
      return "query";
    case Split::gallery:
      return "gallery";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "gallery") return Split::gallery;
  throw SchemaError("unknown split '" + name + "'");
}

void validate(const SyntheticConfig& c) {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(field, "must be >= 1, got " + std::to_string(v));
  };
  positive(c.n_persons, "n_persons");
  if (c.n_eval_persons < 0) throw ConfigError("n_eval_persons", "must be >= 0");
  positive(c.outfits_per_person, "outfits_per_person");
  positive(c.images_per_outfit, "images_per_outfit");
  positive(c.n_cameras, "n_cameras");
  if (c.height < 16) throw ConfigError("image_size", "height must be >= 16");
  if (c.width < 16) throw ConfigError("image_size", "width must be >= 16");
  if (!(c.shape_noise >= 0)) throw ConfigError("shape_noise", "must be >= 0");
  if (!(c.color_noise >= 0)) throw ConfigError("color_noise", "must be >= 0");
  if (!(c.camera_tint_strength >= 0)) throw ConfigError("camera_tint_strength", "must be >= 0");
}

std::vector<const Sample*> DatasetManifest::split(Split which) const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples)
    if (s.split == which) out.push_back(&s);
  std::sort(out.begin(), out.end(), [](const Sample* a, const Sample* b) { return a->sample_id < b->sample_id; });
  return out;
}

namespace {

using Rgb = std::array<double, 3>;

// Silhouette geometry, in fractions of image width (x) and height (y).
struct BodyShape {
  double top;
  double head_r;
  double torso_w;
  double taper;
  double torso_h;
  double leg_len;
  double leg_w;
  double leg_gap;
  double arm_w;
  double arm_len;
  double arm_gap;
};

struct Outfit {
  Rgb top;
  Rgb bottom;
  Rgb stripe;
  int stripe_period;  // 0 = plain
  bool short_sleeves;
  bool shorts;
};

struct Camera {
  Rgb tint;
  Rgb background;
};

struct Person {
  BodyShape shape;
  Rgb skin;
  Rgb hair;
};

class Renderer {
 public:
  explicit Renderer(const SyntheticConfig& c) : cfg_(c), rng_(c.seed) {}

  BodyShape draw_shape() {
    return {uniform(0.02, 0.10), uniform(0.12, 0.20), uniform(0.34, 0.62), uniform(0.70, 1.15),
            uniform(0.26, 0.38), uniform(0.30, 0.50), uniform(0.10, 0.20), uniform(0.00, 0.14),
            uniform(0.06, 0.12), uniform(0.22, 0.40), uniform(0.00, 0.06)};
  }

  Person draw_person() {
    Person p;
    p.shape = draw_shape();
    const double tone = uniform(0.6, 1.05);
    p.skin = {0.88 * tone, 0.68 * tone, 0.55 * tone};
    const double h = uniform(0.05, 0.35);
    p.hair = {h, 0.8 * h, 0.6 * h};
    return p;
  }

  Outfit draw_outfit() {
    Outfit o;
    o.top = color();
    o.bottom = color();
    o.stripe = color();
    o.stripe_period = bernoulli(0.5) ? 3 + static_cast<int>(uniform(0.0, 3.0)) : 0;
    o.short_sleeves = bernoulli(0.5);
    o.shorts = bernoulli(0.3);
    return o;
  }

  Camera draw_camera() {
    Camera cam;
    for (int c = 0; c < 3; ++c) cam.tint[c] = std::max(0.2, 1.0 + cfg_.camera_tint_strength * normal());
    const double base = uniform(0.42, 0.58);
    for (int c = 0; c < 3; ++c) cam.background[c] = std::clamp(base + 0.03 * normal(), 0.0, 1.0);
    return cam;
  }

  // Renders one observation into (image, mask).
  void render(const Person& person, const Outfit& outfit, const Camera& cam, ImagePlanes& image, ImagePlanes& mask) {
    const int H = cfg_.height, W = cfg_.width;
    BodyShape s = person.shape;
    for (double* v : {&s.head_r, &s.torso_w, &s.taper, &s.torso_h, &s.leg_len, &s.leg_w, &s.arm_w, &s.arm_len})
      *v *= std::max(0.5, 1.0 + cfg_.shape_noise * normal());
    s.leg_gap = std::max(0.0, s.leg_gap + 0.1 * cfg_.shape_noise * normal());
    s.arm_gap = std::max(0.0, s.arm_gap + 0.1 * cfg_.shape_noise * normal());
    const double cx = 0.5 + 0.5 * cfg_.shape_noise * normal();
    const double dy = 0.5 * cfg_.shape_noise * normal();
    const double aspect = static_cast<double>(W) / H;

    const double head_ry = s.head_r * aspect;
    const double head_cy = s.top + dy + head_ry;
    const double torso_top = head_cy + 0.9 * head_ry;
    const double torso_bottom = torso_top + s.torso_h;
    const double shoulder = 0.5 * s.torso_w;
    const double waist = 0.5 * s.torso_w * s.taper;
    const double arm_in = shoulder + s.arm_gap;
    const double arm_bottom = torso_top + 0.03 + s.arm_len;
    const double leg_bottom = std::min(torso_bottom + s.leg_len, 0.99);
    const double leg_in = 0.5 * s.leg_gap;
    const double shorts_line = torso_bottom + 0.45 * (leg_bottom - torso_bottom);

    const double bg_shift = 0.02 * normal();
    image.resize(static_cast<Eigen::Index>(H) * W, 3);
    mask.resize(static_cast<Eigen::Index>(H) * W, 1);
    for (int y = 0; y < H; ++y) {
      const double v = (y + 0.5) / H;
      for (int x = 0; x < W; ++x) {
        const double u = (x + 0.5) / W;
        const double du = u - cx;
        const double adu = std::abs(du);
        const Rgb* paint = nullptr;
        bool body = false;

        const double hx = du / s.head_r, hy = (v - head_cy) / head_ry;
        if (hx * hx + hy * hy <= 1.0) {
          body = true;
          paint = hy < -0.35 ? &person.hair : &person.skin;
        } else if (v >= torso_top && v <= torso_bottom) {
          const double frac = (v - torso_top) / (torso_bottom - torso_top);
          const double half = shoulder + frac * (waist - shoulder);
          if (adu <= half) {
            body = true;
            paint = &outfit.top;
            if (outfit.stripe_period > 0 && (y / outfit.stripe_period) % 2 == 1) paint = &outfit.stripe;
          }
        }
        if (!body && v >= torso_top + 0.03 && v <= arm_bottom && adu >= arm_in && adu <= arm_in + s.arm_w) {
          body = true;
          const double sleeve_end = torso_top + 0.03 + 0.4 * s.arm_len;
          paint = (outfit.short_sleeves && v > sleeve_end) ? &person.skin : &outfit.top;
        }
        if (!body && v > torso_bottom && v <= leg_bottom && adu >= leg_in && adu <= leg_in + s.leg_w) {
          body = true;
          paint = (outfit.shorts && v > shorts_line) ? &person.skin : &outfit.bottom;
        }

        const Eigen::Index p = static_cast<Eigen::Index>(y) * W + x;
        mask(p, 0) = body ? 1.0 : 0.0;
        const double shade = body ? 1.0 - 0.35 * std::min(1.0, (du / 0.5) * (du / 0.5)) : 1.0;
        for (int c = 0; c < 3; ++c) {
          const double base = body ? (*paint)[c] * shade : cam.background[c] + bg_shift + 0.1 * (v - 0.5);
          const double value = base * cam.tint[c] + cfg_.color_noise * normal();
          image(p, c) = std::round(std::clamp(value, 0.0, 1.0) * 255.0) / 255.0;
        }
      }
    }
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  Rgb color() { return {uniform(0.05, 0.95), uniform(0.05, 0.95), uniform(0.05, 0.95)}; }

  SyntheticConfig cfg_;
  std::mt19937_64 rng_;
};

std::string sample_stem(const Sample& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", s.sample_id);
  return to_string(s.split) + "_" + buf;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticConfig& config) {
  validate(config);
  Renderer renderer(config);
  const int n_eval_new = config.closed_set ? 0 : config.n_eval_persons;
  std::vector<Person> persons;
  std::vector<std::vector<Outfit>> outfits;
  for (int p = 0; p < config.n_persons + n_eval_new; ++p) {
    persons.push_back(renderer.draw_person());
    outfits.emplace_back();
    for (int o = 0; o < config.outfits_per_person; ++o) outfits.back().push_back(renderer.draw_outfit());
  }
  std::vector<Camera> cameras;
  for (int c = 0; c < config.n_cameras; ++c) cameras.push_back(renderer.draw_camera());

  DatasetManifest manifest;
  manifest.generator_config = config;
  manifest.seed = config.seed;
  std::map<Split, int> next_id;
  auto emit = [&](int person, int outfit, int image_index, Split split) {
    Sample s;
    s.sample_id = next_id[split]++;
    s.height = config.height;
    s.width = config.width;
    s.person_id = person;
    s.clothes_id = person * config.outfits_per_person + outfit;
    s.camera_id = image_index % config.n_cameras;
    s.split = split;
    renderer.render(persons[person], outfits[person][outfit], cameras[s.camera_id], s.image, s.mask);
    s.image_path = "images/" + sample_stem(s) + ".png";
    s.mask_path = "masks/" + sample_stem(s) + ".png";
    manifest.samples.push_back(std::move(s));
  };

  for (int p = 0; p < config.n_persons; ++p)
    for (int o = 0; o < config.outfits_per_person; ++o)
      for (int i = 0; i < config.images_per_outfit; ++i) emit(p, o, i, Split::train);

  // One query per outfit (the outfit's first image), the rest to the gallery.
  // With a single image per outfit the first outfit is the query.
  const int eval_first = config.closed_set ? 0 : config.n_persons;
  const int eval_count = config.closed_set ? std::min(config.n_eval_persons, config.n_persons) : config.n_eval_persons;
  for (int p = eval_first; p < eval_first + eval_count; ++p) {
    for (int o = 0; o < config.outfits_per_person; ++o) {
      for (int i = 0; i < config.images_per_outfit; ++i) {
        const bool query = config.images_per_outfit > 1 ? i == 0 : o == 0;
        emit(p, o, i, query ? Split::query : Split::gallery);
      }
    }
  }
  return manifest;
}

json to_json(const SyntheticConfig& c) {
  return json{{"n_persons", c.n_persons},
              {"n_eval_persons", c.n_eval_persons},
              {"closed_set", c.closed_set},
              {"outfits_per_person", c.outfits_per_person},
              {"images_per_outfit", c.images_per_outfit},
              {"n_cameras", c.n_cameras},
              {"image_size", {c.height, c.width}},
              {"shape_noise", c.shape_noise},
              {"color_noise", c.color_noise},
              {"camera_tint_strength", c.camera_tint_strength},
              {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("data", "must be an object");
  SyntheticConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "n_persons") c.n_persons = value.get<int>();
      else if (key == "n_eval_persons") c.n_eval_persons = value.get<int>();
      else if (key == "closed_set") c.closed_set = value.get<bool>();
      else if (key == "outfits_per_person") c.outfits_per_person = value.get<int>();
      else if (key == "images_per_outfit") c.images_per_outfit = value.get<int>();
      else if (key == "n_cameras") c.n_cameras = value.get<int>();
      else if (key == "image_size") {
        if (!value.is_array() || value.size() != 2) throw ConfigError(key, "expected [height, width]");
        c.height = value[0].get<int>();
        c.width = value[1].get<int>();
      } else if (key == "shape_noise") c.shape_noise = value.get<double>();
      else if (key == "color_noise") c.color_noise = value.get<double>();
      else if (key == "camera_tint_strength") c.camera_tint_strength = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("data." + key, "unknown key");
    } catch (const json::exception& e) {
      throw ConfigError("data." + key, e.what());
    }
  }
  return c;
}

void validate(const DatasetManifest& manifest) {
  std::map<int, int> clothes_owner;
  std::map<Split, std::set<int>> ids;
  std::map<Split, std::set<int>> persons;
  for (const Sample& s : manifest.samples) {
    const std::string who = to_string(s.split) + " sample_id " + std::to_string(s.sample_id);
    if (s.sample_id < 0) throw InvariantError(who + ": negative sample_id");
    if (!ids[s.split].insert(s.sample_id).second) throw InvariantError(who + ": duplicate sample_id");
    if (s.person_id < 0) throw InvariantError(who + ": negative person_id");
    if (s.clothes_id < 0) throw InvariantError(who + ": negative clothes_id");
    if (s.camera_id < kUnknownCamera) throw InvariantError(who + ": camera_id must be >= 0 (or -1 for unknown)");
    const Eigen::Index pixels = static_cast<Eigen::Index>(s.height) * s.width;
    if (s.image.rows() != pixels || s.image.cols() != 3)
      throw InvariantError(who + ": image is not " + std::to_string(s.height) + "x" + std::to_string(s.width) + "x3");
    if (s.mask.rows() != pixels || s.mask.cols() != 1)
      throw InvariantError(who + ": mask does not match the image size");
    if ((s.image.array() < 0.0).any() || (s.image.array() > 1.0).any())
      throw InvariantError(who + ": image values outside [0, 1]");
    if ((s.mask.array() < 0.0).any() || (s.mask.array() > 1.0).any())
      throw InvariantError(who + ": mask values outside [0, 1]");
    auto [it, fresh] = clothes_owner.emplace(s.clothes_id, s.person_id);
    if (!fresh && it->second != s.person_id)
      throw InvariantError(who + ": clothes_id " + std::to_string(s.clothes_id) + " appears under person_ids " +
                           std::to_string(it->second) + " and " + std::to_string(s.person_id));
    persons[s.split].insert(s.person_id);
  }
  for (const auto& [split, set] : ids) {
    if (!set.empty() && (*set.begin() != 0 || *set.rbegin() != static_cast<int>(set.size()) - 1))
      throw InvariantError(to_string(split) + " sample_ids are not contiguous from 0");
  }
}

namespace {

json sample_to_json(const Sample& s) {
  return json{{"sample_id", s.sample_id}, {"image_path", s.image_path}, {"mask_path", s.mask_path},
              {"person_id", s.person_id}, {"clothes_id", s.clothes_id},  {"camera_id", s.camera_id},
              {"split", to_string(s.split)}};
}

template <typename T>
T required(const json& record, const char* key, std::size_t index) {
  if (!record.contains(key))
    throw SchemaError("manifest record " + std::to_string(index) + " lacks key '" + key + "'");
  try {
    return record.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError("manifest record " + std::to_string(index) + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace

void save_dataset(const DatasetManifest& manifest, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (!ec) fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string() + ": " + ec.message());

  json records = json::array();
  for (const Sample& s : manifest.samples) {
    if (s.image_path.empty() || s.mask_path.empty())
      throw InvariantError(to_string(s.split) + " sample_id " + std::to_string(s.sample_id) + ": empty file path");
    write_png(root / s.image_path, s.image, s.height, s.width);
    write_png(root / s.mask_path, s.mask, s.height, s.width);
    records.push_back(sample_to_json(s));
  }
  json doc{{"format", "maskcl-dataset-v1"},
           {"seed", manifest.seed},
           {"generator_config", manifest.generator_config ? to_json(*manifest.generator_config) : json(nullptr)},
           {"samples", std::move(records)}};

  const fs::path final_path = root / "manifest.json";
  const fs::path tmp_path = root / "manifest.json.tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp_path.string());
    out << doc.dump(2) << '\n';
    if (!out.flush()) {
      fs::remove(tmp_path, ec);
      throw IoError("cannot write " + tmp_path.string());
    }
  }
  fs::rename(tmp_path, final_path, ec);
  if (ec) {
    fs::remove(tmp_path, ec);
    throw IoError("cannot move manifest into place at " + final_path.string());
  }
}

DatasetManifest load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("samples") || !doc["samples"].is_array())
    throw SchemaError("manifest " + manifest_path.string() + " lacks a 'samples' array");

  DatasetManifest manifest;
  if (doc.contains("seed")) manifest.seed = doc["seed"].get<std::uint64_t>();
  if (doc.contains("generator_config") && !doc["generator_config"].is_null())
    manifest.generator_config = synthetic_config_from_json(doc["generator_config"]);

  std::size_t index = 0;
  for (const json& record : doc["samples"]) {
    Sample s;
    s.sample_id = required<int>(record, "sample_id", index);
    s.image_path = required<std::string>(record, "image_path", index);
    s.mask_path = required<std::string>(record, "mask_path", index);
    s.person_id = required<int>(record, "person_id", index);
    s.clothes_id = required<int>(record, "clothes_id", index);
    s.camera_id = required<int>(record, "camera_id", index);
    s.split = split_from_string(required<std::string>(record, "split", index));
    const DecodedImage image = read_png(root / s.image_path, 3);
    const DecodedImage mask = read_png(root / s.mask_path, 1);
    if (image.height != mask.height || image.width != mask.width)
      throw InvariantError(to_string(s.split) + " sample_id " + std::to_string(s.sample_id) +
                           ": image and mask sizes differ");
    s.height = image.height;
    s.width = image.width;
    s.image = image.planes;
    s.mask = mask.planes;
    manifest.samples.push_back(std::move(s));
    ++index;
  }
  validate(manifest);
  return manifest;
}

std::string dataset_hash(const fs::path& root) {
  const DatasetManifest manifest = load_dataset(root);
  Sha256 sha;
  sha.update_file(root / "manifest.json");
  for (const Sample& s : manifest.samples) {
    sha.update_file(root / s.image_path);
    sha.update_file(root / s.mask_path);
  }
  return sha.hex_digest();
}

}  // namespace maskcl
