#include "aflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "aflow/errors.hpp"
#include "aflow/image.hpp"

namespace aflow {
namespace {

using Json = nlohmann::ordered_json;

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns CCW hull.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  const std::size_t n = pts.size();
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) {
      --k;
    }
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) {
      --k;
    }
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_convex(const std::vector<Vec2>& hull, double x, double y) {
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % n];
    if ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) < 0.0) {
      return false;
    }
  }
  return true;
}

struct Sinusoid {
  double amp, fx, fy, phase;
};

// Canonical sprite: smooth color field stamped onto a convex polygon,
// white background, binary mask.
struct Sprite {
  Tensor image;  // (3,S,S) doubles in [0,1]
  Tensor mask;   // (1,S,S) exactly 0/1
};

Sprite make_sprite(std::uint64_t dataset_seed, int id, int size) {
  Rng rng(Rng::derive_seed(dataset_seed, 1000 + static_cast<std::uint64_t>(id)));
  const double s = static_cast<double>(size);
  const double cx = (s - 1.0) / 2.0;
  const double cy = cx;

  std::vector<Vec2> hull;
  do {
    const int k = 4 + static_cast<int>(rng.uniform_int(4));  // 4..7 raw vertices
    std::vector<Vec2> pts;
    for (int i = 0; i < k; ++i) {
      const double angle = 2.0 * std::numbers::pi * (i + 0.3 + 0.4 * rng.uniform()) / k;
      // Largest vertex radius keeps the rotated silhouette plus a bilinear
      // margin inside the canvas for every azimuth.
      const double radius = s * (0.26 + 0.16 * rng.uniform());
      pts.push_back({cx + radius * std::cos(angle), cy + radius * std::sin(angle)});
    }
    hull = convex_hull(std::move(pts));
  } while (hull.size() < 3);

  std::vector<std::vector<Sinusoid>> waves(3);
  std::vector<double> base(3);
  for (int c = 0; c < 3; ++c) {
    base[static_cast<std::size_t>(c)] = rng.uniform(0.35, 0.65);
    for (int i = 0; i < 4; ++i) {
      Sinusoid w;
      w.amp = rng.uniform(0.08, 0.22);
      w.fx = rng.uniform(-2.5, 2.5) / s;
      w.fy = rng.uniform(-2.5, 2.5) / s;
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      waves[static_cast<std::size_t>(c)].push_back(w);
    }
  }

  Sprite sp;
  sp.image = Tensor({3, size, size});
  sp.mask = Tensor({1, size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool fg = inside_convex(hull, x, y);
      sp.mask.at3(0, y, x) = fg ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) {
        if (!fg) {
          sp.image.at3(c, y, x) = 1.0;  // white background
          continue;
        }
        double v = base[static_cast<std::size_t>(c)];
        for (const Sinusoid& w : waves[static_cast<std::size_t>(c)]) {
          v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
        }
        sp.image.at3(c, y, x) = std::clamp(v, 0.05, 0.95);
      }
    }
  }
  return sp;
}

// Samples `src` (C,S,S) at rotated coordinates: out(p) = src(R(-theta)(p-c)+c).
// `fill` supplies values outside the canvas.
Tensor rotate_image(const Tensor& src, double theta_deg, double fill) {
  const int ch = src.dim(0);
  const int size = src.dim(1);
  const double c = (size - 1.0) / 2.0;
  const double rad = -theta_deg * kDegToRad;
  const double cos_t = std::cos(rad);
  const double sin_t = std::sin(rad);
  Tensor out({ch, size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - c;
      const double dy = y - c;
      const double sx = cos_t * dx - sin_t * dy + c;
      const double sy = sin_t * dx + cos_t * dy + c;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx1 = sx - x0;
      const double wx0 = 1.0 - wx1;
      const double wy1 = sy - y0;
      const double wy0 = 1.0 - wy1;
      for (int cc = 0; cc < ch; ++cc) {
        auto tap = [&](int yy, int xx) {
          return (xx >= 0 && xx < size && yy >= 0 && yy < size) ? src.at3(cc, yy, xx) : fill;
        };
        double acc = 0.0;
        if (wx0 != 0.0 && wy0 != 0.0) {
          acc += tap(y0, x0) * wx0 * wy0;
        }
        if (wx1 != 0.0 && wy0 != 0.0) {
          acc += tap(y0, x0 + 1) * wx1 * wy0;
        }
        if (wx0 != 0.0 && wy1 != 0.0) {
          acc += tap(y0 + 1, x0) * wx0 * wy1;
        }
        if (wx1 != 0.0 && wy1 != 0.0) {
          acc += tap(y0 + 1, x0 + 1) * wx1 * wy1;
        }
        out.at3(cc, y, x) = acc;
      }
    }
  }
  return out;
}

int split_offset(std::uint64_t seed) { return static_cast<int>(Rng::derive_seed(seed, 0x5b1f7) % 5); }

}  // namespace

int wrap_delta_deg(int delta) {
  int d = delta % 360;
  if (d <= -180) {
    d += 360;
  }
  if (d > 180) {
    d -= 360;
  }
  return d;
}

std::vector<int> DatasetManifest::instance_ids(Split split) const {
  std::vector<int> ids;
  for (int id = 0; id < instance_count; ++id) {
    if ((split == Split::kTest) == is_test_instance(id)) {
      ids.push_back(id);
    }
  }
  return ids;
}

bool DatasetManifest::is_test_instance(int id) const { return (id + split_offset(seed)) % 5 == 0; }

std::filesystem::path DatasetManifest::view_path(int id, int bin) const {
  std::ostringstream os;
  os << "inst_" << std::setw(4) << std::setfill('0') << id << "/view_" << std::setw(2) << std::setfill('0') << bin << ".png";
  return root / os.str();
}

std::filesystem::path DatasetManifest::mask_path(int id, int bin) const {
  std::ostringstream os;
  os << "inst_" << std::setw(4) << std::setfill('0') << id << "/mask_" << std::setw(2) << std::setfill('0') << bin << ".png";
  return root / os.str();
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  Json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["instance_count"] = m.instance_count;
  j["image_size"] = m.image_size;
  j["train_fraction"] = m.train_fraction;
  j["azimuth_step_deg"] = kAzimuthStepDeg;
  j["azimuth_bins"] = m.azimuth_bins;
  j["delta_step_deg"] = kDeltaStepDeg;
  j["delta_min_deg"] = kDeltaMinDeg;
  j["delta_count"] = kDeltaCount;
  std::ofstream os(dir / "manifest", std::ios::binary);
  if (!os) {
    throw IoError("cannot write manifest in " + dir.string());
  }
  os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest", std::ios::binary);
  if (!is) {
    throw IoError("cannot open manifest in " + dir.string());
  }
  std::stringstream buf;
  buf << is.rdbuf();
  Json j = Json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) {
    throw DataError("manifest is not valid JSON: " + dir.string());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) {
      throw DataError("unsupported manifest version");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.instance_count = j.at("instance_count").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.train_fraction = j.at("train_fraction").get<double>();
    m.azimuth_bins = j.at("azimuth_bins").get<std::vector<int>>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  m.root = dir;
  return m;
}

DatasetManifest generate_dataset(std::uint64_t seed, int instances, int size, const std::filesystem::path& out_dir) {
  if (instances < 5) {
    throw UsageError("generate_dataset: need at least 5 instances");
  }
  if (size != 32 && size != 64) {
    throw UsageError("generate_dataset: size must be 32 or 64");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("generate_dataset: cannot create " + out_dir.string());
  }

  DatasetManifest m;
  m.seed = seed;
  m.instance_count = instances;
  m.image_size = size;
  for (int b = 0; b < kAzimuthBins; ++b) {
    m.azimuth_bins.push_back(b);
  }
  m.root = out_dir;

  for (int id = 0; id < instances; ++id) {
    const Sprite sprite = make_sprite(seed, id, size);
    const std::filesystem::path inst_dir = m.view_path(id, 0).parent_path();
    std::filesystem::create_directories(inst_dir, ec);
    if (ec) {
      throw IoError("generate_dataset: cannot create " + inst_dir.string());
    }
    for (int bin = 0; bin < kAzimuthBins; ++bin) {
      const double theta = bin * kAzimuthStepDeg;
      const Tensor view = rotate_image(sprite.image, theta, 1.0);
      Tensor mask = rotate_image(sprite.mask, theta, 0.0);
      for (std::int64_t i = 0; i < mask.size(); ++i) {
        mask[i] = mask[i] >= 0.5 ? 1.0 : 0.0;
      }
      write_png(m.view_path(id, bin), tensor_to_image(view));
      write_png(m.mask_path(id, bin), tensor_to_image(mask));
    }
  }
  write_manifest(m, out_dir);
  return m;
}

FlowField analytic_flow(double theta_source_deg, double theta_target_deg, int h, int w) {
  const double c_x = (w - 1.0) / 2.0;
  const double c_y = (h - 1.0) / 2.0;
  const double rad = (theta_source_deg - theta_target_deg) * kDegToRad;
  const double cos_t = std::cos(rad);
  const double sin_t = std::sin(rad);
  FlowField flow = FlowField::zero(1, h, w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double dx = u - c_x;
      const double dy = v - c_y;
      const double sx = cos_t * dx - sin_t * dy + c_x;
      const double sy = sin_t * dx + cos_t * dy + c_y;
      flow.offsets.at(0, 0, v, u) = sx - u;
      flow.offsets.at(0, 1, v, u) = sy - v;
    }
  }
  return flow;
}

ViewTransform encode_transform(int delta_deg) {
  if (delta_deg < kDeltaMinDeg || delta_deg > -kDeltaMinDeg || (delta_deg - kDeltaMinDeg) % kDeltaStepDeg != 0) {
    throw DataError("encode_transform: delta " + std::to_string(delta_deg) + " not in the 19-delta vocabulary");
  }
  ViewTransform t;
  t.vec.assign(kDeltaCount, 0.0);
  t.vec[static_cast<std::size_t>((delta_deg - kDeltaMinDeg) / kDeltaStepDeg)] = 1.0;
  return t;
}

int decode_transform(const ViewTransform& t) {
  if (static_cast<int>(t.vec.size()) != kDeltaCount) {
    throw DataError("decode_transform: expected a 19-D vector");
  }
  int hot = -1;
  for (int i = 0; i < kDeltaCount; ++i) {
    if (t.vec[static_cast<std::size_t>(i)] == 1.0) {
      if (hot >= 0) {
        throw DataError("decode_transform: vector is not one-hot");
      }
      hot = i;
    } else if (t.vec[static_cast<std::size_t>(i)] != 0.0) {
      throw DataError("decode_transform: vector is not one-hot");
    }
  }
  if (hot < 0) {
    throw DataError("decode_transform: vector is not one-hot");
  }
  return kDeltaMinDeg + hot * kDeltaStepDeg;
}

DatasetReader::DatasetReader(DatasetManifest manifest) : manifest_(std::move(manifest)) {
  if (manifest_.azimuth_bins.empty()) {
    throw DataError("DatasetReader: manifest lists no views");
  }
}

const DatasetReader::CachedView& DatasetReader::cached(int instance, int bin) {
  const auto key = std::make_pair(instance, bin);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    CachedView cv;
    ImageU8 view = read_png(manifest_.view_path(instance, bin));
    ImageU8 mask = read_png(manifest_.mask_path(instance, bin));
    if (view.channels != 3 || mask.channels != 1 || view.width != manifest_.image_size || mask.width != manifest_.image_size) {
      throw DataError("DatasetReader: image dimensions do not match manifest");
    }
    cv.view = std::move(view.pixels);
    cv.mask = std::move(mask.pixels);
    it = cache_.emplace(key, std::move(cv)).first;
  }
  return it->second;
}

Tensor DatasetReader::view(int instance, int bin) {
  const CachedView& cv = cached(instance, bin);
  const int s = manifest_.image_size;
  Tensor t({3, s, s});
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at3(c, y, x) = cv.view[static_cast<std::size_t>((y * s + x) * 3 + c)] / 255.0;
      }
    }
  }
  return t;
}

Tensor DatasetReader::mask(int instance, int bin) {
  const CachedView& cv = cached(instance, bin);
  const int s = manifest_.image_size;
  Tensor t({1, s, s});
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      t.at3(0, y, x) = cv.mask[static_cast<std::size_t>(y * s + x)] >= 128 ? 1.0 : 0.0;
    }
  }
  return t;
}

TrainingTuple DatasetReader::sample(Split split, Rng& rng, int views) {
  const std::vector<int> ids = manifest_.instance_ids(split);
  if (ids.empty()) {
    throw DataError("sample: split is empty");
  }
  const std::vector<int>& bins = manifest_.azimuth_bins;

  TrainingTuple tuple;
  tuple.instance = ids[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(ids.size())))];
  tuple.target_bin = bins[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(bins.size())))];

  // Deltas whose implied source bin exists in the manifest.
  std::vector<int> valid;
  for (int i = 0; i < kDeltaCount; ++i) {
    const int delta = kDeltaMinDeg + i * kDeltaStepDeg;
    const int src_deg = ((tuple.target_bin * kAzimuthStepDeg - delta) % 360 + 360) % 360;
    const int src_bin = src_deg / kAzimuthStepDeg;
    if (std::find(bins.begin(), bins.end(), src_bin) != bins.end()) {
      valid.push_back(delta);
    }
  }
  if (valid.empty()) {
    throw DataError("sample: no valid transformation for target view");
  }

  tuple.target = view(tuple.instance, tuple.target_bin);
  tuple.target_mask = mask(tuple.instance, tuple.target_bin);
  for (int j = 0; j < views; ++j) {
    const int delta = valid[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(valid.size())))];
    const int src_deg = ((tuple.target_bin * kAzimuthStepDeg - delta) % 360 + 360) % 360;
    const int src_bin = src_deg / kAzimuthStepDeg;
    tuple.deltas.push_back(delta);
    tuple.source_bins.push_back(src_bin);
    tuple.sources.push_back(view(tuple.instance, src_bin));
    tuple.transforms.push_back(encode_transform(delta));
  }
  return tuple;
}

TrainingTuple DatasetReader::sample_single(Split split, Rng& rng) { return sample(split, rng, 1); }

TrainingTuple DatasetReader::sample_multi(Split split, Rng& rng, int views) {
  if (views < 1) {
    throw UsageError("sample_multi: need at least one view");
  }
  return sample(split, rng, views);
}

}  // namespace aflow
