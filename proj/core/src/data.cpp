// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tinyvid/error.hpp"

namespace tinyvid {

namespace {

constexpr double kColorTable[kColors][3] = {
    {1.0, 0.2, 0.2}, {0.2, 1.0, 0.2}, {0.25, 0.35, 1.0},
    {1.0, 0.9, 0.2}, {1.0, 0.3, 1.0}, {0.2, 1.0, 1.0},
};

std::int64_t levels() { return static_cast<std::int64_t>(velocity_levels().size()); }

// Token layout.
constexpr std::int64_t kShapeBase = 1;
constexpr std::int64_t kColorBase = kShapeBase + kShapeKinds;
constexpr std::int64_t kVxBase = kColorBase + kColors;
std::int64_t vy_base() { return kVxBase + levels(); }

double signed_distance(ShapeKind kind, double px, double py, double r, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double x = c * px + s * py;
  const double y = -s * px + c * py;
  switch (kind) {
    case ShapeKind::disk: return std::hypot(px, py) - r;
    case ShapeKind::square: {
      const double qx = std::abs(x) - r, qy = std::abs(y) - r;
      const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
      return outside + std::min(std::max(qx, qy), 0.0);
    }
    case ShapeKind::diamond: return (std::abs(x) + std::abs(y) - 1.3 * r) / std::sqrt(2.0);
  }
  return 0.0;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError("bad number '" + s + "'");
  return v;
}

std::int64_t to_int(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError("bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::map<std::string, double> parse_pairs(const std::string& s) {
  std::map<std::string, double> out;
  if (s.empty()) return out;
  for (const auto& item : split(s, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw IoError("expected name=value, got '" + item + "'");
    out[item.substr(0, eq)] = to_double(item.substr(eq + 1));
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
}

}  // namespace

// ---------------------------------------------------------------------------

std::int64_t caption_vocab_size() { return vy_base() + levels(); }

TokenIds caption_tokens(const Motion& m) {
  return {kShapeBase + static_cast<std::int64_t>(m.shape), kColorBase + m.color,
          kVxBase + m.vx_level, vy_base() + m.vy_level};
}

Motion motion_from_caption(const TokenIds& caption) {
  if (caption.size() != kCaptionLength) throw ContractError("caption must have 4 tokens");
  Motion m;
  auto in = [](std::int64_t v, std::int64_t lo, std::int64_t n) { return v >= lo && v < lo + n; };
  if (!in(caption[0], kShapeBase, kShapeKinds) || !in(caption[1], kColorBase, kColors) ||
      !in(caption[2], kVxBase, levels()) || !in(caption[3], vy_base(), levels())) {
    throw ContractError("caption tokens out of range");
  }
  m.shape = static_cast<ShapeKind>(caption[0] - kShapeBase);
  m.color = static_cast<int>(caption[1] - kColorBase);
  m.vx_level = static_cast<int>(caption[2] - kVxBase);
  m.vy_level = static_cast<int>(caption[3] - vy_base());
  return m;
}

namespace {

// Start coordinate so that [x0, x0 + travel] stays within [lo, hi].
double start_in(Rng& rng, double lo, double hi, double travel) {
  const double a = lo - std::min(0.0, travel);
  const double b = hi - std::max(0.0, travel);
  if (b < a) return 0.5 * (lo + hi) - 0.5 * travel;
  return rng.uniform(a, b);
}

}  // namespace

Motion random_motion(Rng& rng, const ClipSpec& spec) {
  Motion m;
  m.shape = static_cast<ShapeKind>(rng.uniform_int(kShapeKinds));
  m.color = static_cast<int>(rng.uniform_int(kColors));
  m.vx_level = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(levels())));
  m.vy_level = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(levels())));
  m.omega = m.shape == ShapeKind::disk ? 0.0 : rng.uniform(-0.3, 0.3);
  const double span = static_cast<double>(spec.frames - 1);
  const double margin = spec.radius + 1.0;
  m.x0 = start_in(rng, margin, spec.width - margin, m.vx() * span);
  m.y0 = start_in(rng, margin, spec.height - margin, m.vy() * span);
  return m;
}

Tensor render_clip(const Motion& m, std::int64_t frames, std::int64_t height, std::int64_t width,
                   double radius) {
  if (frames < 1 || height < 1 || width < 1) throw ShapeError("clip extents must be positive");
  if (m.color < 0 || m.color >= kColors) throw ContractError("color index out of range");
  Tensor out({frames, 3, height, width});
  auto d = out.mutable_data();
  const auto plane = height * width;
  for (std::int64_t f = 0; f < frames; ++f) {
    const double cx = m.x0 + m.vx() * f;
    const double cy = m.y0 + m.vy() * f;
    const double angle = m.speed * m.omega * f;
    for (std::int64_t i = 0; i < height; ++i) {
      for (std::int64_t j = 0; j < width; ++j) {
        const double sd = signed_distance(m.shape, j + 0.5 - cx, i + 0.5 - cy, radius, angle);
        const double cover = std::clamp(0.5 - sd, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) {
          d[static_cast<std::size_t>(((f * 3 + c) * plane) + i * width + j)] =
              cover * kColorTable[m.color][c];
        }
      }
    }
  }
  return out;
}

SyntheticVideo generate_synthetic(Rng& rng, const ClipSpec& spec) {
  SyntheticVideo v;
  v.motion = spec.motion ? *spec.motion : random_motion(rng, spec);
  v.video = render_clip(v.motion, spec.frames, spec.height, spec.width, spec.radius);
  v.caption = caption_tokens(v.motion);
  return v;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& registered_filters() {
  static const std::vector<std::string> names{"aesthetic", "clarity", "motion", "text_free"};
  return names;
}

void ClipRecord::validate() const {
  if (frames < 1 || height < 1 || width < 1) {
    throw ContractError("record " + std::to_string(id) + ": non-positive extents");
  }
  const double n = std::sqrt(dot(embedding, embedding));
  if (embedding.empty() || std::abs(n - 1.0) > 1e-9) {
    throw ContractError("record " + std::to_string(id) + ": embedding is not unit length");
  }
  const auto& reg = registered_filters();
  for (const auto& [name, value] : scores) {
    if (std::find(reg.begin(), reg.end(), name) == reg.end()) {
      throw ContractError("record " + std::to_string(id) + ": unregistered score '" + name + "'");
    }
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ContractError("record " + std::to_string(id) + ": score outside [0, 1]");
    }
  }
}

std::vector<ClipRecord> generate_records(Rng& rng, const RecordSpec& spec) {
  if (spec.count < 1 || spec.embedding_dim < 1 || spec.concepts < 1) {
    throw ConfigError("record spec needs positive count, dimension and concepts");
  }
  Rng concept_rng = rng.split("concepts");
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(spec.concepts));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(spec.embedding_dim));
    for (auto& x : c) x = concept_rng.normal();
    normalize(c);
  }
  std::vector<ClipRecord> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t id = 0; id < spec.count; ++id) {
    Rng r = rng.split(static_cast<std::uint64_t>(id));
    ClipRecord rec;
    rec.id = id;
    rec.frames = spec.frame_choices[r.uniform_int(spec.frame_choices.size())];
    const auto [h, w] = spec.size_choices[r.uniform_int(spec.size_choices.size())];
    rec.height = h;
    rec.width = w;
    ClipSpec cs;
    cs.frames = rec.frames;
    cs.height = h;
    cs.width = w;
    rec.motion = random_motion(r, cs);
    for (const auto& name : registered_filters()) rec.scores[name] = r.uniform();
    if (!out.empty() && r.uniform() < spec.duplicate_rate) {
      rec.embedding = out[r.uniform_int(out.size())].embedding;
      for (auto& x : rec.embedding) x += spec.duplicate_noise * r.normal();
    } else {
      rec.embedding = centers[r.uniform_int(centers.size())];
      for (auto& x : rec.embedding) x += spec.concept_noise * r.normal();
    }
    normalize(rec.embedding);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_manifest(std::ostream& out, const std::vector<ClipRecord>& records) {
  for (const auto& r : records) {
    out << r.id << '\t' << r.frames << '\t' << r.height << '\t' << r.width << '\t';
    bool first = true;
    for (const auto& [name, v] : r.scores) {
      out << (first ? "" : ";") << name << '=' << fmt(v);
      first = false;
    }
    out << '\t';
    for (std::size_t i = 0; i < r.embedding.size(); ++i) {
      out << (i ? "," : "") << fmt(r.embedding[i]);
    }
    const auto& m = r.motion;
    out << '\t' << "shape=" << static_cast<int>(m.shape) << ";color=" << m.color
        << ";vx=" << m.vx_level << ";vy=" << m.vy_level << ";omega=" << fmt(m.omega)
        << ";x0=" << fmt(m.x0) << ";y0=" << fmt(m.y0) << ";speed=" << fmt(m.speed) << '\n';
  }
}

std::vector<ClipRecord> read_manifest(std::istream& in) {
  std::vector<ClipRecord> out;
  std::string line;
  std::int64_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() < 6) throw IoError("manifest row " + std::to_string(row) + ": too few fields");
    ClipRecord r;
    r.id = to_int(f[0]);
    r.frames = to_int(f[1]);
    r.height = to_int(f[2]);
    r.width = to_int(f[3]);
    r.scores = parse_pairs(f[4]);
    for (const auto& x : split(f[5], ',')) r.embedding.push_back(to_double(x));
    if (f.size() > 6) {
      const auto m = parse_pairs(f[6]);
      auto get = [&](const char* k, double dflt) {
        auto it = m.find(k);
        return it == m.end() ? dflt : it->second;
      };
      r.motion.shape = static_cast<ShapeKind>(static_cast<int>(get("shape", 0)));
      r.motion.color = static_cast<int>(get("color", 0));
      r.motion.vx_level = static_cast<int>(get("vx", 2));
      r.motion.vy_level = static_cast<int>(get("vy", 2));
      r.motion.omega = get("omega", 0.0);
      r.motion.x0 = get("x0", 0.0);
      r.motion.y0 = get("y0", 0.0);
      r.motion.speed = get("speed", 1.0);
    }
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<ClipRecord> dedup(std::vector<ClipRecord> records, double threshold) {
  for (const auto& r : records) r.validate();
  std::stable_sort(records.begin(), records.end(),
                   [](const ClipRecord& a, const ClipRecord& b) { return a.id < b.id; });
  std::vector<ClipRecord> kept;
  for (auto& r : records) {
    bool dup = false;
    for (const auto& s : kept) {
      if (1.0 - dot(r.embedding, s.embedding) < threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(std::move(r));
  }
  return kept;
}

KMeansResult kmeans_balance(const std::vector<ClipRecord>& records, std::int64_t k,
                            std::int64_t resample_cap, Rng& rng) {
  const auto n = static_cast<std::int64_t>(records.size());
  if (k < 1 || k > n) throw ConfigError("k-means needs 1 <= k <= record count");
  if (resample_cap < 1) throw ConfigError("resample cap must be positive");
  const auto& pts = records;
  const auto dim = pts[0].embedding.size();
  for (const auto& r : pts) {
    if (r.embedding.size() != dim) throw ContractError("embeddings differ in dimension");
  }

  // k-means++ seeding.
  Rng seed_rng = rng.split("seed");
  KMeansResult res;
  std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  res.centroids.push_back(pts[seed_rng.uniform_int(static_cast<std::uint64_t>(n))].embedding);
  while (static_cast<std::int64_t>(res.centroids.size()) < k) {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      auto& b = best[static_cast<std::size_t>(i)];
      b = std::min(b, sq_dist(pts[static_cast<std::size_t>(i)].embedding, res.centroids.back()));
      total += b;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = seed_rng.uniform() * total;
      for (pick = 0; pick + 1 < best.size(); ++pick) {
        u -= best[pick];
        if (u < 0.0 && best[pick] > 0.0) break;
      }
    } else {
      // All points coincide with chosen seeds: take unchosen indices in order.
      pick = res.centroids.size();
    }
    res.centroids.push_back(pts[pick].embedding);
  }

  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    std::vector<double> own(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < k; ++c) {
        const double d = sq_dist(pts[static_cast<std::size_t>(i)].embedding,
                                 res.centroids[static_cast<std::size_t>(c)]);
        if (d < dmin) {
          dmin = d;
          arg = c;
        }
      }
      auto& a = res.assignment[static_cast<std::size_t>(i)];
      changed = changed || a != arg;
      a = arg;
      own[static_cast<std::size_t>(i)] = dmin;
      inertia += dmin;
    }
    // Empty clusters take the point farthest from its centroid.
    std::vector<std::int64_t> count(static_cast<std::size_t>(k), 0);
    for (auto a : res.assignment) ++count[static_cast<std::size_t>(a)];
    for (std::int64_t c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t far = own.size();
      for (std::size_t i = 0; i < own.size(); ++i) {
        if (count[static_cast<std::size_t>(res.assignment[i])] < 2) continue;
        if (far == own.size() || own[i] > own[far]) far = i;
      }
      if (far == own.size()) break;
      --count[static_cast<std::size_t>(res.assignment[far])];
      res.assignment[far] = c;
      ++count[static_cast<std::size_t>(c)];
      inertia -= own[far];
      own[far] = 0.0;
      res.centroids[static_cast<std::size_t>(c)] = pts[far].embedding;
      changed = true;
    }
    res.inertia.push_back(inertia);
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;
    // Update step.
    for (std::int64_t c = 0; c < k; ++c) {
      auto& ctr = res.centroids[static_cast<std::size_t>(c)];
      std::fill(ctr.begin(), ctr.end(), 0.0);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      auto& ctr = res.centroids[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])];
      const auto& e = pts[static_cast<std::size_t>(i)].embedding;
      for (std::size_t j = 0; j < dim; ++j) ctr[j] += e[j];
    }
    for (std::int64_t c = 0; c < k; ++c) {
      for (auto& x : res.centroids[static_cast<std::size_t>(c)]) {
        x /= static_cast<double>(count[static_cast<std::size_t>(c)]);
      }
    }
  }

  // Cap every cluster.
  Rng sample_rng = rng.split("resample");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    members[static_cast<std::size_t>(res.assignment[i])].push_back(i);
  }
  std::vector<std::size_t> keep;
  for (auto& m : members) {
    // Partial Fisher-Yates: the first `cap` entries are a uniform subset.
    const auto cap = std::min<std::size_t>(m.size(), static_cast<std::size_t>(resample_cap));
    for (std::size_t i = 0; i < cap; ++i) {
      const auto j = i + sample_rng.uniform_int(m.size() - i);
      std::swap(m[i], m[j]);
    }
    keep.insert(keep.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(cap));
  }
  std::sort(keep.begin(), keep.end(),
            [&](std::size_t a, std::size_t b) { return pts[a].id < pts[b].id; });
  for (auto i : keep) res.balanced.push_back(pts[i]);
  return res;
}

void validate_stage_ladder(const std::vector<FilterStage>& stages) {
  const auto& reg = registered_filters();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (const auto& [name, v] : stages[s].thresholds) {
      if (std::find(reg.begin(), reg.end(), name) == reg.end()) {
        throw ConfigError("stage '" + stages[s].name + "': unregistered filter '" + name + "'");
      }
      if (s == 0) continue;
      auto prev = stages[s - 1].thresholds.find(name);
      const double p = prev == stages[s - 1].thresholds.end() ? 0.0 : prev->second;
      if (v < p) {
        throw ConfigError("stage '" + stages[s].name + "': threshold for '" + name +
                          "' decreases");
      }
    }
    if (s == 0) continue;
    for (const auto& [name, v] : stages[s - 1].thresholds) {
      if (!stages[s].thresholds.count(name) && v > 0.0) {
        throw ConfigError("stage '" + stages[s].name + "' drops filter '" + name + "'");
      }
    }
  }
}

std::vector<ClipRecord> apply_stage(const std::vector<ClipRecord>& records,
                                    const FilterStage& stage, RetentionReport* report) {
  const auto& reg = registered_filters();
  for (const auto& [name, v] : stage.thresholds) {
    if (std::find(reg.begin(), reg.end(), name) == reg.end()) {
      throw ConfigError("stage '" + stage.name + "': unregistered filter '" + name + "'");
    }
  }
  RetentionReport rep;
  rep.stage = stage.name;
  rep.input = static_cast<std::int64_t>(records.size());
  for (const auto& [name, v] : stage.thresholds) rep.removed[name] = 0;
  std::vector<ClipRecord> kept;
  for (const auto& r : records) {
    const std::string* failed = nullptr;
    for (const auto& [name, thr] : stage.thresholds) {
      auto it = r.scores.find(name);
      const double score = it == r.scores.end() ? 0.0 : it->second;
      if (score < thr) {
        failed = &name;
        break;
      }
    }
    if (failed) {
      ++rep.removed[*failed];
    } else {
      kept.push_back(r);
    }
  }
  rep.retained = static_cast<std::int64_t>(kept.size());
  if (report) *report = rep;
  return kept;
}

void write_retention_csv(std::ostream& out, const std::vector<RetentionReport>& reports) {
  out << "stage,filter,removed,input,retained,retention\n";
  for (const auto& r : reports) {
    for (const auto& [name, n] : r.removed) {
      out << r.stage << ',' << name << ',' << n << ',' << r.input << ',' << r.retained << ','
          << fmt(r.fraction()) << '\n';
    }
    if (r.removed.empty()) {
      out << r.stage << ",," << 0 << ',' << r.input << ',' << r.retained << ','
          << fmt(r.fraction()) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> duration_bin(std::int64_t frames,
                                        const std::vector<std::int64_t>& bins) {
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] <= frames) pick = i;
  }
  return pick;
}

std::size_t aspect_bin(double aspect, const std::vector<double>& bins) {
  if (!(aspect > 0.0)) throw ContractError("aspect ratio must be positive");
  std::size_t pick = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double d = std::abs(std::log(aspect / bins[i]));
    const bool tie = d == best;
    if (d < best || (tie && std::abs(std::log(bins[i])) < std::abs(std::log(bins[pick])))) {
      best = d;
      pick = i;
    }
  }
  return pick;
}

Bucket make_bucket(std::int64_t duration, double aspect, const BucketRule& rule) {
  if (rule.base_side < 1 || rule.align < 1 || rule.voxels_per_token < 1 || rule.token_budget < 1) {
    throw ConfigError("bucket rule values must be positive");
  }
  auto snap = [&](double v) {
    return std::max<std::int64_t>(rule.align,
                                  static_cast<std::int64_t>(std::lround(v / rule.align)) * rule.align);
  };
  Bucket b;
  b.duration = duration;
  b.aspect = aspect;
  const double side = static_cast<double>(rule.base_side);
  b.height = snap(side / std::sqrt(aspect));
  b.width = snap(side * std::sqrt(aspect));
  const auto vox = duration * b.height * b.width;
  b.tokens = (vox + rule.voxels_per_token - 1) / rule.voxels_per_token;
  b.max_batch = std::max<std::int64_t>(1, rule.token_budget / b.tokens);
  return b;
}

BucketGrid bucketize(const std::vector<ClipRecord>& records,
                     const std::vector<std::int64_t>& duration_bins,
                     const std::vector<double>& aspect_bins, const BucketRule& rule) {
  if (duration_bins.empty() || aspect_bins.empty()) {
    throw ConfigError("bucketize needs at least one bin per axis");
  }
  if (!std::is_sorted(duration_bins.begin(), duration_bins.end()) ||
      !std::is_sorted(aspect_bins.begin(), aspect_bins.end())) {
    throw ConfigError("bucket bins must be sorted ascending");
  }
  for (auto a : aspect_bins) {
    if (!(a > 0.0)) throw ConfigError("aspect bins must be positive");
  }
  BucketGrid grid;
  grid.duration_bins = duration_bins;
  grid.aspect_bins = aspect_bins;
  for (auto d : duration_bins) {
    for (auto a : aspect_bins) grid.buckets.push_back(make_bucket(d, a, rule));
  }
  std::vector<const ClipRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const ClipRecord* a, const ClipRecord* b) { return a->id < b->id; });
  for (const auto* r : order) {
    const auto d = duration_bin(r->frames, duration_bins);
    if (!d) {
      grid.rejected.push_back({r->id, "clip has " + std::to_string(r->frames) +
                                          " frames, shorter than the smallest bin " +
                                          std::to_string(duration_bins.front())});
      continue;
    }
    const auto a = aspect_bin(r->aspect(), aspect_bins);
    grid.buckets[*d * aspect_bins.size() + a].members.push_back(r->id);
  }
  return grid;
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(std::vector<Bucket> buckets, Rng rng, PrefetchOptions options)
    : buckets_(std::move(buckets)), rng_(rng), options_(options) {
  if (options_.capacity < 1) options_.capacity = 1;
  refill();
  if (options_.threaded) thread_ = std::thread([this] { worker(); });
}

BatchStream::~BatchStream() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void BatchStream::refill() {
  remaining_.clear();
  Rng shuffle = rng_.split("epoch").split(static_cast<std::uint64_t>(epoch_));
  for (const auto& b : buckets_) {
    auto m = b.members;
    for (std::size_t i = m.size(); i > 1; --i) {
      std::swap(m[i - 1], m[shuffle.uniform_int(i)]);
    }
    remaining_.push_back(std::move(m));
  }
  ++epoch_;
}

std::optional<Batch> BatchStream::produce() {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < remaining_.size(); ++i) {
    if (!remaining_[i].empty()) live.push_back(i);
  }
  if (live.empty()) {
    bool any = false;
    for (const auto& b : buckets_) any = any || !b.members.empty();
    if (!options_.repeat || !any) return std::nullopt;
    refill();
    return produce();
  }
  Batch batch;
  batch.bucket = live[rng_.uniform_int(live.size())];
  auto& rem = remaining_[batch.bucket];
  const auto take = std::min<std::size_t>(rem.size(),
                                          static_cast<std::size_t>(buckets_[batch.bucket].max_batch));
  batch.ids.assign(rem.end() - static_cast<std::ptrdiff_t>(take), rem.end());
  rem.resize(rem.size() - take);
  return batch;
}

void BatchStream::worker() {
  for (;;) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return stop_ || queue_.size() < options_.capacity; });
    if (stop_) return;
    lock.unlock();
    auto b = produce();
    lock.lock();
    const bool end = !b.has_value();
    queue_.push_back(std::move(b));
    cv_.notify_all();
    if (end) return;
  }
}

std::optional<Batch> BatchStream::next() {
  std::optional<Batch> b;
  if (!options_.threaded) {
    b = produce();
  } else {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty(); });
    b = std::move(queue_.front());
    // Keep the end marker so later calls also see end of stream.
    if (b) queue_.pop_front();
    cv_.notify_all();
  }
  if (b) ++consumed_;
  return b;
}

std::vector<Batch> prefetch_batches(const std::vector<Bucket>& buckets, Rng rng,
                                    std::int64_t count, PrefetchOptions options) {
  BatchStream stream(buckets, rng, options);
  std::vector<Batch> out;
  for (std::int64_t i = 0; i < count; ++i) {
    auto b = stream.next();
    if (!b) break;
    out.push_back(std::move(*b));
  }
  return out;
}

}  // namespace tinyvid
