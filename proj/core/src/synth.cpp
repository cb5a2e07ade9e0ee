#include "fergcn/synth.hpp"

#include <algorithm>
#include <cmath>

#include "fergcn/container.hpp"
#include "fergcn/errors.hpp"

namespace fergcn {

namespace {

constexpr std::string_view kDatasetMagic = "FGDS";

enum Substream : std::uint64_t { kCurveStream = 1, kDistractorStream = 2, kNoiseStream = 3 };

}  // namespace

std::string curve_family_name(CurveFamily f) { return f == CurveFamily::kRamp ? "ramp" : "bump"; }

CurveFamily parse_curve_family(const std::string& s) {
  if (s == "ramp") return CurveFamily::kRamp;
  if (s == "bump") return CurveFamily::kBump;
  throw ConfigError("unknown curve family '" + s + "' (expected ramp or bump)");
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("need at least two classes");
  if (frames < 2) throw ConfigError("need at least two frames");
  if (curve == CurveFamily::kBump && frames < 3) throw ConfigError("bump curves need at least three frames");
  if (classes > 65535) throw ConfigError("class count must fit in 16 bits");
  if (region_size == 0 || region_size > rows || region_size > cols) {
    throw ConfigError("class region does not fit inside the frame");
  }
  if (slot_count() < classes + (distractors > 0 ? 1 : 0)) {
    throw ConfigError("frame has " + std::to_string(slot_count()) + " region slots, need " +
                      std::to_string(classes) + " class slots plus distractor room");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
}

namespace {

std::size_t class_slot(const SyntheticSpec& spec, std::size_t label) {
  return label * spec.slot_count() / spec.classes;
}

std::pair<std::size_t, std::size_t> slot_origin(const SyntheticSpec& spec, std::size_t slot) {
  const std::size_t per_row = spec.cols / spec.region_size;
  return {(slot / per_row) * spec.region_size, (slot % per_row) * spec.region_size};
}

std::vector<std::size_t> distractor_slots(const SyntheticSpec& spec) {
  std::vector<bool> used(spec.slot_count(), false);
  for (std::size_t k = 0; k < spec.classes; ++k) used[class_slot(spec, k)] = true;
  std::vector<std::size_t> free;
  for (std::size_t s = 0; s < used.size(); ++s)
    if (!used[s]) free.push_back(s);
  return free;
}

}  // namespace

std::pair<std::size_t, std::size_t> SyntheticSpec::class_origin(std::size_t label) const {
  return slot_origin(*this, class_slot(*this, label));
}

double class_texture(std::size_t label, std::size_t y, std::size_t x, std::size_t side) {
  constexpr double kLow = 0.4;
  switch (label % 6) {
    case 0: return 1.0;
    case 1: return y % 2 == 0 ? 1.0 : kLow;
    case 2: return x % 2 == 0 ? 1.0 : kLow;
    case 3: return (x + y) % 2 == 0 ? 1.0 : kLow;
    case 4: return (y == 0 || x == 0 || y + 1 == side || x + 1 == side) ? 1.0 : kLow;
    default: return (x == y || x + y + 1 == side) ? 1.0 : kLow;
  }
}

std::vector<double> draw_intensity(const SyntheticSpec& spec, CounterRng& rng) {
  const std::size_t n = spec.frames;
  const double last = static_cast<double>(n - 1);
  std::vector<double> curve(n);
  if (spec.curve == CurveFamily::kRamp) {
    // Random onset; the rise rate follows from reaching 1 at the last frame.
    const double onset = rng.uniform(0.0, 0.6 * last);
    for (std::size_t t = 0; t < n; ++t) {
      curve[t] = std::clamp((static_cast<double>(t) - onset) / (last - onset), 0.0, 1.0);
    }
    curve[n - 1] = 1.0;
  } else {
    const double centre = rng.uniform(0.35, 0.65) * last;
    const double width = rng.uniform(0.08, 0.16) * last;
    double peak = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double z = (static_cast<double>(t) - centre) / width;
      curve[t] = std::exp(-0.5 * z * z);
      peak = std::max(peak, curve[t]);
    }
    for (auto& v : curve) v /= peak;
  }
  return curve;
}

std::vector<double> render_background(const SyntheticSpec& spec, CounterRng& rng) {
  std::vector<double> bg(spec.rows * spec.cols, spec.background);
  auto free = distractor_slots(spec);
  for (std::size_t k = 0; k < spec.distractors && !free.empty(); ++k) {
    const std::size_t pick = rng.below(free.size());
    const std::size_t slot = free[pick];
    free.erase(free.begin() + static_cast<std::ptrdiff_t>(pick));
    const std::size_t texture = rng.below(6);
    const double amplitude = rng.uniform(0.2, 0.8);
    const auto [oy, ox] = slot_origin(spec, slot);
    for (std::size_t y = 0; y < spec.region_size; ++y)
      for (std::size_t x = 0; x < spec.region_size; ++x)
        bg[(oy + y) * spec.cols + ox + x] += amplitude * class_texture(texture, y, x, spec.region_size);
  }
  return bg;
}

SequenceSample render_sample(const SyntheticSpec& spec, std::uint16_t label, std::span<const double> intensity,
                             const CounterRng& sample_rng) {
  spec.validate();
  if (label >= spec.classes) throw IndexError("label " + std::to_string(label) + " out of range");
  if (intensity.size() != spec.frames) throw ShapeError("intensity curve length does not match frame count");
  SequenceSample s;
  s.label = label;
  s.intensity.assign(intensity.begin(), intensity.end());
  s.mask.assign(spec.rows * spec.cols, 0);
  const auto [oy, ox] = spec.class_origin(label);
  for (std::size_t y = 0; y < spec.region_size; ++y)
    for (std::size_t x = 0; x < spec.region_size; ++x) s.mask[(oy + y) * spec.cols + ox + x] = 1;

  auto distractor_rng = sample_rng.substream(kDistractorStream);
  auto noise_rng = sample_rng.substream(kNoiseStream);
  const auto background = render_background(spec, distractor_rng);

  s.images.frames = spec.frames;
  s.images.rows = spec.rows;
  s.images.cols = spec.cols;
  s.images.pixels.resize(spec.frames * spec.rows * spec.cols);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t y = 0; y < spec.rows; ++y) {
      for (std::size_t x = 0; x < spec.cols; ++x) {
        double v = background[y * spec.cols + x];
        if (s.mask[y * spec.cols + x] != 0) {
          v += intensity[t] * spec.pattern_amplitude * class_texture(label, y - oy, x - ox, spec.region_size);
        }
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise_rng.normal();
        s.images.at(t, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return s;
}

SequenceSample make_sample(const SyntheticSpec& spec, std::uint16_t label, const CounterRng& sample_rng) {
  spec.validate();
  auto curve_rng = sample_rng.substream(kCurveStream);
  const auto intensity = draw_intensity(spec, curve_rng);
  return render_sample(spec, label, intensity, sample_rng);
}

Split stratified_split(std::span<const std::uint16_t> labels, std::size_t classes, std::uint64_t seed) {
  const CounterRng root(seed, 0x73706c6974ULL);
  Split split;
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) members.push_back(i);
    if (members.empty()) continue;
    auto rng = root.substream(k);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const std::size_t n_val =
        members.size() < 2 ? 0 : std::max<std::size_t>(1, (members.size() + 2) / 5);
    split.val.insert(split.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

std::vector<std::uint16_t> Dataset::labels() const {
  std::vector<std::uint16_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Dataset make_dataset(const SyntheticSpec& spec, std::size_t per_class) {
  spec.validate();
  if (per_class < 2) throw ConfigError("per_class must be at least 2");
  Dataset ds;
  ds.info = {spec.classes, spec.frames, spec.rows, spec.cols, spec.curve, spec.seed};
  const CounterRng root(spec.seed, 0x73616d706c65ULL);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t index = k * per_class + j;
      ds.samples.push_back(make_sample(spec, static_cast<std::uint16_t>(k), root.substream(index)));
    }
  }
  ds.split = stratified_split(ds.labels(), spec.classes, spec.seed);
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  const auto& info = ds.info;
  ByteWriter w;
  w.magic(kDatasetMagic);
  w.u8(kContainerVersion);
  w.header_line({{"K", std::to_string(info.classes)},
                 {"N", std::to_string(info.frames)},
                 {"R", std::to_string(info.rows)},
                 {"C", std::to_string(info.cols)},
                 {"count", std::to_string(ds.samples.size())},
                 {"curve_family", curve_family_name(info.curve)},
                 {"seed", std::to_string(info.seed)}});
  for (const auto& s : ds.samples) {
    if (s.intensity.size() != info.frames || s.mask.size() != info.rows * info.cols ||
        s.images.pixels.size() != info.frames * info.rows * info.cols) {
      throw ShapeError("sample does not match dataset dimensions");
    }
    w.u16(s.label);
    w.f64s(s.intensity);
    w.raw(s.mask);
    w.f64s(s.images.pixels);
  }
  return w.bytes();
}

Dataset decode_dataset(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kDatasetMagic);
  r.expect_version(kContainerVersion);
  const std::size_t header_at = r.offset();
  const Header h = r.header_line();
  Dataset ds;
  ds.info.classes = header_get_uint(h, "K", header_at);
  ds.info.frames = header_get_uint(h, "N", header_at);
  ds.info.rows = header_get_uint(h, "R", header_at);
  ds.info.cols = header_get_uint(h, "C", header_at);
  ds.info.seed = header_get_uint(h, "seed", header_at);
  try {
    ds.info.curve = parse_curve_family(header_get(h, "curve_family", header_at));
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), header_at);
  }
  const std::size_t count = header_get_uint(h, "count", header_at);
  const std::size_t n = ds.info.frames, px = ds.info.rows * ds.info.cols;
  const std::size_t record = 2 + 8 * n + px + 8 * n * px;
  r.require(count * record, "dataset payload (" + std::to_string(count) + " records)");
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    const std::size_t at = r.offset();
    s.label = r.u16();
    if (s.label >= ds.info.classes) throw ParseError("label out of range", at);
    s.intensity.resize(n);
    r.f64s(s.intensity);
    s.mask.resize(px);
    r.raw(s.mask);
    s.images = {n, ds.info.rows, ds.info.cols, std::vector<double>(n * px)};
    r.f64s(s.images.pixels);
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last record", r.offset());
  ds.split = stratified_split(ds.labels(), ds.info.classes, ds.info.seed);
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace fergcn
