#include "fergcn/features.hpp"

#include "fergcn/container.hpp"
#include "fergcn/errors.hpp"

namespace fergcn {

namespace {
constexpr std::string_view kMagic = "FGDS";
}

void FrameFeatureSequence::validate() const {
  if (features.rank() != 2) throw ShapeError("frame features must be an N x d matrix");
  if (!features.all_finite()) throw NumericalError("frame features contain non-finite values");
}

std::vector<std::uint8_t> encode_features(const FeatureFile& file) {
  ByteWriter w;
  w.magic(kMagic);
  w.u8(kContainerVersion);
  w.header_line({{"K", std::to_string(file.classes)},
                 {"N", std::to_string(file.frames)},
                 {"d", std::to_string(file.dim)},
                 {"count", std::to_string(file.records.size())},
                 {"curve_family", curve_family_name(file.curve)},
                 {"seed", std::to_string(file.seed)}});
  for (const auto& r : file.records) {
    if (r.sequence.frames() != file.frames || r.sequence.dim() != file.dim || r.intensity.size() != file.frames ||
        r.mask.size() != file.dim) {
      throw ShapeError("feature record does not match file dimensions");
    }
    w.u16(r.label);
    w.f64s(r.intensity);
    w.raw(r.mask);
    w.f64s(r.sequence.features.values());
  }
  return w.bytes();
}

FeatureFile decode_features(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kMagic);
  r.expect_version(kContainerVersion);
  const std::size_t header_at = r.offset();
  const Header h = r.header_line();
  FeatureFile f;
  f.classes = header_get_uint(h, "K", header_at);
  f.frames = header_get_uint(h, "N", header_at);
  f.dim = header_get_uint(h, "d", header_at);
  f.seed = header_get_uint(h, "seed", header_at);
  try {
    f.curve = parse_curve_family(header_get(h, "curve_family", header_at));
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), header_at);
  }
  if (f.frames == 0 || f.dim == 0) throw ParseError("feature header has an empty dimension", header_at);
  const std::size_t count = header_get_uint(h, "count", header_at);
  const std::size_t record = 2 + 8 * f.frames + f.dim + 8 * f.frames * f.dim;
  r.require(count * record, "feature payload (" + std::to_string(count) + " records)");
  f.records.resize(count);
  for (auto& rec : f.records) {
    rec.label = r.u16();
    rec.intensity.resize(f.frames);
    r.f64s(rec.intensity);
    rec.mask.resize(f.dim);
    r.raw(rec.mask);
    rec.sequence.features = Tensor({f.frames, f.dim});
    r.f64s(rec.sequence.features.values());
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last record", r.offset());
  return f;
}

void write_features(const FeatureFile& file, const std::filesystem::path& path) {
  write_file_bytes(path, encode_features(file));
}

FeatureFile read_features(const std::filesystem::path& path) { return decode_features(read_file_bytes(path)); }

FrameFeatureSequence load_features(const std::filesystem::path& path, std::size_t index) {
  auto file = read_features(path);
  if (index >= file.records.size()) {
    throw IndexError("feature file holds " + std::to_string(file.records.size()) + " sequences, asked for #" +
                     std::to_string(index));
  }
  return std::move(file.records[index].sequence);
}

FrameFeatureSequence resample_frames(const FrameFeatureSequence& seq, std::size_t target) {
  seq.validate();
  if (target == 0) throw ConfigError("resample target must be positive");
  const std::size_t m = seq.frames(), d = seq.dim();
  Tensor out({target, d});
  for (std::size_t j = 0; j < target; ++j) {
    const std::size_t src = j * m / target;
    for (std::size_t c = 0; c < d; ++c) out.at(j, c) = seq.features.at(src, c);
  }
  return {std::move(out)};
}

}  // namespace fergcn
