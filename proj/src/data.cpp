#include "rdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rdd/rng.hpp"

namespace rdd {

int Dataset::num_classes() const {
  int c = 0;
  for (int y : labels) c = std::max(c, y + 1);
  return c;
}

int Dataset::num_groups() const {
  int g = 0;
  for (int id : group_ids) g = std::max(g, id + 1);
  return g;
}

Shape Dataset::feature_shape() const {
  const Shape& s = features.shape();
  if (s.empty()) return {};
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  const std::int64_t n = size();
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw std::invalid_argument("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " samples");
  }
  if (!group_ids.empty() && static_cast<std::int64_t>(group_ids.size()) != n) {
    throw std::invalid_argument("dataset '" + name + "': group id count does not match samples");
  }
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("dataset '" + name + "': negative label");
  }
  for (int g : group_ids) {
    if (g < 0) throw std::invalid_argument("dataset '" + name + "': negative group id");
  }
}

Dataset Dataset::take(const std::vector<std::int64_t>& indices) const {
  const std::int64_t n = size();
  const std::int64_t w = features.row_width();
  Shape s = features.shape();
  s[0] = static_cast<std::int64_t>(indices.size());
  Tensor f = Tensor::zeros(s);
  Dataset out;
  out.labels.reserve(indices.size());
  if (has_groups()) out.group_ids.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::int64_t i = indices[r];
    if (i < 0 || i >= n) throw std::out_of_range("dataset take: index " + std::to_string(i));
    std::copy(features.data() + i * w, features.data() + (i + 1) * w, f.data() + static_cast<std::int64_t>(r) * w);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    if (has_groups()) out.group_ids.push_back(group_ids[static_cast<std::size_t>(i)]);
  }
  out.features = std::move(f);
  out.name = name;
  return out;
}

std::vector<std::int64_t> Dataset::class_indices(int c) const {
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < size(); ++i) {
    if (labels[static_cast<std::size_t>(i)] == c) idx.push_back(i);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

void MixtureSpec::validate() const {
  if (classes < 1 || groups_per_class < 1 || dim < 1 || n < 1) {
    throw std::invalid_argument("mixture: counts must be positive");
  }
  if (static_cast<int>(group_weights.size()) != groups_per_class) {
    throw std::invalid_argument("mixture: " + std::to_string(group_weights.size()) + " group weights for " +
                                std::to_string(groups_per_class) + " groups");
  }
  double s = 0.0;
  for (double w : group_weights) {
    if (w < 0.0) throw std::invalid_argument("mixture: negative group weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("mixture: group weights sum to " + std::to_string(s));
  if (separation < 0.0) throw std::invalid_argument("mixture: separation must be >= 0");
}

Dataset gen_subgroup_mixture(const MixtureSpec& spec) {
  spec.validate();
  Rng mean_rng(Rng::mix(spec.seed, 0x6d65616e73ull));
  Rng rng(Rng::mix(spec.sample_seed != 0 ? spec.sample_seed : spec.seed, 0x6d697874ull));

  // blob means, one per (class, group); a function of `seed` only
  const int blobs = spec.classes * spec.groups_per_class;
  std::vector<double> means(static_cast<std::size_t>(blobs) * spec.dim);
  for (double& m : means) m = spec.separation * mean_rng.normal();

  std::vector<double> cumw(spec.group_weights.size());
  double acc = 0.0;
  for (std::size_t g = 0; g < cumw.size(); ++g) {
    acc += spec.group_weights[g];
    cumw[g] = acc;
  }

  Dataset out;
  out.name = "subgroup-mixture";
  Tensor f = Tensor::zeros({spec.n, spec.dim});
  out.labels.resize(static_cast<std::size_t>(spec.n));
  out.group_ids.resize(static_cast<std::size_t>(spec.n));

  for (std::int64_t i = 0; i < spec.n; ++i) {
    const int c = static_cast<int>(i % spec.classes);  // balanced classes
    const double u = rng.uniform();
    int g = spec.groups_per_class - 1;
    for (std::size_t j = 0; j < cumw.size(); ++j) {
      if (u < cumw[j]) {
        g = static_cast<int>(j);
        break;
      }
    }
    const int blob = c * spec.groups_per_class + g;
    const double* mu = means.data() + static_cast<std::size_t>(blob) * spec.dim;
    double* row = f.data() + i * spec.dim;
    for (int j = 0; j < spec.dim; ++j) row[j] = mu[j] + rng.normal();
    out.labels[static_cast<std::size_t>(i)] = c;
    out.group_ids[static_cast<std::size_t>(i)] = blob;
  }
  out.features = std::move(f);
  return out;
}

// ---------------------------------------------------------------------------
// csv
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv: line " + std::to_string(line_no) + ": cannot parse '" + s + "' as a number");
  }
}

int parse_integral(const std::string& s, int line_no, const char* what) {
  const double v = parse_number(s, line_no);
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9) {
    throw std::runtime_error("csv: line " + std::to_string(line_no) + ": " + what + " '" + s + "' is not integral");
  }
  return static_cast<int>(r);
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  if (schema.feature_columns.empty()) throw std::invalid_argument("csv: schema has no feature columns");
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: '" + path + "' is empty");
  const std::vector<std::string> header = split_csv_line(line);

  auto col_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("csv: column '" + name + "' not found in '" + path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> feat_cols;
  for (const auto& c : schema.feature_columns) feat_cols.push_back(col_of(c));
  const std::size_t label_col = col_of(schema.label_column);
  const bool want_groups = !schema.group_column.empty();
  const std::size_t group_col = want_groups ? col_of(schema.group_column) : 0;

  std::vector<double> values;
  Dataset out;
  out.name = path;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("csv: line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t c : feat_cols) values.push_back(parse_number(cells[c], line_no));
    const int y = parse_integral(cells[label_col], line_no, "label");
    if (y < 0) throw std::runtime_error("csv: line " + std::to_string(line_no) + ": negative label");
    out.labels.push_back(y);
    if (want_groups) out.group_ids.push_back(parse_integral(cells[group_col], line_no, "group id"));
  }
  const auto n = static_cast<std::int64_t>(out.labels.size());
  out.features = Tensor({n, static_cast<std::int64_t>(feat_cols.size())}, std::move(values));
  out.validate();
  return out;
}

void save_csv(const Dataset& data, const std::string& path) {
  data.validate();
  if (data.features.rank() != 2) {
    throw std::invalid_argument("csv: can only save flat feature matrices, got " + shape_str(data.features.shape()));
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
  os.precision(17);
  const std::int64_t d = data.features.dim(1);
  for (std::int64_t j = 0; j < d; ++j) os << "f" << j << ",";
  os << "label";
  if (data.has_groups()) os << ",group";
  os << "\n";
  for (std::int64_t i = 0; i < data.size(); ++i) {
    for (std::int64_t j = 0; j < d; ++j) os << data.features.at(i, j) << ",";
    os << data.labels[static_cast<std::size_t>(i)];
    if (data.has_groups()) os << "," << data.group_ids[static_cast<std::size_t>(i)];
    os << "\n";
  }
  if (!os) throw std::runtime_error("csv: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// idx
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("idx: truncated header in '" + path + "'");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx_images(const std::string& images_path, const std::string& labels_path) {
  std::ifstream is(images_path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open '" + images_path + "'");
  const std::uint32_t magic = read_be_u32(is, images_path);
  if (magic != 0x00000803u) {
    throw std::runtime_error("idx: bad magic in '" + images_path + "' (expected unsigned-byte rank-3 images)");
  }
  const std::uint32_t n = read_be_u32(is, images_path);
  const std::uint32_t h = read_be_u32(is, images_path);
  const std::uint32_t w = read_be_u32(is, images_path);
  const std::size_t payload = static_cast<std::size_t>(n) * h * w;
  std::vector<unsigned char> bytes(payload);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(is.gcount()) != payload) {
    throw std::runtime_error("idx: truncated payload in '" + images_path + "': expected " +
                             std::to_string(payload) + " bytes, got " + std::to_string(is.gcount()));
  }

  Dataset out;
  out.name = images_path;
  std::vector<double> values(payload);
  for (std::size_t i = 0; i < payload; ++i) values[i] = static_cast<double>(bytes[i]) / 255.0;
  out.features = Tensor({static_cast<std::int64_t>(n), static_cast<std::int64_t>(h), static_cast<std::int64_t>(w), 1},
                        std::move(values));
  out.labels.assign(n, 0);

  if (!labels_path.empty()) {
    std::ifstream ls(labels_path, std::ios::binary);
    if (!ls) throw std::runtime_error("idx: cannot open '" + labels_path + "'");
    const std::uint32_t lmagic = read_be_u32(ls, labels_path);
    if (lmagic != 0x00000801u) throw std::runtime_error("idx: bad magic in '" + labels_path + "'");
    const std::uint32_t ln = read_be_u32(ls, labels_path);
    if (ln != n) {
      throw std::runtime_error("idx: label count " + std::to_string(ln) + " does not match " + std::to_string(n) +
                               " images");
    }
    std::vector<unsigned char> lbytes(ln);
    ls.read(reinterpret_cast<char*>(lbytes.data()), static_cast<std::streamsize>(ln));
    if (static_cast<std::uint32_t>(ls.gcount()) != ln) throw std::runtime_error("idx: truncated labels");
    for (std::uint32_t i = 0; i < ln; ++i) out.labels[i] = lbytes[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// corruption
// ---------------------------------------------------------------------------

std::string CorruptionSpec::name() const {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "noise";
    case CorruptionKind::blur: return "blur";
    case CorruptionKind::invert: return "invert";
  }
  return "?";
}

CorruptionSpec CorruptionSpec::parse(const std::string& name) {
  CorruptionSpec s;
  if (name == "noise") {
    s.kind = CorruptionKind::gaussian_noise;
  } else if (name == "blur") {
    s.kind = CorruptionKind::blur;
  } else if (name == "invert") {
    s.kind = CorruptionKind::invert;
  } else {
    throw std::invalid_argument("corruption: unknown kind '" + name + "'");
  }
  return s;
}

void CorruptionSpec::validate() const {
  if (noise_sigma < 0.0) throw std::invalid_argument("corruption: noise sigma must be >= 0");
  if (blur_width < 1) throw std::invalid_argument("corruption: blur width must be >= 1");
}

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec) {
  spec.validate();
  Dataset out = data;
  Tensor& f = out.features;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: {
      if (spec.noise_sigma == 0.0) break;
      Rng rng(Rng::mix(spec.seed, 0x6e6f697365ull));
      for (std::int64_t i = 0; i < f.size(); ++i) f.at(i) += spec.noise_sigma * rng.normal();
      break;
    }
    case CorruptionKind::invert: {
      const double s = spec.invert_lo + spec.invert_hi;
      for (std::int64_t i = 0; i < f.size(); ++i) f.at(i) = s - f.at(i);
      break;
    }
    case CorruptionKind::blur: {
      if (f.rank() != 4) {
        throw std::invalid_argument("corruption: blur needs image-shaped features (n x H x W x C), got " +
                                    shape_str(f.shape()));
      }
      const std::int64_t n = f.dim(0), h = f.dim(1), w = f.dim(2), c = f.dim(3);
      const int r = spec.blur_width / 2;
      Tensor blurred = Tensor::zeros(f.shape());
      for (std::int64_t img = 0; img < n; ++img) {
        for (std::int64_t y = 0; y < h; ++y) {
          for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
              double acc = 0.0;
              int cnt = 0;  // normalized box filter, truncated at the border
              for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                  const std::int64_t yy = y + dy, xx = x + dx;
                  if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                  acc += f.at(((img * h + yy) * w + xx) * c + ch);
                  ++cnt;
                }
              }
              blurred.at(((img * h + y) * w + x) * c + ch) = acc / cnt;
            }
          }
        }
      }
      out.features = std::move(blurred);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// subsampling
// ---------------------------------------------------------------------------

Dataset subsample(const Dataset& data, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("subsample: per_class must be >= 1");
  const int classes = data.num_classes();
  std::vector<std::int64_t> selected;
  for (int c = 0; c < classes; ++c) {
    const std::vector<std::int64_t> pool = data.class_indices(c);
    if (static_cast<int>(pool.size()) < per_class) {
      throw std::invalid_argument("subsample: class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                                  " samples, need " + std::to_string(per_class));
    }
    Rng rng(Rng::mix(seed, 0x737562ull + static_cast<std::uint64_t>(c)));
    for (std::int64_t j : rng.sample_without_replacement(static_cast<std::int64_t>(pool.size()), per_class)) {
      selected.push_back(pool[static_cast<std::size_t>(j)]);
    }
  }
  std::sort(selected.begin(), selected.end());  // keep original order
  return data.take(selected);
}

}  // namespace rdd
