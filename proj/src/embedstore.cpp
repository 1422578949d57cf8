#include "rclp/embedstore.hpp"

#include <cmath>
#include <unordered_set>

#include "rclp/error.hpp"

namespace rclp {

void validate(const EmbeddingSet& x) {
  require(x.rows() >= 1, ErrorCode::kValidation, "embedding set must have at least one row");
  require(x.dims() >= 2, ErrorCode::kValidation, "embedding set must have at least two dims");
  require(x.ids.size() == x.rows(), ErrorCode::kValidation,
          "embedding set has " + std::to_string(x.ids.size()) + " ids for " +
              std::to_string(x.rows()) + " rows");
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (double v : x.data.row(i)) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::kValidation, "non-finite value in row '" + x.ids[i] + "'");
      }
    }
    if (x.unit_norm) {
      const double n = norm2(x.data.row(i));
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        fail(ErrorCode::kValidation, "row '" + x.ids[i] + "' flagged unit-norm has norm " +
                                         std::to_string(n));
      }
    }
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : x.ids) {
    if (!seen.insert(id).second) fail(ErrorCode::kValidation, "duplicate id '" + id + "'");
  }
}

void validate(const ClassCatalog& c) {
  const std::size_t m = c.names.size();
  require(m >= 2, ErrorCode::kValidation, "catalog needs at least two classes");
  validate(c.single_template);
  require(c.single_template.rows() == m, ErrorCode::kValidation,
          "single-template embeddings do not match class count");
  if (c.multi_template) {
    validate(*c.multi_template);
    require(c.multi_template->rows() == m, ErrorCode::kValidation,
            "multi-template embeddings do not match class count");
    require(c.multi_template->dims() == c.single_template.dims(), ErrorCode::kValidation,
            "single- and multi-template dims differ");
  }
}

void validate(const LabelVector& labels, std::optional<std::size_t> classes) {
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const std::int64_t v = labels.values[j];
    if (v < LabelVector::kUnlabeled) {
      fail(ErrorCode::kValidation, "label " + std::to_string(v) + " at " + std::to_string(j));
    }
    if (classes && v != LabelVector::kUnlabeled && static_cast<std::size_t>(v) >= *classes) {
      fail(ErrorCode::kValidation, "label " + std::to_string(v) + " at " + std::to_string(j) +
                                       " exceeds class count " + std::to_string(*classes));
    }
  }
}

EmbeddingSet make_embeddings(Matrix data, bool unit_norm) {
  EmbeddingSet x;
  x.ids.reserve(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) x.ids.push_back(std::to_string(i));
  x.data = std::move(data);
  x.unit_norm = unit_norm;
  return x;
}

EmbeddingSet l2_normalize(const EmbeddingSet& x) {
  EmbeddingSet out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = out.data.row(i);
    const double n = norm2(row);
    if (!(n > kZeroRowThreshold)) {
      fail(ErrorCode::kDegenerateInput,
           "cannot normalize zero row '" + (i < x.ids.size() ? x.ids[i] : std::to_string(i)) + "'");
    }
    for (double& v : row) v /= n;
  }
  out.unit_norm = true;
  return out;
}

namespace container {

void write_embedding_payload(ByteWriter& w, const EmbeddingSet& x) {
  w.u64(x.rows());
  w.u64(x.dims());
  w.u8(x.unit_norm ? 1 : 0);
  for (double v : x.data.data()) w.f32(static_cast<float>(v));
  for (const auto& id : x.ids) w.str(id);
}

EmbeddingSet read_embedding_payload(ByteReader& r) {
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  const bool unit = r.u8() != 0;
  // Guard the allocation against corrupted counts before trusting them.
  if (d != 0 && n > r.remaining() / 4 / d) fail(ErrorCode::kIo, "truncated embedding payload");
  Matrix data(n, d);
  for (double& v : data.data()) v = static_cast<double>(r.f32());
  EmbeddingSet x;
  x.data = std::move(data);
  x.unit_norm = unit;
  x.ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) x.ids.push_back(r.str());
  validate(x);
  return x;
}

}  // namespace container

std::vector<std::uint8_t> encode(const ContainerObject& object) {
  container::ByteWriter w;
  if (const auto* x = std::get_if<EmbeddingSet>(&object)) {
    validate(*x);
    w.header(container::Tag::kEmbeddings);
    container::write_embedding_payload(w, *x);
  } else if (const auto* c = std::get_if<ClassCatalog>(&object)) {
    validate(*c);
    w.header(container::Tag::kCatalog);
    w.u64(c->names.size());
    for (const auto& name : c->names) w.str(name);
    w.u8(c->multi_template ? 2 : 1);
    container::write_embedding_payload(w, c->single_template);
    if (c->multi_template) container::write_embedding_payload(w, *c->multi_template);
  } else {
    const auto& labels = std::get<LabelVector>(object);
    validate(labels);
    w.header(container::Tag::kLabels);
    w.u64(labels.size());
    for (std::int64_t v : labels.values) w.i64(v);
  }
  return w.bytes();
}

ContainerObject load_container(const std::filesystem::path& path) {
  container::Tag tag{};
  auto r = container::open(path, tag);
  switch (tag) {
    case container::Tag::kEmbeddings:
      return container::read_embedding_payload(r);
    case container::Tag::kCatalog: {
      ClassCatalog c;
      const std::uint64_t m = r.u64();
      if (m > r.remaining() / 4) fail(ErrorCode::kIo, "truncated catalog payload");
      c.names.reserve(m);
      for (std::uint64_t i = 0; i < m; ++i) c.names.push_back(r.str());
      const std::uint8_t sections = r.u8();
      if (sections != 1 && sections != 2) {
        fail(ErrorCode::kFormat, "catalog must carry 1 or 2 embedding sections");
      }
      c.single_template = container::read_embedding_payload(r);
      if (sections == 2) c.multi_template = container::read_embedding_payload(r);
      validate(c);
      return c;
    }
    case container::Tag::kLabels: {
      LabelVector labels;
      const std::uint64_t n = r.u64();
      if (n > r.remaining() / 8) fail(ErrorCode::kIo, "truncated label payload");
      labels.values.reserve(n);
      for (std::uint64_t i = 0; i < n; ++i) labels.values.push_back(r.i64());
      validate(labels);
      return labels;
    }
    default:
      fail(ErrorCode::kFormat, path.string() + " holds a basis or adapter section, not a data set");
  }
}

void save_container(const ContainerObject& object, const std::filesystem::path& path) {
  container::write_file(path, encode(object));
}

namespace {

template <typename T>
T load_as(const std::filesystem::path& path, const char* what) {
  auto object = load_container(path);
  if (auto* v = std::get_if<T>(&object)) return std::move(*v);
  fail(ErrorCode::kFormat, path.string() + " does not hold " + what);
}

}  // namespace

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  return load_as<EmbeddingSet>(path, "an embedding set");
}

ClassCatalog load_catalog(const std::filesystem::path& path) {
  return load_as<ClassCatalog>(path, "a class catalog");
}

LabelVector load_labels(const std::filesystem::path& path) {
  return load_as<LabelVector>(path, "a label vector");
}

}  // namespace rclp
