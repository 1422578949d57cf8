#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rclp/container_io.hpp"
#include "rclp/matrix.hpp"

namespace rclp {

/// n x d embedding rows with identifiers. Values are float32 on disk, double in memory.
struct EmbeddingSet {
  Matrix data;
  std::vector<std::string> ids;
  bool unit_norm = false;

  std::size_t rows() const noexcept { return data.rows(); }
  std::size_t dims() const noexcept { return data.cols(); }

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

struct ClassCatalog {
  std::vector<std::string> names;
  EmbeddingSet single_template;
  std::optional<EmbeddingSet> multi_template;

  std::size_t classes() const noexcept { return names.size(); }

  /// Multi-template embeddings when present, otherwise the single-template set.
  const EmbeddingSet& best_template() const {
    return multi_template ? *multi_template : single_template;
  }

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;
};

struct LabelVector {
  static constexpr std::int64_t kUnlabeled = -1;
  std::vector<std::int64_t> values;

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

inline constexpr double kUnitNormTolerance = 1e-4;
inline constexpr double kZeroRowThreshold = 1e-12;

/// Throws a validation error when an invariant is broken.
void validate(const EmbeddingSet& x);
void validate(const ClassCatalog& c);
/// Without `classes`, only checks values >= kUnlabeled.
void validate(const LabelVector& labels, std::optional<std::size_t> classes = std::nullopt);

/// Builds an EmbeddingSet with ids "0".."n-1".
EmbeddingSet make_embeddings(Matrix data, bool unit_norm = false);

EmbeddingSet l2_normalize(const EmbeddingSet& x);

using ContainerObject = std::variant<EmbeddingSet, ClassCatalog, LabelVector>;

ContainerObject load_container(const std::filesystem::path& path);
void save_container(const ContainerObject& object, const std::filesystem::path& path);

EmbeddingSet load_embeddings(const std::filesystem::path& path);
ClassCatalog load_catalog(const std::filesystem::path& path);
LabelVector load_labels(const std::filesystem::path& path);

/// In-memory encoding, identical to the bytes save_container writes.
std::vector<std::uint8_t> encode(const ContainerObject& object);

namespace container {
void write_embedding_payload(ByteWriter& w, const EmbeddingSet& x);
EmbeddingSet read_embedding_payload(ByteReader& r);
}  // namespace container

}  // namespace rclp
