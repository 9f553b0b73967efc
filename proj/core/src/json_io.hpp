#pragma once

// JSON conversions shared between translation units. Not installed.

#include <cstddef>
#include <string>

#include <json.hpp>

#include "cqr/embedding.hpp"

namespace cqr::detail {

// Array of {"space", "id", "vector"} records, in table order.
nlohmann::json embeddings_to_json(const EmbeddingTable& table);

// `expected_dim` == 0 accepts whatever dimension the first record has.
EmbeddingTable embeddings_from_records(const nlohmann::json& records, std::size_t expected_dim,
                                       bool normalize, const std::string& source);

}  // namespace cqr::detail
