#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "topicsurv/error.hpp"

namespace topicsurv {

using Json = nlohmann::json;

/// Version written into every model file. Readers reject any other value.
inline constexpr int kFormatVersion = 1;

/// Wraps `payload` in the versioned envelope
///   {"format_version": 1, "kind": <kind>, "checksum": <crc32 hex of payload.dump()>, "payload": {...}}
Json make_envelope(std::string_view kind, const Json& payload);

/// Validates an envelope (version, kind, checksum) and returns its payload.
Json open_envelope(const Json& envelope, std::string_view expected_kind);

void save_json(const Json& document, const std::filesystem::path& path);
Json load_json(const std::filesystem::path& path);

/// Any artifact type T with a `kArtifactKind` member and nlohmann to_json/from_json.
template <class T>
void save_model(const T& artifact, const std::filesystem::path& path) {
  save_json(make_envelope(T::kArtifactKind, Json(artifact)), path);
}

template <class T>
T load_model(const std::filesystem::path& path) {
  Json payload = open_envelope(load_json(path), T::kArtifactKind);
  try {
    return payload.get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kChecksum, "malformed " + std::string(T::kArtifactKind) + " payload: " + e.what());
  }
}

std::string crc32_hex(std::string_view bytes);
std::string file_crc32_hex(const std::filesystem::path& path);

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);
Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

}  // namespace topicsurv
