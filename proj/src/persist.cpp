#include "topicsurv/persist.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "topicsurv/csv.hpp"

namespace topicsurv {

std::string crc32_hex(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::string file_crc32_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return crc32_hex(bytes);
}

Json make_envelope(std::string_view kind, const Json& payload) {
  Json env;
  env["format_version"] = kFormatVersion;
  env["kind"] = std::string(kind);
  env["checksum"] = crc32_hex(payload.dump());
  env["payload"] = payload;
  return env;
}

Json open_envelope(const Json& env, std::string_view expected_kind) {
  if (!env.is_object() || !env.contains("format_version") || !env.contains("payload") || !env.contains("checksum"))
    throw Error(ErrorKind::kChecksum, "model file lacks the versioned envelope");
  if (!env["format_version"].is_number_integer() || env["format_version"].get<int>() != kFormatVersion)
    throw Error(ErrorKind::kVersion, "unsupported format_version " + env["format_version"].dump() + " (expected " +
                                         std::to_string(kFormatVersion) + ")");
  if (env.value("kind", std::string()) != expected_kind)
    throw input_error("model file holds a '" + env.value("kind", std::string()) + "', expected '" +
                      std::string(expected_kind) + "'");
  const Json& payload = env["payload"];
  if (crc32_hex(payload.dump()) != env["checksum"].get<std::string>())
    throw Error(ErrorKind::kChecksum, "checksum mismatch");
  return payload;
}

void save_json(const Json& document, const std::filesystem::path& path) {
  csv::write_atomic(path, document.dump(1) + "\n");
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open model file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Json doc = Json::parse(bytes, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded())
    throw Error(ErrorKind::kChecksum, "model file is truncated or corrupt: " + path.string());
  return doc;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorKind::kChecksum, "matrix payload has wrong element count");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const Json& j) {
  auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace topicsurv
