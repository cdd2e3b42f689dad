#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faultrange/dataset.hpp"
#include "faultrange/error.hpp"
#include "faultrange/fault_inject.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/harness.hpp"
#include "faultrange/protection.hpp"

namespace faultrange {

// Binary container ("RRES"):
//   magic       4 bytes  "RRES"
//   version     u32 LE   1
//   header_len  u64 LE
//   header      UTF-8 JSON, header_len bytes
//   payload     little-endian FP32 tensors; the header gives each tensor's
//               byte offset into the payload and its element count.
// Models and datasets share the layout; see docs/formats.md.

inline constexpr std::uint32_t kContainerVersion = 1;

enum class ContainerIssue {
  bad_magic,
  unsupported_version,
  truncated,
  bad_header,
  count_mismatch,
  offset_overflow,
  overlap,
};

std::string_view to_string(ContainerIssue issue) noexcept;

class ContainerError : public Error {
 public:
  ContainerError(ContainerIssue issue, const std::string& message)
      : Error(ErrorCode::format, std::string(to_string(issue)) + ": " + message), issue_(issue) {}
  ContainerIssue issue() const noexcept { return issue_; }

 private:
  ContainerIssue issue_;
};

std::vector<std::uint8_t> encode_model(const ModelGraph& model);
ModelGraph decode_model(std::span<const std::uint8_t> bytes);
void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// JSON documents. Schema violations raise ErrorCode::schema with the field path.

std::string bounds_to_json(const BoundsFile& bounds);
BoundsFile bounds_from_json(std::string_view text);
void save_bounds(const BoundsFile& bounds, const std::filesystem::path& path);
BoundsFile load_bounds(const std::filesystem::path& path);

std::string report_to_json(const CampaignReport& report);
CampaignReport report_from_json(std::string_view text);
void save_report(const CampaignReport& report, const std::filesystem::path& path);
CampaignReport load_report(const std::filesystem::path& path);

std::string plans_to_json(const std::vector<FaultPlan>& plans);
std::vector<FaultPlan> plans_from_json(std::string_view text);

ClusterConfig clusters_from_json(std::string_view text);
std::string clusters_to_json(const ClusterConfig& clusters);
ClusterConfig load_clusters(const std::filesystem::path& path);

struct CorrectSubset {
  std::string dataset_id;
  std::string split;
  double accuracy = 0.0;
  std::vector<std::size_t> indices;
};

std::string subset_to_json(const CorrectSubset& subset);
CorrectSubset subset_from_json(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace faultrange
