#include "faultrange/model_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "json.hpp"

namespace faultrange {

namespace {

using json = nlohmann::json;
// Single-precision number type: FP32 values print as their shortest round-trip form.
using fjson =
    nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

constexpr char kMagic[4] = {'R', 'R', 'E', 'S'};

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  fail(ErrorCode::schema, path + ": " + what);
}

template <class J>
const J& field(const J& obj, const std::string& path, const char* key) {
  if (!obj.is_object()) schema_error(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) schema_error(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

template <class J>
std::string child(const std::string& path, const char* key) {
  return path.empty() ? key : path + "." + key;
}

template <class J>
std::uint64_t get_uint(const J& obj, const std::string& path, const char* key) {
  const J& v = field(obj, path, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<std::int64_t>() >= 0)) {
    schema_error(child<J>(path, key), "expected a non-negative integer");
  }
  return v.template get<std::uint64_t>();
}

template <class J>
std::string get_string(const J& obj, const std::string& path, const char* key) {
  const J& v = field(obj, path, key);
  if (!v.is_string()) schema_error(child<J>(path, key), "expected a string");
  return v.template get<std::string>();
}

template <class J>
bool get_bool(const J& obj, const std::string& path, const char* key) {
  const J& v = field(obj, path, key);
  if (!v.is_boolean()) schema_error(child<J>(path, key), "expected a boolean");
  return v.template get<bool>();
}

template <class J>
float get_float(const J& obj, const std::string& path, const char* key) {
  const J& v = field(obj, path, key);
  if (!v.is_number()) schema_error(child<J>(path, key), "expected a number");
  return v.template get<float>();
}

template <class J>
const J& get_array(const J& obj, const std::string& path, const char* key) {
  const J& v = field(obj, path, key);
  if (!v.is_array()) schema_error(child<J>(path, key), "expected an array");
  return v;
}

template <class J>
std::vector<std::size_t> get_uint_list(const J& obj, const std::string& path, const char* key) {
  const J& arr = get_array(obj, path, key);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number_unsigned() &&
        !(arr[i].is_number_integer() && arr[i].template get<std::int64_t>() >= 0)) {
      schema_error(child<J>(path, key) + "[" + std::to_string(i) + "]",
                   "expected a non-negative integer");
    }
    out.push_back(arr[i].template get<std::size_t>());
  }
  return out;
}

template <class J>
std::vector<std::string> get_string_list(const J& obj, const std::string& path, const char* key) {
  const J& arr = get_array(obj, path, key);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) {
      schema_error(child<J>(path, key) + "[" + std::to_string(i) + "]", "expected a string");
    }
    out.push_back(arr[i].template get<std::string>());
  }
  return out;
}

template <class J>
J parse_json(std::string_view text, const char* what) {
  try {
    return J::parse(text.begin(), text.end());
  } catch (const std::exception& e) {
    fail(ErrorCode::schema, std::string(what) + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Container

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  return v;
}

struct TensorEntry {
  std::string path;  // for error messages
  Shape shape;
  std::uint64_t offset;
  std::uint64_t count;
};

fjson describe(const Tensor& t, std::uint64_t& offset) {
  fjson d;
  d["shape"] = t.shape();
  d["offset"] = offset;
  d["count"] = t.size();
  offset += t.size() * sizeof(float);
  return d;
}

void append_payload(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (float v : t.data()) put_u32(out, to_bits(v));
}

std::vector<std::uint8_t> assemble(const fjson& header, const std::vector<const Tensor*>& tensors) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kContainerVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const Tensor* t : tensors) append_payload(out, *t);
  return out;
}

struct Parsed {
  fjson header;
  std::span<const std::uint8_t> payload;
};

Parsed split_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ContainerError(ContainerIssue::bad_magic, "expected magic \"RRES\" at offset 0");
  }
  if (bytes.size() < 16) throw ContainerError(ContainerIssue::truncated, "file shorter than the 16-byte preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kContainerVersion) {
    throw ContainerError(ContainerIssue::unsupported_version,
                         "version " + std::to_string(version) + " (supported: 1)");
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) {
    throw ContainerError(ContainerIssue::truncated,
                         "header of " + std::to_string(header_len) + " bytes exceeds file size");
  }
  Parsed p;
  try {
    p.header = fjson::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const std::exception& e) {
    throw ContainerError(ContainerIssue::bad_header, std::string("header is not valid JSON: ") + e.what());
  }
  if (!p.header.is_object()) throw ContainerError(ContainerIssue::bad_header, "header is not a JSON object");
  p.payload = bytes.subspan(16 + header_len);
  return p;
}

TensorEntry read_entry(const fjson& d, const std::string& path) {
  TensorEntry e;
  e.path = path;
  e.shape = get_uint_list(d, path, "shape");
  e.offset = get_uint(d, path, "offset");
  e.count = get_uint(d, path, "count");
  if (e.shape.empty() || std::find(e.shape.begin(), e.shape.end(), 0u) != e.shape.end()) {
    schema_error(path + ".shape", "dimensions must be positive");
  }
  return e;
}

/// Checks declared element counts and offsets against the payload.
void check_layout(const std::vector<TensorEntry>& entries, std::span<const std::uint8_t> payload) {
  std::uint64_t declared = 0;
  for (const auto& e : entries) {
    if (e.count != element_count(e.shape)) {
      throw ContainerError(ContainerIssue::count_mismatch,
                           e.path + " declares " + std::to_string(e.count) + " elements for shape " +
                               shape_to_string(e.shape));
    }
    declared += e.count;
  }
  if (payload.size() % sizeof(float) != 0 || declared != payload.size() / sizeof(float)) {
    throw ContainerError(ContainerIssue::count_mismatch,
                         "header declares " + std::to_string(declared) + " elements, payload holds " +
                             std::to_string(payload.size()) + " bytes (" +
                             std::to_string(payload.size() / sizeof(float)) + " elements)");
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& e : entries) {
    if (e.offset % sizeof(float) != 0 || e.offset > payload.size() ||
        e.count > (payload.size() - e.offset) / sizeof(float)) {
      throw ContainerError(ContainerIssue::offset_overflow,
                           e.path + " (offset " + std::to_string(e.offset) + ", " +
                               std::to_string(e.count) + " elements) lies outside the " +
                               std::to_string(payload.size()) + "-byte payload");
    }
    ranges.emplace_back(e.offset, e.offset + e.count * sizeof(float));
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw ContainerError(ContainerIssue::overlap,
                           "tensor byte ranges overlap at offset " + std::to_string(ranges[i].first));
    }
  }
}

Tensor read_tensor(const TensorEntry& e, std::span<const std::uint8_t> payload) {
  std::vector<float> data(e.count);
  for (std::size_t i = 0; i < e.count; ++i) {
    data[i] = from_bits(static_cast<std::uint32_t>(get_le(payload, e.offset + 4 * i, 4)));
  }
  return Tensor(e.shape, std::move(data));
}

std::vector<std::uint8_t> read_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_binary(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Layer specs

fjson spec_to_json(const LayerSpec& spec) {
  fjson j;
  j["kind"] = std::string(to_string(kind_of(spec)));
  if (const auto* c = std::get_if<Conv2d>(&spec)) {
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel_h"] = c->kernel_h;
    j["kernel_w"] = c->kernel_w;
    j["stride"] = c->stride;
    j["padding"] = c->padding;
    j["bias"] = c->bias;
  } else if (const auto* l = std::get_if<Linear>(&spec)) {
    j["in_features"] = l->in_features;
    j["out_features"] = l->out_features;
    j["bias"] = l->bias;
  } else if (const auto* p = std::get_if<MaxPool2d>(&spec)) {
    j["window"] = p->window;
    j["stride"] = p->stride;
  } else if (const auto* a = std::get_if<AvgPool2d>(&spec)) {
    j["window"] = a->window;
    j["stride"] = a->stride;
  } else if (const auto* b = std::get_if<BatchNorm2d>(&spec)) {
    j["channels"] = b->channels;
    j["eps"] = b->eps;
  }
  return j;
}

LayerSpec spec_from_json(const fjson& j, const std::string& path) {
  const std::string kind_name = get_string(j, path, "kind");
  const auto kind = parse_layer_kind(kind_name);
  if (!kind) schema_error(path + ".kind", "unknown layer kind '" + kind_name + "'");
  switch (*kind) {
    case LayerKind::conv2d:
      return Conv2d{get_uint(j, path, "in_channels"), get_uint(j, path, "out_channels"),
                    get_uint(j, path, "kernel_h"),    get_uint(j, path, "kernel_w"),
                    get_uint(j, path, "stride"),      get_uint(j, path, "padding"),
                    get_bool(j, path, "bias")};
    case LayerKind::linear:
      return Linear{get_uint(j, path, "in_features"), get_uint(j, path, "out_features"),
                    get_bool(j, path, "bias")};
    case LayerKind::relu: return Relu{};
    case LayerKind::maxpool2d: return MaxPool2d{get_uint(j, path, "window"), get_uint(j, path, "stride")};
    case LayerKind::avgpool2d: return AvgPool2d{get_uint(j, path, "window"), get_uint(j, path, "stride")};
    case LayerKind::flatten: return Flatten{};
    case LayerKind::batchnorm2d:
      return BatchNorm2d{get_uint(j, path, "channels"), get_float(j, path, "eps")};
  }
  schema_error(path + ".kind", "unsupported layer kind");
}

}  // namespace

std::string_view to_string(ContainerIssue issue) noexcept {
  switch (issue) {
    case ContainerIssue::bad_magic: return "bad magic";
    case ContainerIssue::unsupported_version: return "unsupported version";
    case ContainerIssue::truncated: return "truncated";
    case ContainerIssue::bad_header: return "bad header";
    case ContainerIssue::count_mismatch: return "count mismatch";
    case ContainerIssue::offset_overflow: return "offset overflow";
    case ContainerIssue::overlap: return "overlap";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_model(const ModelGraph& model) {
  fjson header;
  header["format"] = "faultrange-model";
  header["input_shape"] = model.input_shape();
  header["class_names"] = model.class_names();
  header["protection_points"] = model.protection_points();
  fjson layers = fjson::array();
  std::vector<const Tensor*> tensors;
  std::uint64_t offset = 0;
  for (const auto& layer : model.layers()) {
    fjson j = spec_to_json(layer.spec);
    fjson params = fjson::array();
    const auto slots = param_slots(layer.spec);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      fjson d = describe(layer.params[s], offset);
      d["name"] = slots[s].name;
      params.push_back(std::move(d));
      tensors.push_back(&layer.params[s]);
    }
    j["params"] = std::move(params);
    layers.push_back(std::move(j));
  }
  header["layers"] = std::move(layers);
  return assemble(header, tensors);
}

ModelGraph decode_model(std::span<const std::uint8_t> bytes) {
  const Parsed p = split_container(bytes);
  const fjson& h = p.header;
  if (get_string(h, "", "format") != "faultrange-model") {
    schema_error("format", "expected \"faultrange-model\"");
  }
  const Shape input_shape = get_uint_list(h, "", "input_shape");
  auto class_names = get_string_list(h, "", "class_names");
  auto points = get_uint_list(h, "", "protection_points");
  const fjson& lj = get_array(h, "", "layers");

  std::vector<LayerSpec> specs;
  std::vector<TensorEntry> entries;
  std::vector<std::size_t> entries_per_layer;
  for (std::size_t i = 0; i < lj.size(); ++i) {
    const std::string path = "layers[" + std::to_string(i) + "]";
    specs.push_back(spec_from_json(lj[i], path));
    const auto slots = param_slots(specs.back());
    const fjson& pj = get_array(lj[i], path, "params");
    if (pj.size() != slots.size()) {
      schema_error(path + ".params", "expected " + std::to_string(slots.size()) + " entries");
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const std::string ppath = path + ".params[" + std::to_string(s) + "]";
      if (get_string(pj[s], ppath, "name") != slots[s].name) {
        schema_error(ppath + ".name", "expected '" + slots[s].name + "'");
      }
      entries.push_back(read_entry(pj[s], ppath));
      if (entries.back().shape != slots[s].shape) {
        schema_error(ppath + ".shape", "shape " + shape_to_string(entries.back().shape) +
                                           " does not match layer hyperparameters " +
                                           shape_to_string(slots[s].shape));
      }
    }
    entries_per_layer.push_back(slots.size());
  }
  check_layout(entries, p.payload);

  std::vector<Layer> layers;
  std::size_t e = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer{specs[i], {}};
    for (std::size_t s = 0; s < entries_per_layer[i]; ++s) {
      layer.params.push_back(read_tensor(entries[e++], p.payload));
    }
    layers.push_back(std::move(layer));
  }
  return ModelGraph::create(input_shape, std::move(layers), std::move(class_names), std::move(points));
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  write_binary(path, encode_model(model));
}

ModelGraph load_model(const std::filesystem::path& path) { return decode_model(read_binary(path)); }

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  if (ds.images.empty()) fail(ErrorCode::config, "cannot encode an empty dataset");
  const std::size_t n = ds.size();
  Shape image_shape = ds.image_shape;
  Shape all_shape{n};
  all_shape.insert(all_shape.end(), image_shape.begin(), image_shape.end());
  std::vector<float> pixels;
  pixels.reserve(element_count(all_shape));
  for (const auto& img : ds.images) {
    if (img.shape() != image_shape) fail(ErrorCode::shape, "dataset images differ in shape");
    pixels.insert(pixels.end(), img.data().begin(), img.data().end());
  }
  Tensor images(all_shape, std::move(pixels));
  Tensor labels({n});
  Tensor splits({n});
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<float>(ds.labels[i]);
    splits[i] = static_cast<float>(static_cast<int>(ds.splits[i]));
  }

  fjson header;
  header["format"] = "faultrange-dataset";
  header["id"] = ds.id;
  header["class_names"] = ds.class_names;
  header["image_shape"] = image_shape;
  std::uint64_t offset = 0;
  fjson t = fjson::array();
  for (auto [name, tensor] : {std::pair{"images", &images}, {"labels", &labels}, {"splits", &splits}}) {
    fjson d = describe(*tensor, offset);
    d["name"] = name;
    t.push_back(std::move(d));
  }
  header["tensors"] = std::move(t);
  return assemble(header, {&images, &labels, &splits});
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  const Parsed p = split_container(bytes);
  const fjson& h = p.header;
  if (get_string(h, "", "format") != "faultrange-dataset") {
    schema_error("format", "expected \"faultrange-dataset\"");
  }
  Dataset ds;
  ds.id = get_string(h, "", "id");
  ds.class_names = get_string_list(h, "", "class_names");
  ds.image_shape = get_uint_list(h, "", "image_shape");
  const fjson& tj = get_array(h, "", "tensors");
  if (tj.size() != 3) schema_error("tensors", "expected images, labels and splits");
  std::vector<TensorEntry> entries;
  const char* names[] = {"images", "labels", "splits"};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string path = "tensors[" + std::to_string(i) + "]";
    if (get_string(tj[i], path, "name") != names[i]) {
      schema_error(path + ".name", std::string("expected '") + names[i] + "'");
    }
    entries.push_back(read_entry(tj[i], path));
  }
  check_layout(entries, p.payload);
  const Tensor images = read_tensor(entries[0], p.payload);
  const Tensor labels = read_tensor(entries[1], p.payload);
  const Tensor splits = read_tensor(entries[2], p.payload);
  const std::size_t n = labels.size();
  Shape expected{n};
  expected.insert(expected.end(), ds.image_shape.begin(), ds.image_shape.end());
  if (images.shape() != expected || splits.size() != n) {
    schema_error("tensors", "image/label/split shapes are inconsistent");
  }
  const std::size_t plane = element_count(ds.image_shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(images.data().begin() + static_cast<std::ptrdiff_t>(i * plane),
                          images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
    ds.images.emplace_back(ds.image_shape, std::move(px));
    const float label = labels[i];
    if (!(label >= 0.0f) || label != std::floor(label) ||
        static_cast<std::size_t>(label) >= ds.class_names.size()) {
      schema_error("labels[" + std::to_string(i) + "]", "not a valid class index");
    }
    ds.labels.push_back(static_cast<std::size_t>(label));
    if (splits[i] != 0.0f && splits[i] != 1.0f) {
      schema_error("splits[" + std::to_string(i) + "]", "expected 0 (train) or 1 (test)");
    }
    ds.splits.push_back(splits[i] == 0.0f ? Split::train : Split::test);
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_binary(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_binary(path)); }

// ---------------------------------------------------------------------------
// Text files

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorCode::io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Bounds

std::string bounds_to_json(const BoundsFile& bounds) {
  fjson j;
  j["dataset_id"] = bounds.dataset_id;
  j["sample_count"] = bounds.sample_count;
  fjson entries = fjson::array();
  for (const auto& b : bounds.entries) {
    entries.push_back({{"protection_point", b.protection_point}, {"t_low", b.t_low}, {"t_up", b.t_up}});
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

BoundsFile bounds_from_json(std::string_view text) {
  const fjson j = parse_json<fjson>(text, "bounds");
  BoundsFile b;
  b.dataset_id = get_string(j, "", "dataset_id");
  b.sample_count = get_uint(j, "", "sample_count");
  const fjson& entries = get_array(j, "", "entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string path = "entries[" + std::to_string(i) + "]";
    Bound e;
    e.protection_point = get_uint(entries[i], path, "protection_point");
    e.t_low = get_float(entries[i], path, "t_low");
    e.t_up = get_float(entries[i], path, "t_up");
    if (!(e.t_low <= e.t_up)) schema_error(path + ".t_low", "t_low must not exceed t_up");
    b.entries.push_back(e);
  }
  return b;
}

void save_bounds(const BoundsFile& bounds, const std::filesystem::path& path) {
  write_text_file(path, bounds_to_json(bounds));
}

BoundsFile load_bounds(const std::filesystem::path& path) {
  return bounds_from_json(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string_view to_string(SiteSampling s) {
  return s == SiteSampling::element_uniform ? "element_uniform" : "layer_uniform";
}

json derived_to_json(const CampaignReport& r) {
  const DerivedMetrics d = derive_metrics(r.counts);
  json j;
  j["p_sdc"] = optional_number(d.p_sdc);
  j["p_due"] = optional_number(d.p_due);
  j["p_oob"] = optional_number(d.p_oob);
  j["sdc_ci95"] = d.sdc_ci ? json::array({d.sdc_ci->lo, d.sdc_ci->hi}) : json(nullptr);
  j["due_ci95"] = d.due_ci ? json::array({d.due_ci->lo, d.due_ci->hi}) : json(nullptr);
  j["p_sdc_given_oob"] = optional_number(d.p_sdc_given_oob);
  j["p_due_given_oob"] = optional_number(d.p_due_given_oob);
  j["p_cl_given_oob"] = optional_number(d.p_cl_given_oob);
  j["p_sdc_given_ib"] = optional_number(d.p_sdc_given_ib);
  j["p_due_given_ib"] = optional_number(d.p_due_given_ib);
  j["tp"] = optional_number(d.detector.tp);
  j["fp"] = optional_number(d.detector.fp);
  j["fn"] = optional_number(d.detector.fn);
  j["precision"] = optional_number(d.detector.precision);
  j["recall"] = optional_number(d.detector.recall);
  if (r.faults_per_run == 1) {
    const BitAttribution a = bit_attribution(r);
    j["p_msb_given_sdc"] = optional_number(a.msb_given_sdc);
    j["p_msb_given_due"] = optional_number(a.msb_given_due);
  } else {
    j["p_msb_given_sdc"] = nullptr;
    j["p_msb_given_due"] = nullptr;
  }
  return j;
}

std::array<std::uint64_t, 32> get_bit_array(const json& obj, const std::string& path, const char* key) {
  const auto list = get_uint_list(obj, path, key);
  if (list.size() != 32) schema_error(path + "." + key, "expected 32 entries");
  std::array<std::uint64_t, 32> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

}  // namespace

std::string report_to_json(const CampaignReport& r) {
  json cfg;
  cfg["policy"] = std::string(to_string(r.policy));
  cfg["kind"] = std::string(to_string(r.kind));
  cfg["k"] = r.faults_per_run;
  cfg["bits"] = format_bits(r.bits);
  cfg["epochs"] = r.epochs;
  cfg["seed"] = r.seed;
  cfg["include_bias"] = r.include_bias;
  cfg["sampling"] = std::string(to_string(r.sampling));
  cfg["model_digest"] = r.model_digest;
  cfg["dataset_id"] = r.dataset_id;
  cfg["images"] = r.images;
  cfg["class_names"] = r.class_names;
  cfg["protection_points"] = r.protection_points;

  const auto& c = r.counts;
  json counts;
  counts["run_count"] = c.runs;
  counts["correct_count"] = c.correct;
  counts["sdc_count"] = c.sdc;
  counts["due_count"] = c.due;
  counts["sdc_oob"] = c.sdc_oob;
  counts["sdc_ib"] = c.sdc_ib;
  counts["cl_oob"] = c.cl_oob;
  counts["cl_ib"] = c.cl_ib;
  counts["due_oob"] = c.due_oob;
  counts["due_ib"] = c.due_ib;
  counts["runs_by_bit"] = c.runs_by_bit;
  counts["sdc_by_bit"] = c.sdc_by_bit;
  counts["due_by_bit"] = c.due_by_bit;
  json conf = json::array();
  for (const auto& [pair, n] : c.confusions) {
    conf.push_back({{"true", pair.true_label}, {"predicted", pair.predicted}, {"count", n}});
  }
  counts["confusions"] = std::move(conf);
  counts["oob_runs_by_point"] = c.oob_runs_by_point;

  json j;
  j["format"] = "faultrange-report";
  j["config"] = std::move(cfg);
  j["counts"] = std::move(counts);
  j["derived"] = derived_to_json(r);
  return j.dump(2) + "\n";
}

CampaignReport report_from_json(std::string_view text) {
  const json j = parse_json<json>(text, "report");
  CampaignReport r;
  const json& cfg = field(j, "", "config");
  const std::string p = "config";
  const std::string policy = get_string(cfg, p, "policy");
  if (auto v = parse_policy(policy)) r.policy = *v; else schema_error("config.policy", "unknown policy '" + policy + "'");
  const std::string kind = get_string(cfg, p, "kind");
  if (auto v = parse_fault_kind(kind)) r.kind = *v; else schema_error("config.kind", "unknown fault kind '" + kind + "'");
  r.faults_per_run = get_uint(cfg, p, "k");
  try {
    r.bits = parse_bits(get_string(cfg, p, "bits"));
  } catch (const Error& e) {
    schema_error("config.bits", e.what());
  }
  r.epochs = get_uint(cfg, p, "epochs");
  r.seed = get_uint(cfg, p, "seed");
  r.include_bias = get_bool(cfg, p, "include_bias");
  const std::string sampling = get_string(cfg, p, "sampling");
  if (sampling == "element_uniform") r.sampling = SiteSampling::element_uniform;
  else if (sampling == "layer_uniform") r.sampling = SiteSampling::layer_uniform;
  else schema_error("config.sampling", "unknown sampling '" + sampling + "'");
  r.model_digest = get_string(cfg, p, "model_digest");
  r.dataset_id = get_string(cfg, p, "dataset_id");
  r.images = get_uint(cfg, p, "images");
  r.class_names = get_string_list(cfg, p, "class_names");
  r.protection_points = get_uint_list(cfg, p, "protection_points");

  const json& cj = field(j, "", "counts");
  const std::string cp = "counts";
  auto& c = r.counts;
  c.runs = get_uint(cj, cp, "run_count");
  c.correct = get_uint(cj, cp, "correct_count");
  c.sdc = get_uint(cj, cp, "sdc_count");
  c.due = get_uint(cj, cp, "due_count");
  c.sdc_oob = get_uint(cj, cp, "sdc_oob");
  c.sdc_ib = get_uint(cj, cp, "sdc_ib");
  c.cl_oob = get_uint(cj, cp, "cl_oob");
  c.cl_ib = get_uint(cj, cp, "cl_ib");
  c.due_oob = get_uint(cj, cp, "due_oob");
  c.due_ib = get_uint(cj, cp, "due_ib");
  c.runs_by_bit = get_bit_array(cj, cp, "runs_by_bit");
  c.sdc_by_bit = get_bit_array(cj, cp, "sdc_by_bit");
  c.due_by_bit = get_bit_array(cj, cp, "due_by_bit");
  const json& conf = get_array(cj, cp, "confusions");
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const std::string path = "counts.confusions[" + std::to_string(i) + "]";
    c.confusions[{get_uint(conf[i], path, "true"), get_uint(conf[i], path, "predicted")}] =
        get_uint(conf[i], path, "count");
  }
  const auto by_point = get_uint_list(cj, cp, "oob_runs_by_point");
  c.oob_runs_by_point.assign(by_point.begin(), by_point.end());

  if (c.correct + c.sdc + c.due != c.runs) {
    schema_error("counts.run_count", "correct + sdc + due does not equal the run count");
  }
  if (c.sdc_oob + c.sdc_ib != c.sdc || c.cl_oob + c.cl_ib != c.correct || c.due_oob + c.due_ib != c.due) {
    schema_error("counts", "joint counts do not partition the outcome counts");
  }
  return r;
}

void save_report(const CampaignReport& report, const std::filesystem::path& path) {
  write_text_file(path, report_to_json(report));
}

CampaignReport load_report(const std::filesystem::path& path) {
  return report_from_json(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Fault plans

std::string plans_to_json(const std::vector<FaultPlan>& plans) {
  json arr = json::array();
  for (const auto& plan : plans) {
    json pj;
    pj["kind"] = std::string(to_string(plan.kind));
    pj["master_seed"] = plan.master_seed;
    pj["epoch"] = plan.epoch;
    pj["image"] = plan.image ? json(*plan.image) : json(nullptr);
    json faults = json::array();
    for (const auto& f : plan.faults) {
      faults.push_back({{"layer", f.layer_index}, {"slot", f.slot}, {"element", f.element},
                        {"bit", f.bit.position()}});
    }
    pj["faults"] = std::move(faults);
    arr.push_back(std::move(pj));
  }
  json j;
  j["format"] = "faultrange-plans";
  j["plans"] = std::move(arr);
  return j.dump(2) + "\n";
}

std::vector<FaultPlan> plans_from_json(std::string_view text) {
  const json j = parse_json<json>(text, "plans");
  const json& arr = get_array(j, "", "plans");
  std::vector<FaultPlan> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "plans[" + std::to_string(i) + "]";
    FaultPlan plan;
    const std::string kind = get_string(arr[i], path, "kind");
    const auto k = parse_fault_kind(kind);
    if (!k) schema_error(path + ".kind", "unknown fault kind '" + kind + "'");
    plan.kind = *k;
    plan.master_seed = get_uint(arr[i], path, "master_seed");
    plan.epoch = get_uint(arr[i], path, "epoch");
    const json& image = field(arr[i], path, "image");
    if (!image.is_null()) plan.image = get_uint(arr[i], path, "image");
    const json& faults = get_array(arr[i], path, "faults");
    for (std::size_t f = 0; f < faults.size(); ++f) {
      const std::string fp = path + ".faults[" + std::to_string(f) + "]";
      const auto bit = get_uint(faults[f], fp, "bit");
      if (bit > 31) schema_error(fp + ".bit", "bit position outside [0, 31]");
      plan.faults.push_back({plan.kind, get_uint(faults[f], fp, "layer"), get_uint(faults[f], fp, "slot"),
                             get_uint(faults[f], fp, "element"), BitIndex(static_cast<int>(bit))});
    }
    out.push_back(std::move(plan));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster config and correct subsets

ClusterConfig clusters_from_json(std::string_view text) {
  const json j = parse_json<json>(text, "clusters");
  ClusterConfig c;
  const json& ranks = field(j, "", "clusters");
  if (!ranks.is_object()) schema_error("clusters", "expected an object of cluster -> rank");
  for (const auto& [name, rank] : ranks.items()) {
    if (!rank.is_number_integer()) schema_error("clusters." + name, "expected an integer rank");
    c.cluster_rank[name] = rank.get<int>();
  }
  const json& classes = field(j, "", "classes");
  if (!classes.is_object()) schema_error("classes", "expected an object of class -> cluster");
  for (const auto& [name, cluster] : classes.items()) {
    if (!cluster.is_string()) schema_error("classes." + name, "expected a cluster name");
    const auto cname = cluster.get<std::string>();
    if (!c.cluster_rank.contains(cname)) {
      schema_error("classes." + name, "cluster '" + cname + "' is not declared");
    }
    c.class_to_cluster[name] = cname;
  }
  return c;
}

std::string clusters_to_json(const ClusterConfig& clusters) {
  json j;
  j["clusters"] = clusters.cluster_rank;
  j["classes"] = clusters.class_to_cluster;
  return j.dump(2) + "\n";
}

ClusterConfig load_clusters(const std::filesystem::path& path) {
  return clusters_from_json(read_text_file(path));
}

std::string subset_to_json(const CorrectSubset& subset) {
  json j;
  j["format"] = "faultrange-subset";
  j["dataset_id"] = subset.dataset_id;
  j["split"] = subset.split;
  j["accuracy"] = subset.accuracy;
  j["indices"] = subset.indices;
  return j.dump(2) + "\n";
}

CorrectSubset subset_from_json(std::string_view text) {
  const json j = parse_json<json>(text, "subset");
  CorrectSubset s;
  s.dataset_id = get_string(j, "", "dataset_id");
  s.split = get_string(j, "", "split");
  const json& acc = field(j, "", "accuracy");
  if (!acc.is_number()) schema_error("accuracy", "expected a number");
  s.accuracy = acc.get<double>();
  s.indices = get_uint_list(j, "", "indices");
  return s;
}

}  // namespace faultrange
