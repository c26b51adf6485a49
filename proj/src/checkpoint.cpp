#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "neon/training.hpp"

namespace neon {
namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

template <typename Tensor>
void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
  if (!t.allFinite())
    throw nn::NumericalError("save_checkpoint: tensor '" + name + "' has non-finite entries");
  out += json(name).dump();
  out += ":{\"shape\":[";
  out += std::to_string(t.rows());
  if (t.cols() != 1 || Tensor::ColsAtCompileTime != 1) {
    out += ",";
    out += std::to_string(t.cols());
  }
  out += "],\"data\":[";
  bool first = true;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      if (!first) out += ',';
      first = false;
      append_number(out, t(i, j));
    }
  }
  out += "]}";
}

template <typename Tensor>
void read_tensor(const json& tensors, const std::string& name, Tensor& t) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("checkpoint: missing tensor '" + name + "'");
  const json& entry = *it;
  if (!entry.is_object() || !entry.contains("shape") || !entry.contains("data") ||
      !entry.at("data").is_array())
    throw ValidationError("checkpoint: tensor '" + name + "' is malformed");
  std::vector<Eigen::Index> shape;
  try {
    shape = entry.at("shape").get<std::vector<Eigen::Index>>();
  } catch (const json::exception&) {
    throw ValidationError("checkpoint: tensor '" + name + "' has a malformed shape");
  }
  const Eigen::Index rows = t.rows();
  const Eigen::Index cols = t.cols();
  const bool is_vector = Tensor::ColsAtCompileTime == 1;
  const bool shape_ok = is_vector ? (shape.size() == 1 && shape[0] == rows)
                                  : (shape.size() == 2 && shape[0] == rows && shape[1] == cols);
  if (!shape_ok)
    throw ValidationError("checkpoint: tensor '" + name + "' has shape " +
                          json(shape).dump() + ", expected " +
                          (is_vector ? json({rows}) : json({rows, cols})).dump());
  const json& data = entry.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ValidationError("checkpoint: tensor '" + name + "' holds " +
                          std::to_string(data.size()) + " values, expected " +
                          std::to_string(rows * cols));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const json& v = data[k++];
      if (!v.is_number())
        throw ValidationError("checkpoint: tensor '" + name + "' has a non-numeric entry");
      t(i, j) = v.get<double>();
    }
  }
}

}  // namespace

std::string checkpoint_to_string(const NeonModel& model) {
  std::string out = "{\"format_version\":" + std::to_string(kCheckpointFormatVersion) +
                    ",\"model_config\":" + model_config_to_json(model.config()).dump() +
                    ",\"tensors\":{";
  bool first = true;
  auto emit = [&](const std::string& name, const auto& t) {
    if (!first) out += ',';
    first = false;
    append_tensor(out, name, t);
  };
  for_each_trainable(model.params(), emit);
  for_each_buffer(model.params(), emit);
  out += "}}\n";
  return out;
}

NeonModel checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version"))
    throw ValidationError("checkpoint: missing format_version");
  if (!doc.at("format_version").is_number_integer() ||
      doc.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw ValidationError("checkpoint: unsupported format_version " +
                          doc.at("format_version").dump() + " (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  if (!doc.contains("model_config") || !doc.contains("tensors") || !doc.at("tensors").is_object())
    throw ValidationError("checkpoint: missing model_config or tensors");

  const ModelConfig config = model_config_from_json(doc.at("model_config"));
  NeonParams params = zero_params(config);
  const json& tensors = doc.at("tensors");
  std::size_t expected = 0;
  auto load = [&](const std::string& name, auto& t) {
    read_tensor(tensors, name, t);
    ++expected;
  };
  for_each_trainable(params, load);
  for_each_buffer(params, load);
  if (tensors.size() != expected)
    throw ValidationError("checkpoint: " + std::to_string(tensors.size() - expected) +
                          " unexpected tensor(s)");
  return NeonModel(config, std::move(params));
}

void save_checkpoint(const NeonModel& model, const std::filesystem::path& path) {
  const std::string text = checkpoint_to_string(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

NeonModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace neon
