#include "gmot/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace gmot::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, const std::filesystem::path& path) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError(path.string() + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

PointCloud assemble(std::vector<std::vector<double>>&& rows, Index d,
                    const std::filesystem::path& path) {
  if (rows.empty()) throw IoError(path.string() + ": no points");
  const auto n = static_cast<Index>(rows.size());
  PointCloud cloud{Matrix(n, d), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Index k = 0; k < d; ++k) cloud.points(i, k) = r[static_cast<std::size_t>(k)];
    cloud.weights(i) = r[static_cast<std::size_t>(d)];
  }
  return cloud;
}

}  // namespace

void write_points_csv(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ostringstream os;
  for (Index k = 0; k < cloud.dim(); ++k) os << 'x' << k << ',';
  os << "weight\n";
  for (Index i = 0; i < cloud.size(); ++i) {
    for (Index k = 0; k < cloud.dim(); ++k) os << format_double(cloud.points(i, k)) << ',';
    os << format_double(cloud.weights(i)) << '\n';
  }
  write_text(path, os.str());
}

PointCloud read_points_csv(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() < 2 || header.back() != "weight") {
    throw IoError(path.string() + ": header must be x0,...,x{d-1},weight");
  }
  const auto d = static_cast<Index>(header.size() - 1);
  for (Index k = 0; k < d; ++k) {
    if (header[static_cast<std::size_t>(k)] != "x" + std::to_string(k)) {
      throw IoError(path.string() + ": unexpected column '" +
                    std::string(header[static_cast<std::size_t>(k)]) + "'");
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line, ',');
    if (static_cast<Index>(fields.size()) != d + 1) {
      throw IoError(path.string() + ": row " + std::to_string(rows.size() + 1) +
                    " has the wrong number of fields");
    }
    std::vector<double> r;
    r.reserve(fields.size());
    for (auto f : fields) r.push_back(parse_double(f, path));
    rows.push_back(std::move(r));
  }
  return assemble(std::move(rows), d, path);
}

void write_points_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  static const char* xyz[] = {"x", "y", "z"};
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
  for (Index k = 0; k < cloud.dim(); ++k) {
    if (cloud.dim() == 3) {
      os << "property double " << xyz[k] << '\n';
    } else {
      os << "property double x" << k << '\n';
    }
  }
  os << "property double weight\nend_header\n";
  for (Index i = 0; i < cloud.size(); ++i) {
    for (Index k = 0; k < cloud.dim(); ++k) os << format_double(cloud.points(i, k)) << ' ';
    os << format_double(cloud.weights(i)) << '\n';
  }
  write_text(path, os.str());
}

PointCloud read_points_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw IoError(path.string() + ": not a PLY file");
  Index n = -1;
  Index props = 0;
  bool has_weight = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format" && line.find("ascii") == std::string::npos) {
      throw IoError(path.string() + ": only ASCII PLY is supported");
    } else if (word == "element") {
      std::string kind;
      ls >> kind >> n;
      if (kind != "vertex") throw IoError(path.string() + ": expected a vertex element");
    } else if (word == "property") {
      std::string type;
      std::string name;
      ls >> type >> name;
      if (name == "weight") {
        has_weight = true;
      } else {
        ++props;
      }
    }
  }
  if (n < 1 || props < 1) throw IoError(path.string() + ": malformed PLY header");
  const Index fields = props + (has_weight ? 1 : 0);
  std::vector<std::vector<double>> rows;
  while (static_cast<Index>(rows.size()) < n && std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> r;
    for (auto f : split(line, ' ')) {
      if (!f.empty() && f != "\r") r.push_back(parse_double(f, path));
    }
    if (static_cast<Index>(r.size()) != fields) throw IoError(path.string() + ": bad vertex row");
    if (!has_weight) r.push_back(1.0 / static_cast<double>(n));
    rows.push_back(std::move(r));
  }
  if (static_cast<Index>(rows.size()) != n) throw IoError(path.string() + ": truncated vertex list");
  return assemble(std::move(rows), props, path);
}

std::string checkpoint_to_json(const nn::MlpMap& map, const CheckpointMeta& meta) {
  json doc;
  doc["format"] = "gmot-mlp-v1";
  doc["name"] = meta.name;
  doc["layer_dims"] = map.layer_dims();
  doc["residual"] = map.residual();
  doc["seed"] = meta.seed;
  doc["step"] = meta.step;
  json layers = json::array();
  for (Index l = 0; l < map.num_layers(); ++l) {
    const auto w = map.weight(l);
    json rows = json::array();
    for (Index i = 0; i < w.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(w.cols()));
      for (Index j = 0; j < w.cols(); ++j) row[static_cast<std::size_t>(j)] = w(i, j);
      rows.push_back(std::move(row));
    }
    const auto b = map.bias(l);
    layers.push_back({{"weight", std::move(rows)},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    const auto dims = doc.at("layer_dims").get<std::vector<Index>>();
    nn::MlpMap map(dims, doc.at("residual").get<bool>());
    const auto& layers = doc.at("layers");
    if (static_cast<Index>(layers.size()) != map.num_layers()) {
      throw IoError("checkpoint layer count does not match layer_dims");
    }
    for (Index l = 0; l < map.num_layers(); ++l) {
      const auto& layer = layers[static_cast<std::size_t>(l)];
      auto w = map.weight(l);
      const auto rows = layer.at("weight").get<std::vector<std::vector<double>>>();
      const auto bias = layer.at("bias").get<std::vector<double>>();
      if (static_cast<Index>(rows.size()) != w.rows() ||
          static_cast<Index>(bias.size()) != w.rows()) {
        throw IoError("checkpoint layer has the wrong shape");
      }
      for (Index i = 0; i < w.rows(); ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        if (static_cast<Index>(row.size()) != w.cols()) throw IoError("checkpoint row has the wrong width");
        for (Index j = 0; j < w.cols(); ++j) w(i, j) = row[static_cast<std::size_t>(j)];
      }
      auto b = map.bias(l);
      for (Index i = 0; i < b.size(); ++i) b(i) = bias[static_cast<std::size_t>(i)];
    }
    map.touch();
    CheckpointMeta meta;
    meta.seed = doc.value("seed", std::uint64_t{0});
    meta.step = doc.value("step", std::int64_t{0});
    meta.name = doc.value("name", std::string());
    return {std::move(map), std::move(meta)};
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const nn::MlpMap& map,
                     const CheckpointMeta& meta) {
  write_text(path, checkpoint_to_json(map, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_text(path));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace gmot::io
