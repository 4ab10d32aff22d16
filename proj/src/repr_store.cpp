#include "msma/repr_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace msma {

static_assert(std::endian::native == std::endian::little, "tensor IO assumes a little-endian host");

namespace fs = std::filesystem;

std::uint64_t TensorFile::element_count() const {
  std::uint64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::io, name_ + ": unexpected EOF at offset " + std::to_string(bytes_.size()) +
                              " (needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                              ")");
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::uint8_t* here() const { return bytes_.data() + pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_shape(const TensorFile& t, const std::string& name) {
  if (t.shape.empty() || t.shape.size() > kMaxTensorRank)
    invalid(name + ": rank " + std::to_string(t.shape.size()) + " outside [1, 4]");
  for (auto s : t.shape)
    if (s == 0) invalid(name + ": shape entries must be > 0");
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const TensorFile& t) {
  check_shape(t, "tensor");
  if (t.data.size() != t.element_count())
    invalid("tensor: payload size mismatch (" + std::to_string(t.data.size()) + " values for shape product " +
            std::to_string(t.element_count()) + ")");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * t.shape.size() + 4 * t.data.size());
  out.insert(out.end(), {'M', 'S', 'M', 'A'});
  put<std::uint16_t>(out, t.version);
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto s : t.shape) put<std::uint64_t>(out, s);
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
  out.insert(out.end(), p, p + 4 * t.data.size());
  return out;
}

TensorFile decode_tensor(std::span<const std::uint8_t> bytes, const std::string& name) {
  Reader r(bytes, name);
  r.need(4);
  if (std::memcmp(r.here(), "MSMA", 4) != 0) fail(ErrorKind::io, name + ": bad magic");
  r.get<std::uint32_t>();
  TensorFile t;
  t.version = r.get<std::uint16_t>();
  if (t.version != kTensorVersion) fail(ErrorKind::io, name + ": unsupported version " + std::to_string(t.version));
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != kDtypeF32) fail(ErrorKind::io, name + ": unsupported dtype " + std::to_string(dtype));
  const auto rank = r.get<std::uint8_t>();
  if (rank == 0 || rank > kMaxTensorRank) fail(ErrorKind::io, name + ": rank " + std::to_string(rank) + " outside [1, 4]");
  t.shape.resize(rank);
  for (auto& s : t.shape) {
    s = r.get<std::uint64_t>();
    if (s == 0) fail(ErrorKind::io, name + ": zero-length dimension");
  }
  const std::uint64_t count = t.element_count();
  const std::uint64_t expected = count * 4;
  if (r.remaining() < expected) {
    fail(ErrorKind::io, name + ": unexpected EOF at offset " + std::to_string(bytes.size()) + " (payload needs " +
                            std::to_string(expected) + " bytes from offset " + std::to_string(r.pos()) + ")");
  }
  if (r.remaining() != expected) {
    fail(ErrorKind::io, name + ": payload size mismatch (expected " + std::to_string(expected) + " bytes, found " +
                            std::to_string(r.remaining()) + " at offset " + std::to_string(r.pos()) + ")");
  }
  t.data.resize(count);
  std::memcpy(t.data.data(), r.here(), expected);
  return t;
}

void write_tensor(const fs::path& path, const TensorFile& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

TensorFile read_tensor(const fs::path& path) {
  const auto bytes = slurp(path);
  return decode_tensor(bytes, path.filename().string());
}

std::string to_string(Scale s) {
  switch (s) {
    case Scale::local: return "local";
    case Scale::intermediate: return "intermediate";
    case Scale::global: return "global";
    default: return "unspecified";
  }
}

Scale scale_from_string(const std::string& s) {
  if (s == "local") return Scale::local;
  if (s == "intermediate" || s == "mid") return Scale::intermediate;
  if (s == "global") return Scale::global;
  if (s.empty() || s == "unspecified") return Scale::unspecified;
  invalid("unknown scale '" + s + "'");
}

std::vector<Matrix> AttentionTensor::head_matrices() const {
  std::vector<Matrix> out(heads, Matrix::Zero(static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq)));
  const double inv = 1.0 / static_cast<double>(samples);
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < seq; ++j)
          out[h](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += inv * at(s, h, i, j);
  return out;
}

AttentionTensor attention_from_heads(const std::vector<Matrix>& heads) {
  require(!heads.empty(), "attention: no heads");
  AttentionTensor a;
  a.heads = heads.size();
  a.seq = static_cast<std::size_t>(heads[0].rows());
  a.data.resize(a.heads * a.seq * a.seq);
  for (std::size_t h = 0; h < a.heads; ++h) {
    require(heads[h].rows() == heads[h].cols() && static_cast<std::size_t>(heads[h].rows()) == a.seq,
            "attention: head matrices must be seq x seq");
    for (std::size_t i = 0; i < a.seq; ++i)
      for (std::size_t j = 0; j < a.seq; ++j)
        a.data[(h * a.seq + i) * a.seq + j] =
            static_cast<float>(heads[h](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  }
  return a;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json tasks_json = nlohmann::json::array();
  for (const auto& t : tasks)
    tasks_json.push_back({{"name", t.name}, {"n_classes", t.n_classes}, {"scale", to_string(t.scale)}});
  return {{"model", model},
          {"n_layers", n_layers},
          {"hidden_dim", hidden_dim},
          {"n_heads", n_heads},
          {"seq_len", seq_len},
          {"n_samples", n_samples},
          {"tasks", tasks_json},
          {"attention_mode", attention_mode},
          {"provenance", provenance}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) invalid(std::string("manifest: missing key '") + key + "'");
    return j.at(key);
  };
  try {
    m.model = j.value("model", std::string("unknown"));
    m.n_layers = need("n_layers").get<std::size_t>();
    m.hidden_dim = need("hidden_dim").get<std::size_t>();
    m.n_samples = need("n_samples").get<std::size_t>();
    m.n_heads = j.value("n_heads", std::size_t{0});
    m.seq_len = j.value("seq_len", std::size_t{0});
    m.attention_mode = j.value("attention_mode", std::string("none"));
    if (j.contains("tasks")) {
      for (const auto& t : j.at("tasks")) {
        TaskSpec spec;
        if (t.is_string()) {
          spec.name = t.get<std::string>();
        } else {
          spec.name = t.at("name").get<std::string>();
          spec.n_classes = t.value("n_classes", 0);
          spec.scale = scale_from_string(t.value("scale", std::string("unspecified")));
        }
        m.tasks.push_back(spec);
      }
    }
    if (j.contains("provenance")) m.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("manifest: ") + e.what());
  }
  if (m.attention_mode != "none" && m.attention_mode != "mean" && m.attention_mode != "per_sample")
    invalid("manifest: attention_mode must be none, mean or per_sample");
  return m;
}

Matrix LayerStack::layer(std::size_t layer) const {
  require(layer >= 1 && layer <= hidden.size(), "layer index " + std::to_string(layer) + " out of range");
  return hidden[layer - 1].cast<double>();
}

std::optional<std::size_t> LayerStack::task_index(const std::string& name) const {
  for (std::size_t i = 0; i < manifest.tasks.size(); ++i)
    if (manifest.tasks[i].name == name) return i;
  return std::nullopt;
}

std::string LayerStack::sample_id(std::size_t i) const {
  if (i < sample_ids.size()) return sample_ids[i];
  return std::to_string(i);
}

void LayerStack::validate() const {
  const auto& m = manifest;
  if (hidden.empty()) invalid("n_layers: stack has no layers");
  if (m.n_layers != hidden.size())
    invalid("n_layers: manifest says " + std::to_string(m.n_layers) + " but stack has " +
            std::to_string(hidden.size()) + " layers");
  const auto n = hidden[0].rows();
  const auto d = hidden[0].cols();
  if (n == 0 || d == 0) invalid("hidden: empty layer matrix");
  if (static_cast<std::size_t>(n) != m.n_samples)
    invalid("n_samples: manifest says " + std::to_string(m.n_samples) + " but layer 1 has " + std::to_string(n));
  if (static_cast<std::size_t>(d) != m.hidden_dim)
    invalid("hidden_dim: manifest says " + std::to_string(m.hidden_dim) + " but layer 1 has " + std::to_string(d));
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l].rows() != n || hidden[l].cols() != d)
      invalid("hidden: layer " + std::to_string(l + 1) + " shape differs from layer 1");
    if (!hidden[l].allFinite()) invalid("hidden: layer " + std::to_string(l + 1) + " has non-finite entries");
  }

  if (attention.empty()) {
    if (m.attention_mode != "none") invalid("attention_mode: '" + m.attention_mode + "' but no attention tensors");
  } else {
    if (attention.size() != hidden.size())
      invalid("attention: expected " + std::to_string(hidden.size()) + " tensors, found " +
              std::to_string(attention.size()));
    const bool per_sample = m.attention_mode == "per_sample";
    if (m.attention_mode == "none") invalid("attention_mode: 'none' but attention tensors present");
    for (std::size_t l = 0; l < attention.size(); ++l) {
      const auto& a = attention[l];
      const std::string where = "attention layer " + std::to_string(l + 1);
      if (a.heads != m.n_heads) invalid(where + ": n_heads mismatch with manifest");
      if (a.seq != m.seq_len) invalid(where + ": seq_len mismatch with manifest");
      if (per_sample ? a.samples != m.n_samples : a.samples != 1)
        invalid(where + ": sample dimension does not match attention_mode");
      if (a.data.size() != a.samples * a.heads * a.seq * a.seq) invalid(where + ": payload size mismatch");
      for (std::size_t s = 0; s < a.samples; ++s)
        for (std::size_t h = 0; h < a.heads; ++h)
          for (std::size_t i = 0; i < a.seq; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < a.seq; ++j) {
              const float v = a.at(s, h, i, j);
              if (!(v >= 0.0f)) invalid(where + ": negative or non-finite attention weight");
              sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-5) {
              std::ostringstream os;
              os << where << ": attention not row-stochastic (head " << h << ", row " << i << " sums to " << sum
                 << ")";
              invalid(os.str());
            }
          }
    }
  }

  if (labels.size() != m.tasks.size() && !(labels.empty() && m.tasks.empty()))
    invalid("tasks: manifest lists " + std::to_string(m.tasks.size()) + " tasks but " +
            std::to_string(labels.size()) + " label columns are present");
  if (!labels.empty() && sample_ids.size() != static_cast<std::size_t>(n))
    invalid("labels: sample_id count differs from n_samples");
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const auto& col = labels[t];
    const auto& spec = m.tasks[t];
    if (col.size() != static_cast<std::size_t>(n)) invalid("labels: column '" + spec.name + "' has wrong length");
    for (int v : col)
      if (v < 0 || (spec.n_classes > 0 && v >= spec.n_classes))
        invalid("labels: column '" + spec.name + "' value " + std::to_string(v) + " outside [0, " +
                std::to_string(spec.n_classes) + ")");
  }
}

LayerStack LayerStack::subset(const std::vector<std::size_t>& rows) const {
  LayerStack out;
  out.manifest = manifest;
  out.manifest.n_samples = rows.size();
  for (const auto& h : hidden) {
    HiddenMatrix sub(static_cast<Eigen::Index>(rows.size()), h.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = h.row(static_cast<Eigen::Index>(rows[r]));
    out.hidden.push_back(std::move(sub));
  }
  if (manifest.attention_mode == "per_sample") {
    for (const auto& a : attention) {
      AttentionTensor s = a;
      s.samples = rows.size();
      const std::size_t block = a.heads * a.seq * a.seq;
      s.data.assign(rows.size() * block, 0.0f);
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * block), block,
                    s.data.begin() + static_cast<std::ptrdiff_t>(r * block));
      out.attention.push_back(std::move(s));
    }
  } else {
    out.attention = attention;
  }
  if (!sample_ids.empty())
    for (auto r : rows) out.sample_ids.push_back(sample_ids[r]);
  for (const auto& col : labels) {
    std::vector<int> c;
    c.reserve(rows.size());
    for (auto r : rows) c.push_back(col[r]);
    out.labels.push_back(std::move(c));
  }
  return out;
}

bool LayerStack::operator==(const LayerStack& other) const {
  if (manifest.to_json() != other.manifest.to_json()) return false;
  if (hidden.size() != other.hidden.size()) return false;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const auto& a = hidden[l];
    const auto& b = other.hidden[l];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  if (attention.size() != other.attention.size()) return false;
  for (std::size_t l = 0; l < attention.size(); ++l) {
    const auto& a = attention[l];
    const auto& b = other.attention[l];
    if (a.samples != b.samples || a.heads != b.heads || a.seq != b.seq || a.data.size() != b.data.size()) return false;
    if (std::memcmp(a.data.data(), b.data.data(), sizeof(float) * a.data.size()) != 0) return false;
  }
  return sample_ids == other.sample_ids && labels == other.labels;
}

namespace {

fs::path layer_file(const fs::path& dir, std::size_t l) { return dir / ("layer_" + std::to_string(l) + ".msma"); }
fs::path attn_file(const fs::path& dir, std::size_t l) { return dir / ("attn_" + std::to_string(l) + ".msma"); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

fs::path write_stack(const LayerStack& stack, const fs::path& dir) {
  stack.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

  for (std::size_t l = 0; l < stack.hidden.size(); ++l) {
    const auto& h = stack.hidden[l];
    TensorFile t;
    t.shape = {static_cast<std::uint64_t>(h.rows()), static_cast<std::uint64_t>(h.cols())};
    t.data.assign(h.data(), h.data() + h.size());
    write_tensor(layer_file(dir, l + 1), t);
  }
  for (std::size_t l = 0; l < stack.attention.size(); ++l) {
    const auto& a = stack.attention[l];
    TensorFile t;
    if (stack.manifest.attention_mode == "per_sample")
      t.shape = {a.samples, a.heads, a.seq, a.seq};
    else
      t.shape = {a.heads, a.seq, a.seq};
    t.data = a.data;
    write_tensor(attn_file(dir, l + 1), t);
  }
  if (stack.has_labels()) {
    std::ofstream out(dir / "labels.csv", std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write labels.csv");
    out << "sample_id";
    for (const auto& t : stack.manifest.tasks) out << ',' << t.name;
    out << '\n';
    for (std::size_t i = 0; i < stack.n_samples(); ++i) {
      out << stack.sample_ids[i];
      for (const auto& col : stack.labels) out << ',' << col[i];
      out << '\n';
    }
  }
  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + manifest_path.string());
  out << stack.manifest.to_json().dump(2) << '\n';
  return manifest_path;
}

LayerStack read_stack(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) fail(ErrorKind::io, "no manifest.json in " + dir.string());
  LayerStack stack;
  {
    std::ifstream in(manifest_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      invalid(std::string("manifest.json: ") + e.what());
    }
    stack.manifest = Manifest::from_json(j);
  }
  const auto& m = stack.manifest;
  if (m.n_layers == 0) invalid("n_layers: must be >= 1");

  for (std::size_t l = 1; l <= m.n_layers; ++l) {
    const auto path = layer_file(dir, l);
    if (!fs::exists(path))
      invalid("n_layers: manifest says " + std::to_string(m.n_layers) + " but " + path.filename().string() +
              " is missing");
    const auto t = read_tensor(path);
    if (t.shape.size() != 2) invalid(path.filename().string() + ": expected rank 2");
    if (t.shape[0] != m.n_samples || t.shape[1] != m.hidden_dim)
      invalid(path.filename().string() + ": shape mismatch with manifest");
    HiddenMatrix h(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    std::memcpy(h.data(), t.data.data(), sizeof(float) * t.data.size());
    stack.hidden.push_back(std::move(h));
  }
  if (fs::exists(layer_file(dir, m.n_layers + 1)))
    invalid("n_layers: found more layer files than the manifest's " + std::to_string(m.n_layers));

  if (m.attention_mode != "none") {
    for (std::size_t l = 1; l <= m.n_layers; ++l) {
      const auto path = attn_file(dir, l);
      if (!fs::exists(path)) invalid("attention_mode: " + path.filename().string() + " is missing");
      auto t = read_tensor(path);
      AttentionTensor a;
      if (m.attention_mode == "per_sample") {
        if (t.shape.size() != 4) invalid(path.filename().string() + ": per_sample attention must be rank 4");
        a.samples = t.shape[0];
        a.heads = t.shape[1];
        a.seq = t.shape[2];
        if (t.shape[3] != a.seq) invalid(path.filename().string() + ": attention must be square");
      } else {
        if (t.shape.size() != 3) invalid(path.filename().string() + ": mean attention must be rank 3");
        a.heads = t.shape[0];
        a.seq = t.shape[1];
        if (t.shape[2] != a.seq) invalid(path.filename().string() + ": attention must be square");
      }
      a.data = std::move(t.data);
      stack.attention.push_back(std::move(a));
    }
  }

  const fs::path labels_path = dir / "labels.csv";
  if (fs::exists(labels_path)) {
    std::ifstream in(labels_path);
    std::string line;
    if (!std::getline(in, line)) invalid("labels.csv: empty file");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "sample_id") invalid("labels.csv: header must start with sample_id");
    std::vector<std::size_t> col_of_task(m.tasks.size(), 0);
    for (std::size_t t = 0; t < m.tasks.size(); ++t) {
      auto it = std::find(header.begin() + 1, header.end(), m.tasks[t].name);
      if (it == header.end()) invalid("labels.csv: missing column for task '" + m.tasks[t].name + "'");
      col_of_task[t] = static_cast<std::size_t>(it - header.begin());
    }
    stack.labels.assign(m.tasks.size(), {});
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size())
        invalid("labels.csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                " cells, expected " + std::to_string(header.size()));
      stack.sample_ids.push_back(cells[0]);
      for (std::size_t t = 0; t < m.tasks.size(); ++t) {
        try {
          std::size_t used = 0;
          const int v = std::stoi(cells[col_of_task[t]], &used);
          if (used != cells[col_of_task[t]].size()) throw std::invalid_argument("trailing");
          stack.labels[t].push_back(v);
        } catch (const std::exception&) {
          invalid("labels.csv: line " + std::to_string(line_no) + " has a non-integer label");
        }
      }
    }
    // Infer cardinalities that the manifest left open.
    for (std::size_t t = 0; t < m.tasks.size(); ++t)
      if (stack.manifest.tasks[t].n_classes == 0 && !stack.labels[t].empty())
        stack.manifest.tasks[t].n_classes = *std::max_element(stack.labels[t].begin(), stack.labels[t].end()) + 1;
  } else if (!m.tasks.empty()) {
    invalid("tasks: manifest lists tasks but labels.csv is missing");
  }

  stack.validate();
  return stack;
}

}  // namespace msma
