#include "msma/attention_profile.hpp"
#include "msma/repr_store.hpp"
#include "msma/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace msma;
using testing::TempDir;

namespace {

// Two-layer stack, d=4, n=3, with mean attention and one task.
LayerStack tiny_stack() {
  LayerStack s;
  s.manifest.model = "tiny";
  s.manifest.n_layers = 2;
  s.manifest.hidden_dim = 4;
  s.manifest.n_heads = 1;
  s.manifest.seq_len = 3;
  s.manifest.n_samples = 3;
  s.manifest.attention_mode = "mean";
  s.manifest.tasks = {{"pos", 2, Scale::local}};
  for (int l = 0; l < 2; ++l) {
    HiddenMatrix h(3, 4);
    for (int i = 0; i < 12; ++i) h.data()[i] = 0.1f * static_cast<float>(i + 1) * (l ? -1.0f : 1.0f) + 1e-7f * i;
    s.hidden.push_back(h);
    Matrix A = Matrix::Constant(3, 3, 1.0 / 3.0);
    s.attention.push_back(attention_from_heads({A}));
  }
  s.sample_ids = {"a", "b", "c"};
  s.labels = {{0, 1, 1}};
  return s;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("tensor encode/decode round trip") {
  TensorFile t;
  t.shape = {2, 3};
  t.data = {1, 2, 3, 4, 5, -6.5f};
  const auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 4 + 2 + 1 + 1 + 2 * 8 + 6 * 4);
  CHECK(std::memcmp(bytes.data(), "MSMA", 4) == 0);
  const auto back = decode_tensor(bytes, "t");
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);
}

TEST_CASE("tensor decoding errors") {
  TensorFile t;
  t.shape = {2, 3};
  t.data.assign(6, 1.0f);
  auto bytes = encode_tensor(t);

  SUBCASE("20-byte payload for shape [2,3]") {
    auto cut = bytes;
    cut.resize(cut.size() - 4);
    const auto msg = error_of([&] { decode_tensor(cut, "x.msma"); });
    CHECK(msg.find("payload") != std::string::npos);
    CHECK(msg.find("unexpected EOF") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }
  SUBCASE("trailing bytes") {
    auto longer = bytes;
    longer.push_back(0);
    CHECK(error_of([&] { decode_tensor(longer, "x"); }).find("payload size mismatch") != std::string::npos);
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 10);
    CHECK(error_of([&] { decode_tensor(cut, "x"); }).find("unexpected EOF") != std::string::npos);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK(error_of([&] { decode_tensor(bad, "x"); }).find("bad magic") != std::string::npos);
  }
  SUBCASE("bad version") {
    auto bad = bytes;
    bad[4] = 9;
    CHECK(error_of([&] { decode_tensor(bad, "x"); }).find("version") != std::string::npos);
  }
  SUBCASE("rank above 4") {
    TensorFile big;
    big.shape = {1, 1, 1, 1, 1};
    big.data = {1};
    CHECK_THROWS_AS(encode_tensor(big), Error);
  }
  SUBCASE("encode with wrong payload") {
    TensorFile w;
    w.shape = {2, 3};
    w.data.assign(5, 0.0f);
    CHECK(error_of([&] { encode_tensor(w); }).find("payload size mismatch") != std::string::npos);
  }
}

TEST_CASE("write_stack/read_stack round trip is bit exact") {
  TempDir dir("roundtrip");
  const LayerStack s = tiny_stack();
  const auto manifest = write_stack(s, dir.path());
  CHECK(manifest.filename() == "manifest.json");
  const LayerStack back = read_stack(dir.path());
  CHECK(back == s);
  for (std::size_t l = 0; l < s.hidden.size(); ++l)
    CHECK(std::memcmp(back.hidden[l].data(), s.hidden[l].data(), sizeof(float) * 12) == 0);
}

TEST_CASE("round trip over random small stacks") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    LayerStack s;
    const std::size_t L = 1 + rng.below(4), n = 2 + rng.below(6), d = 1 + rng.below(5), seq = 1 + rng.below(5);
    const bool per_sample = rng.below(2) == 1;
    s.manifest.n_layers = L;
    s.manifest.hidden_dim = d;
    s.manifest.n_samples = n;
    s.manifest.n_heads = 2;
    s.manifest.seq_len = seq;
    s.manifest.attention_mode = per_sample ? "per_sample" : "mean";
    s.manifest.tasks = {{"t", 3, Scale::global}};
    for (std::size_t l = 0; l < L; ++l) {
      s.hidden.push_back(rng.normal_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)).cast<float>());
      AttentionTensor a;
      a.samples = per_sample ? n : 1;
      a.heads = 2;
      a.seq = seq;
      for (std::size_t r = 0; r < a.samples * a.heads * seq; ++r) {
        std::vector<float> row(seq);
        float sum = 0.0f;
        for (auto& v : row) sum += (v = static_cast<float>(rng.uniform(0.1, 1.0)));
        for (auto& v : row) v /= sum;
        a.data.insert(a.data.end(), row.begin(), row.end());
      }
      s.attention.push_back(a);
    }
    s.labels = {std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      s.labels[0][i] = static_cast<int>(rng.below(3));
      s.sample_ids.push_back("s" + std::to_string(i));
    }
    TempDir dir("rt" + std::to_string(seed));
    write_stack(s, dir.path());
    CHECK(read_stack(dir.path()) == s);
  }
}

TEST_CASE("read_stack validation") {
  TempDir dir("validate");
  write_stack(tiny_stack(), dir.path());

  SUBCASE("manifest claims more layers than files") {
    auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    j["n_layers"] = 3;
    std::ofstream(dir / "manifest.json") << j.dump();
    CHECK(error_of([&] { read_stack(dir.path()); }).find("n_layers") != std::string::npos);
  }
  SUBCASE("attention row sums to 0.8") {
    TensorFile t = read_tensor(dir / "attn_1.msma");
    t.data[0] = static_cast<float>(1.0 / 3.0 - 0.2);
    write_tensor(dir / "attn_1.msma", t);
    CHECK(error_of([&] { read_stack(dir.path()); }).find("attention not row-stochastic") != std::string::npos);
  }
  SUBCASE("truncated layer file") {
    auto b = slurp(dir / "layer_2.msma");
    b.resize(b.size() - 7);
    spit(dir / "layer_2.msma", b);
    const auto msg = error_of([&] { read_stack(dir.path()); });
    CHECK(msg.find("unexpected EOF") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }
  SUBCASE("layer shape mismatch") {
    TensorFile t;
    t.shape = {3, 5};
    t.data.assign(15, 0.0f);
    write_tensor(dir / "layer_2.msma", t);
    CHECK_THROWS_AS(read_stack(dir.path()), Error);
  }
  SUBCASE("label outside task cardinality") {
    std::ofstream(dir / "labels.csv") << "sample_id,pos\na,0\nb,1\nc,2\n";
    CHECK(error_of([&] { read_stack(dir.path()); }).find("labels") != std::string::npos);
  }
  SUBCASE("missing manifest key") {
    auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    j.erase("hidden_dim");
    std::ofstream(dir / "manifest.json") << j.dump();
    CHECK(error_of([&] { read_stack(dir.path()); }).find("hidden_dim") != std::string::npos);
  }
  SUBCASE("no manifest") {
    std::filesystem::remove(dir / "manifest.json");
    try {
      read_stack(dir.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}

TEST_CASE("write_stack refuses invalid stacks") {
  TempDir dir("invalid");
  LayerStack s = tiny_stack();
  s.hidden[1] = HiddenMatrix::Zero(2, 4);
  CHECK_THROWS_AS(write_stack(s, dir.path()), Error);
  s = tiny_stack();
  s.hidden[0](0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK(error_of([&] { write_stack(s, dir.path()); }).find("non-finite") != std::string::npos);
}

TEST_CASE("committed fixture dump parses") {
  const LayerStack s = read_stack(testing::fixture_dir("synthetic_small"));
  CHECK(s.n_layers() == s.manifest.n_layers);
  CHECK(s.n_layers() == 6);
  CHECK(s.has_attention());
  CHECK(s.has_labels());
  CHECK(s.manifest.tasks.size() == 3);
}

TEST_CASE("synthetic generator") {
  SUBCASE("seeded determinism") {
    SyntheticSpec spec;
    spec.seed = 7;
    spec.n_samples = 64;
    CHECK(generate_synthetic(spec) == generate_synthetic(spec));
    spec.seed = 8;
    SyntheticSpec other = spec;
    other.seed = 7;
    CHECK_FALSE(generate_synthetic(spec) == generate_synthetic(other));
  }
  SUBCASE("measured spans within 5% of the profile, rows stochastic") {
    SyntheticSpec spec;
    spec.n_samples = 32;
    const LayerStack s = generate_synthetic(spec);
    const auto target = spec.resolved_span_profile();
    CHECK(target.front() == doctest::Approx(12.5));
    CHECK(target.back() == doctest::Approx(36.2));
    for (std::size_t l = 0; l < s.n_layers(); ++l) {
      const auto heads = s.attention[l].head_matrices();
      CHECK(std::abs(mean_span(heads) - target[l]) <= 0.05 * target[l]);
      for (const auto& A : heads) CHECK((A.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
    }
  }
  SUBCASE("infeasible span") {
    SyntheticSpec spec;
    spec.seq_len = 64;
    spec.span_profile.assign(12, 10.0);
    spec.span_profile.back() = 200.0;
    CHECK_THROWS_AS(generate_synthetic(spec), Error);
  }
  SUBCASE("invalid boundaries") {
    SyntheticSpec spec;
    spec.l1 = 8;
    spec.l2 = 8;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.l1 = 0;
    spec.l2 = 3;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
  SUBCASE("non-monotone span profile") {
    SyntheticSpec spec;
    spec.span_profile.assign(12, 20.0);
    spec.span_profile[5] = 10.0;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}
