#include "msma/text_metrics.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace msma {

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Lexicon parse_lexicon(const std::string& csv) {
  Lexicon lex;
  std::istringstream in(csv);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) invalid("lexicon line " + std::to_string(lineno) + ": expected word,score");
    const std::string word = trim(line.substr(0, comma)), score = trim(line.substr(comma + 1));
    char* end = nullptr;
    const double v = std::strtod(score.c_str(), &end);
    if (end == score.c_str() || *end != '\0' || !std::isfinite(v)) {
      if (lineno == 1) continue;  // header
      invalid("lexicon line " + std::to_string(lineno) + ": bad score '" + score + "'");
    }
    for (const auto& tok : tokenize(word)) lex[tok] = v;
  }
  return lex;
}

Lexicon read_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_lexicon(ss.str());
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (word_byte(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!tokenize(cur).empty()) out.push_back(trim(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      while (i + 1 < text.size() && (text[i + 1] == '.' || text[i + 1] == '!' || text[i + 1] == '?')) cur.push_back(text[++i]);
      flush();
    }
  }
  flush();
  return out;
}

nlohmann::json TextMetrics::to_json() const {
  nlohmann::json j;
  for (const auto& [k, v] : values()) j[k] = v;
  return j;
}

std::vector<std::pair<std::string, double>> TextMetrics::values() const {
  std::vector<std::pair<std::string, double>> v{{"lexical_diversity", lexical_diversity},
                                                {"sentence_count", static_cast<double>(sentence_count)},
                                                {"mean_sentence_length", mean_sentence_length}};
  if (max_dependency_depth) v.emplace_back("max_dependency_depth", *max_dependency_depth);
  if (coherence) v.emplace_back("coherence", *coherence);
  if (sentiment) v.emplace_back("sentiment", *sentiment);
  return v;
}

TextMetrics text_metrics(const std::string& text, const TextMetricOptions& opt) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) invalid("text_metrics: empty text");
  TextMetrics m;
  m.lexical_diversity = static_cast<double>(std::set<std::string>(tokens.begin(), tokens.end()).size()) /
                        static_cast<double>(tokens.size());
  const auto sentences = split_sentences(text);
  m.sentence_count = sentences.size();
  std::vector<std::vector<std::string>> sent_tokens;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    sent_tokens.push_back(tokenize(s));
    total += sent_tokens.back().size();
  }
  m.mean_sentence_length = static_cast<double>(total) / static_cast<double>(sentences.size());

  if (opt.lexicon) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (const auto& t : tokens)
      if (auto it = opt.lexicon->find(t); it != opt.lexicon->end()) {
        sum += it->second;
        ++hits;
      }
    m.sentiment = hits ? sum / static_cast<double>(hits) : 0.0;
  }

  if (opt.sentence_embeddings) {
    const auto& E = *opt.sentence_embeddings;
    if (E.size() != sentences.size())
      invalid("text_metrics: " + std::to_string(E.size()) + " sentence embeddings for " + std::to_string(sentences.size()) +
              " sentences");
    if (E.size() >= 2) {
      double acc = 0.0;
      for (std::size_t i = 0; i + 1 < E.size(); ++i) {
        if (E[i].size() != E[i + 1].size()) invalid("text_metrics: sentence embeddings differ in dimension");
        const double den = E[i].norm() * E[i + 1].norm();
        acc += den > 0.0 ? E[i].dot(E[i + 1]) / den : 0.0;
      }
      m.coherence = acc / static_cast<double>(E.size() - 1);
    }
  } else if (sentences.size() >= 2) {
    std::unordered_map<std::string, std::size_t> vocab;
    for (const auto& st : sent_tokens)
      for (const auto& t : st) vocab.emplace(t, vocab.size());
    auto bow = [&](const std::vector<std::string>& st) {
      Vector v = Vector::Zero(static_cast<Eigen::Index>(vocab.size()));
      for (const auto& t : st) v(static_cast<Eigen::Index>(vocab.at(t))) += 1.0;
      return v;
    };
    double acc = 0.0;
    Vector prev = bow(sent_tokens[0]);
    for (std::size_t i = 1; i < sent_tokens.size(); ++i) {
      const Vector cur = bow(sent_tokens[i]);
      acc += prev.dot(cur) / (prev.norm() * cur.norm());
      prev = cur;
    }
    m.coherence = acc / static_cast<double>(sent_tokens.size() - 1);
  }
  m.max_dependency_depth = opt.max_dependency_depth;
  return m;
}

}  // namespace msma
