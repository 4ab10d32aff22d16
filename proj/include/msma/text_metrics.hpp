#ifndef MSMA_TEXT_METRICS_HPP
#define MSMA_TEXT_METRICS_HPP

#include "msma/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace msma {

// word -> signed score, keys lowercased.
using Lexicon = std::map<std::string, double>;

// "word,score" lines; a header line whose score does not parse is skipped.
Lexicon read_lexicon(const std::filesystem::path& path);
Lexicon parse_lexicon(const std::string& csv);

// Lowercased tokens; anything that is not an ASCII letter or digit (or a UTF-8
// continuation of a non-ASCII character) separates tokens.
std::vector<std::string> tokenize(const std::string& text);
// Sentences split after runs of '.', '!' or '?'; sentences without tokens are dropped.
std::vector<std::string> split_sentences(const std::string& text);

struct TextMetricOptions {
  const Lexicon* lexicon = nullptr;
  // One embedding per sentence, used for coherence instead of bag-of-words.
  const std::vector<Vector>* sentence_embeddings = nullptr;
  // Read from an annotation file by the caller; never computed here.
  std::optional<double> max_dependency_depth;
};

struct TextMetrics {
  double lexical_diversity = 0.0;  // types / tokens
  std::size_t sentence_count = 0;
  double mean_sentence_length = 0.0;  // tokens per sentence
  std::optional<double> sentiment;    // mean score of tokens found in the lexicon
  std::optional<double> coherence;    // mean cosine of adjacent sentences
  std::optional<double> max_dependency_depth;

  nlohmann::json to_json() const;
  // name -> value for the metrics that are present.
  std::vector<std::pair<std::string, double>> values() const;
};

TextMetrics text_metrics(const std::string& text, const TextMetricOptions& opt = {});

}  // namespace msma

#endif
