#include "cull/data/corpus.hpp"

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"
#include "cull/util/hash.hpp"

namespace cull {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw FormatError("unknown split '" + s + "'");
}

namespace {

std::vector<int> random_sentence(std::mt19937_64& rng, LengthRange len, int content_words) {
  const int n = std::uniform_int_distribution<int>(len.min, len.max)(rng);
  std::uniform_int_distribution<int> word(0, content_words - 1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& w : out) w = vocab::word_token(word(rng));
  return out;
}

std::string sentence_key(const std::vector<int>& words) {
  std::string key;
  for (int w : words) key += std::to_string(w) + ",";
  return key;
}

void check_len(LengthRange len) {
  if (len.min < 1 || len.max < len.min) throw ConfigError("invalid sentence length range");
}

}  // namespace

ParallelCorpus gen_corpus(const LanguageSet& langs, const Direction& d, int n, LengthRange len, std::uint64_t seed,
                          int content_words, Split split) {
  if (n <= 0) throw ConfigError("gen_corpus: n must be positive");
  check_len(len);
  const Language& src = langs.find(d.src);
  const Language& tgt = langs.find(d.tgt);
  ParallelCorpus c;
  c.direction = d;
  c.split = split;
  std::mt19937_64 rng(seed);
  c.pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto canonical = random_sentence(rng, len, content_words);
    c.pairs.push_back({src.encipher(canonical), tgt.encipher(canonical)});
  }
  return c;
}

CorpusSplits gen_splits(const LanguageSet& langs, const Direction& d, SplitSizes sizes, LengthRange len,
                        std::uint64_t seed, int content_words) {
  check_len(len);
  if (sizes.train <= 0 || sizes.dev <= 0 || sizes.test <= 0) throw ConfigError("split sizes must be positive");
  const Language& src = langs.find(d.src);
  const Language& tgt = langs.find(d.tgt);
  std::mt19937_64 rng(Fnv1a().update(seed).update(d.name()).digest());
  std::set<std::string> used;
  auto draw = [&](int n, Split split) {
    ParallelCorpus c;
    c.direction = d;
    c.split = split;
    c.pairs.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(c.pairs.size()) < n) {
      auto canonical = random_sentence(rng, len, content_words);
      if (!used.insert(sentence_key(canonical)).second) continue;
      c.pairs.push_back({src.encipher(canonical), tgt.encipher(canonical)});
    }
    return c;
  };
  CorpusSplits out;
  out.dev = draw(sizes.dev, Split::Dev);
  out.test = draw(sizes.test, Split::Test);
  out.train = draw(sizes.train, Split::Train);
  return out;
}

ParallelCorpus length_filter(const ParallelCorpus& c, bool pass_through, FilterSide side) {
  if (c.pairs.empty()) throw ContractError("length_filter: empty corpus");
  auto count = [side](const SentencePair& p) -> double {
    switch (side) {
      case FilterSide::Source: return static_cast<double>(p.src.size());
      case FilterSide::Target: return static_cast<double>(p.tgt.size());
      case FilterSide::Both: return static_cast<double>(p.src.size() + p.tgt.size());
    }
    return 0;
  };
  double total = 0;
  for (const auto& p : c.pairs) total += count(p);
  const double mean = total / static_cast<double>(c.pairs.size());
  ParallelCorpus out;
  out.direction = c.direction;
  out.split = c.split;
  out.meta = c.meta;
  for (const auto& p : c.pairs) {
    if (count(p) > mean) out.pairs.push_back(p);
  }
  if (out.pairs.empty()) {
    if (pass_through) return c;
    throw FilterDegenerateError("length_filter: no pair is longer than the mean length " + std::to_string(mean));
  }
  return out;
}

std::vector<std::string> subword_tokenize(const std::string& sentence) {
  std::vector<std::string> out;
  std::istringstream in(sentence);
  std::string word;
  while (in >> word) {
    std::size_t i = 0;
    while (i < word.size()) {
      std::size_t end = i;
      for (int cp = 0; cp < 2 && end < word.size(); ++cp) {
        ++end;
        while (end < word.size() && (static_cast<unsigned char>(word[end]) & 0xC0) == 0x80) ++end;
      }
      out.push_back(word.substr(i, end - i));
      i = end;
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const ParallelCorpus& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const auto& d = c.direction;
  out.precision(17);
  out << "# direction=" << d.name() << " src=" << d.src << " tgt=" << d.tgt << " src_tag=" << d.tags.src_tag
      << " tgt_tag=" << d.tags.tgt_tag << " weight=" << d.weight << " split=" << to_string(c.split);
  for (const auto& [k, v] : c.meta) out << ' ' << k << '=' << v;
  out << '\n';
  for (const auto& p : c.pairs) out << vocab::render(p.src) << '\t' << vocab::render(p.tgt) << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

ParallelCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError(path.string() + ": missing header line");
  std::map<std::string, std::string> fields;
  std::istringstream hs(line.substr(2));
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": bad header field '" + kv + "'");
    fields[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  ParallelCorpus c;
  try {
    c.direction.src = fields.at("src");
    c.direction.tgt = fields.at("tgt");
    c.direction.tags.src_tag = std::stoi(fields.at("src_tag"));
    c.direction.tags.tgt_tag = std::stoi(fields.at("tgt_tag"));
    c.direction.weight = std::stod(fields.at("weight"));
    c.split = parse_split(fields.at("split"));
  } catch (const std::out_of_range&) {
    throw FormatError(path.string() + ": header is missing a required field");
  } catch (const std::invalid_argument&) {
    throw FormatError(path.string() + ": malformed header value");
  }
  for (const char* k : {"direction", "src", "tgt", "src_tag", "tgt_tag", "weight", "split"}) fields.erase(k);
  c.meta = std::move(fields);
  const bool kd = c.meta.count("kd") && c.meta.at("kd") == "true";
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": missing TAB");
    SentencePair p{vocab::parse_words(line.substr(0, tab)), vocab::parse_words(line.substr(tab + 1))};
    if (p.src.empty() || (p.tgt.empty() && !kd)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty sentence");
    }
    c.pairs.push_back(std::move(p));
  }
  return c;
}

}  // namespace cull
