#include "multipruner/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "multipruner/errors.hpp"
#include "multipruner/random.hpp"

namespace multipruner {

namespace {

constexpr std::uint64_t kLexiconSeed = 0x5eed1e7c0de5ULL;

struct Lexicon {
  std::vector<std::string> nouns, verbs, adjectives, names;
};

std::string make_word(Rng& rng, int syllables) {
  static constexpr std::array<const char*, 16> onsets = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                         "p", "r", "s", "t", "v", "br", "st", "tr"};
  static constexpr std::array<const char*, 6> vowels = {"a", "e", "i", "o", "u", "ai"};
  static constexpr std::array<const char*, 6> codas = {"", "", "n", "r", "s", "l"};
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += onsets[rng.below(onsets.size())];
    w += vowels[rng.below(vowels.size())];
  }
  w += codas[rng.below(codas.size())];
  return w;
}

const Lexicon& lexicon() {
  static const Lexicon lex = [] {
    Rng rng(kLexiconSeed);
    Lexicon l;
    for (int i = 0; i < 60; ++i) l.nouns.push_back(make_word(rng, 1 + static_cast<int>(rng.below(2))));
    for (int i = 0; i < 40; ++i) l.verbs.push_back(make_word(rng, 1 + static_cast<int>(rng.below(2))));
    for (int i = 0; i < 30; ++i) l.adjectives.push_back(make_word(rng, 2));
    for (int i = 0; i < 12; ++i) {
      std::string n = make_word(rng, 2);
      n[0] = static_cast<char>(n[0] - 'a' + 'A');
      l.names.push_back(n);
    }
    return l;
  }();
  return lex;
}

// Zipf-like choice: low indices are much more frequent.
const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  const double u = rng.uniform();
  const auto i = static_cast<std::size_t>(static_cast<double>(words.size()) * u * u * u);
  return words[std::min(i, words.size() - 1)];
}

std::string noun_phrase(Rng& rng, const Lexicon& lex, bool& plural) {
  if (rng.uniform() < 0.15) {
    plural = false;
    return pick(rng, lex.names);
  }
  plural = rng.uniform() < 0.3;
  std::string np = plural ? (rng.uniform() < 0.5 ? "the " : "some ") : (rng.uniform() < 0.6 ? "the " : "a ");
  if (rng.uniform() < 0.4) np += pick(rng, lex.adjectives) + " ";
  np += pick(rng, lex.nouns);
  if (plural) np += "s";
  return np;
}

std::string sentence(Rng& rng, const Lexicon& lex) {
  static constexpr std::array<const char*, 5> preps = {"in", "on", "with", "near", "under"};
  bool plural = false;
  std::string s = noun_phrase(rng, lex, plural);
  s += " " + pick(rng, lex.verbs) + (plural ? "" : "s");
  bool obj_plural = false;
  if (rng.uniform() < 0.8) s += " " + noun_phrase(rng, lex, obj_plural);
  if (rng.uniform() < 0.35) {
    s += std::string(" ") + preps[rng.below(preps.size())] + " " + noun_phrase(rng, lex, obj_plural);
  }
  if (rng.uniform() < 0.1) s += " " + std::to_string(1 + rng.below(99)) + " times";
  if (rng.uniform() < 0.25) {
    s += ", and " + noun_phrase(rng, lex, plural);
    s += " " + pick(rng, lex.verbs) + (plural ? "" : "s");
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  s += rng.uniform() < 0.9 ? ". " : "? ";
  return s;
}

}  // namespace

std::vector<unsigned char> synthetic_corpus(std::size_t n_bytes, std::uint64_t seed) {
  const Lexicon& lex = lexicon();
  Rng rng(seed);
  std::vector<unsigned char> out;
  out.reserve(n_bytes + 256);
  int in_paragraph = 0;
  while (out.size() < n_bytes) {
    const std::string s = sentence(rng, lex);
    out.insert(out.end(), s.begin(), s.end());
    if (++in_paragraph >= 4 + static_cast<int>(rng.below(5))) {
      out.back() = '\n';
      in_paragraph = 0;
    }
  }
  out.resize(n_bytes);
  return out;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace multipruner
