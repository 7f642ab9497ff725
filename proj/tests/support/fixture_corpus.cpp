#include "fixture_corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "saffu/util.hpp"

namespace fixture {

namespace {

using saffu::DetRng;

const std::vector<std::string> kDeterminers = {"the", "a", "this", "that", "every", "some"};
const std::vector<std::string> kAdjectives = {
    "old",  "small", "quiet", "bright", "heavy",  "young", "long", "dark",
    "warm", "cold",  "tall",  "simple", "narrow", "clear", "deep", "strange"};
const std::vector<std::string> kAdverbs = {"slowly", "quickly", "often", "never",
                                           "almost", "again",   "soon",  "quietly"};
const std::vector<std::string> kPlaces = {"village", "harbor", "market", "valley", "garden",
                                          "library", "kitchen", "forest", "station", "bridge"};
const std::vector<std::string> kNames = {"anna", "peter", "maria", "john",  "lucy",
                                         "tom",  "elena", "sam",   "clara", "james"};
const std::vector<std::string> kTimeWords = {"morning", "evening", "winter", "summer",
                                             "night",   "spring",  "autumn", "noon"};

// Topic pools: nouns and verbs cluster per topic so documents stay coherent.
const std::vector<std::vector<std::string>> kTopicNouns = {
    {"boat", "net", "fish", "tide", "sail", "rope", "wave", "shore", "gull", "storm"},
    {"bread", "flour", "oven", "table", "bowl", "salt", "honey", "apple", "knife", "plate"},
    {"book", "letter", "page", "story", "pen", "desk", "candle", "word", "margin", "shelf"},
    {"seed", "field", "plow", "barn", "wheat", "fence", "cart", "well", "orchard", "hedge"},
    {"coin", "ledger", "scale", "cloth", "stall", "trader", "cart", "price", "bundle", "crate"}};
const std::vector<std::vector<std::string>> kTopicVerbs = {
    {"sailed", "drifted", "anchored", "mended", "hauled", "rowed"},
    {"baked", "kneaded", "sliced", "tasted", "stirred", "warmed"},
    {"wrote", "read", "copied", "folded", "signed", "studied"},
    {"planted", "harvested", "watered", "gathered", "carried", "stacked"},
    {"sold", "bought", "counted", "weighed", "traded", "wrapped"}};
const std::vector<std::string> kCommonVerbs = {"saw",    "found", "kept",  "took",
                                               "left",   "held",  "moved", "watched",
                                               "wanted", "made"};

// Zipf-like draw: small indices far more likely.
std::size_t zipf_pick(DetRng& rng, std::size_t n) {
    const double u = rng.uniform();
    const double x = std::pow(u, 2.0);
    auto idx = static_cast<std::size_t>(x * static_cast<double>(n));
    return idx >= n ? n - 1 : idx;
}

const std::string& pick(DetRng& rng, const std::vector<std::string>& pool) {
    return pool[zipf_pick(rng, pool.size())];
}

std::string make_sentence(DetRng& rng, std::size_t topic) {
    const auto& nouns = kTopicNouns[topic];
    const auto& verbs = kTopicVerbs[topic];
    std::vector<std::string> words;
    switch (rng.next() % 6) {
        case 0:
            words = {pick(rng, kDeterminers), pick(rng, kAdjectives), pick(rng, nouns),
                     pick(rng, verbs), "near", "the", pick(rng, kPlaces)};
            break;
        case 1:
            words = {pick(rng, kNames), pick(rng, verbs), "the", pick(rng, nouns),
                     pick(rng, kAdverbs)};
            break;
        case 2:
            words = {"in", "the", pick(rng, kTimeWords), pick(rng, kNames), pick(rng, kCommonVerbs),
                     "a", pick(rng, kAdjectives), pick(rng, nouns)};
            break;
        case 3:
            words = {"the", pick(rng, nouns), "was", pick(rng, kAdjectives), "and", "the",
                     pick(rng, nouns), "was", pick(rng, kAdjectives)};
            break;
        case 4:
            words = {"when", pick(rng, kNames), pick(rng, verbs), "the", pick(rng, nouns), ",",
                     pick(rng, kNames), pick(rng, kCommonVerbs), "it", pick(rng, kAdverbs)};
            break;
        default:
            words = {pick(rng, kNames), "and", pick(rng, kNames), pick(rng, verbs), "the",
                     pick(rng, kAdjectives), pick(rng, nouns), "by", "the", pick(rng, kPlaces)};
            break;
    }
    std::string out;
    for (const auto& w : words) {
        if (!out.empty() && w != ",") out += ' ';
        out += w;
    }
    out += " .";
    return out;
}

}  // namespace

std::vector<std::string> generate_docs(std::size_t n_docs, std::size_t words_per_doc,
                                       std::uint64_t seed) {
    std::vector<std::string> docs;
    docs.reserve(n_docs);
    DetRng rng(seed);
    for (std::size_t d = 0; d < n_docs; ++d) {
        const std::size_t topic = rng.next() % kTopicNouns.size();
        std::string text;
        std::size_t words = 0;
        while (words < words_per_doc) {
            const std::string sentence = make_sentence(rng, topic);
            words += 1 + static_cast<std::size_t>(
                             std::count(sentence.begin(), sentence.end(), ' '));
            text += sentence;
            text += '\n';
        }
        docs.push_back(std::move(text));
    }
    return docs;
}

void write_corpus_dir(const std::string& dir, const std::vector<std::string>& docs) {
    std::filesystem::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < docs.size(); ++i) {
        std::snprintf(name, sizeof(name), "doc_%04zu.txt", i);
        std::ofstream out(dir + "/" + name, std::ios::binary | std::ios::trunc);
        out << docs[i];
    }
}

}  // namespace fixture
