#include "avsgs/dataprep.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace avsgs::prep {
namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

[[noreturn]] void fail_at(const std::string& path, int line_no,
                          const std::string& msg) {
  throw Error(path + ":" + std::to_string(line_no) + ": " + msg);
}

}  // namespace

AuditoryDictionary load_dictionary(const std::string& path,
                                   const std::vector<std::string>& catalog) {
  std::ifstream in(path);
  require(in.good(), "cannot open dictionary: " + path);
  const std::set<std::string> known(catalog.begin(), catalog.end());

  AuditoryDictionary dict;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string row = trim(line);
    if (row.empty() || row[0] == '#') continue;

    const std::vector<std::string> fields = split(row, '\t');
    if (fields.size() != 3)
      fail_at(path, line_no, "expected word<TAB>class<TAB>frequency");

    const std::string word = trim(fields[0]);
    const std::vector<std::string> toks = tokenize(word);
    if (toks.size() != 1 || toks[0] != word)
      fail_at(path, line_no, "word is not a single lowercase token: " + word);
    std::string canonical;
    for (const std::string& raw : split(fields[1], '/')) {
      const std::string alias = trim(raw);
      if (alias == "background" || known.count(alias)) {
        if (!canonical.empty() && canonical != alias)
          fail_at(path, line_no,
                  "class aliases resolve ambiguously: " + fields[1]);
        canonical = alias;
      }
    }
    if (canonical.empty())
      fail_at(path, line_no, "unknown class: " + fields[1]);

    long freq = 0;
    try {
      std::size_t used = 0;
      freq = std::stol(trim(fields[2]), &used);
      if (used != trim(fields[2]).size() || freq < 0) throw std::exception();
    } catch (const std::exception&) {
      fail_at(path, line_no, "bad frequency: " + fields[2]);
    }

    // A row that repeats an earlier word is tolerated when it agrees with
    // the earlier one (the shipped word list carries one such repeat);
    // disagreeing repeats are data errors.
    const auto prior = dict.entries.find(word);
    if (prior != dict.entries.end()) {
      if (prior->second.principal_class != canonical ||
          prior->second.corpus_frequency != freq)
        fail_at(path, line_no, "conflicting duplicate word: " + word);
      continue;
    }

    dict.entries[word] = DictEntry{canonical, freq};
  }
  return dict;
}

std::vector<CaptionRecord> load_captions(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open captions: " + path);
  std::vector<CaptionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      CaptionRecord rec;
      rec.video_id = j.at("video_id").get<std::string>();
      rec.caption = j.at("caption").get<std::string>();
      require(!rec.caption.empty(), "empty caption");
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      fail_at(path, line_no, e.what());
    } catch (const Error& e) {
      fail_at(path, line_no, e.what());
    }
  }
  return records;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

std::vector<FilteredVideo> filter_captions(
    const std::vector<CaptionRecord>& records,
    const AuditoryDictionary& dict) {
  std::vector<FilteredVideo> out;
  for (const auto& rec : records) {
    std::set<std::string> words;
    std::map<std::string, long> class_strength;  // strongest matched word
    for (const std::string& tok : tokenize(rec.caption)) {
      const auto it = dict.entries.find(tok);
      if (it == dict.entries.end()) continue;
      words.insert(tok);
      const DictEntry& entry = it->second;
      if (entry.principal_class == "background") continue;
      long& strength = class_strength[entry.principal_class];
      strength = std::max(strength, entry.corpus_frequency);
    }
    if (class_strength.empty()) continue;  // nothing separable to learn from

    std::vector<std::pair<std::string, long>> ranked(class_strength.begin(),
                                                     class_strength.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > 2) ranked.resize(2);

    FilteredVideo fv;
    fv.video_id = rec.video_id;
    for (const auto& [cls, strength] : ranked) fv.principal_classes.push_back(cls);
    fv.matched_words.assign(words.begin(), words.end());
    out.push_back(std::move(fv));
  }
  return out;
}

std::map<std::string, long> class_histogram(
    const std::vector<FilteredVideo>& filtered,
    const std::vector<std::string>& catalog) {
  std::map<std::string, long> counts;
  for (const std::string& cls : catalog) counts[cls] = 0;
  for (const auto& fv : filtered)
    for (const std::string& cls : fv.principal_classes) ++counts[cls];
  return counts;
}

void write_filtered_jsonl(const std::vector<FilteredVideo>& filtered,
                          const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write: " + path);
  for (const auto& fv : filtered) {
    json j;
    j["video_id"] = fv.video_id;
    j["principal_classes"] = fv.principal_classes;
    j["matched_words"] = fv.matched_words;
    out << j.dump() << "\n";
  }
  require(out.good(), "write failed: " + path);
}

void write_histogram_csv(const std::map<std::string, long>& histogram,
                         const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write: " + path);
  out << "class,count\n";
  for (const auto& [cls, count] : histogram) out << cls << "," << count << "\n";
  require(out.good(), "write failed: " + path);
}

}  // namespace avsgs::prep
