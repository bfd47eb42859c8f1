#pragma once

#include <map>
#include <string>
#include <vector>

#include "avsgs/common.hpp"

namespace avsgs::prep {

/// One dictionary row after alias collapse: the canonical class the word is
/// grounded to plus the word's frequency in the caption corpus.
struct DictEntry {
  std::string principal_class;  // catalog name or "background"
  long corpus_frequency = 0;
};

struct AuditoryDictionary {
  std::map<std::string, DictEntry> entries;  // keyed by auditory word
};

/// Parses a TSV file of `word<TAB>class-aliases<TAB>frequency` rows. Lines
/// starting with '#' and blank lines are skipped. The class field may hold
/// several slash-separated aliases; exactly one of them must be a catalog
/// class or "background" and becomes the canonical class. A row repeating
/// an earlier word is accepted when class and frequency agree (the shipped
/// word list carries one such repeat); conflicting repeats, unresolvable or
/// ambiguous aliases, and malformed rows raise errors that carry the line
/// number.
AuditoryDictionary load_dictionary(const std::string& path,
                                   const std::vector<std::string>& catalog);

struct CaptionRecord {
  std::string video_id;
  std::string caption;
};

/// Reads JSON-lines of {video_id, caption}; errors carry the line number.
std::vector<CaptionRecord> load_captions(const std::string& path);

/// Lowercases the text and splits it on every non-alphanumeric byte.
std::vector<std::string> tokenize(const std::string& text);

struct FilteredVideo {
  std::string video_id;
  /// At most two catalog classes, ordered by descending match strength
  /// (ties alphabetical); never contains "background".
  std::vector<std::string> principal_classes;
  /// All dictionary words found in the caption, deduplicated and sorted;
  /// background words are listed here even though they never become
  /// principal classes.
  std::vector<std::string> matched_words;
};

/// Keeps the videos whose captions contain at least one dictionary word
/// grounded to a catalog class. Matching is exact per token (no stemming).
/// A video matching more than two classes keeps the two whose strongest
/// matched word has the highest corpus frequency; background matches never
/// count toward that cap. Videos matching only background words carry no
/// usable source and are dropped alongside videos with no match at all.
std::vector<FilteredVideo> filter_captions(
    const std::vector<CaptionRecord>& records,
    const AuditoryDictionary& dict);

/// Counts retained videos per principal class (a two-class video counts
/// once for each). Catalog classes absent from `filtered` appear with a
/// zero count so the table always covers the full catalog.
std::map<std::string, long> class_histogram(
    const std::vector<FilteredVideo>& filtered,
    const std::vector<std::string>& catalog = {});

/// Writes one JSON object per video, keys in alphabetical order, so equal
/// inputs produce byte-identical files.
void write_filtered_jsonl(const std::vector<FilteredVideo>& filtered,
                          const std::string& path);

/// Writes `class,count` rows sorted by class name.
void write_histogram_csv(const std::map<std::string, long>& histogram,
                         const std::string& path);

}  // namespace avsgs::prep
