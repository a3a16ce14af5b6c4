#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqmark {

// Dense item index. Ids run 1..n_items; 0 is the padding token and never
// appears inside a stored interaction sequence.
using ItemId = std::int32_t;
inline constexpr ItemId kPaddingItem = 0;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

struct UserSequence {
  std::int64_t user = 0;
  std::vector<ItemId> items;  // chronological order
};

struct Dataset {
  std::vector<UserSequence> users;
  ItemId n_items = 0;  // item ids run 1..n_items

  std::size_t total_interactions() const;
  const UserSequence* find_user(std::int64_t user) const;
};

struct PopularityTable {
  // counts[i] = interactions with item i across all sequences; counts[0] is
  // the padding slot and stays 0.
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  std::int64_t count(ItemId item) const { return counts.at(static_cast<std::size_t>(item)); }
  ItemId n_items() const { return static_cast<ItemId>(counts.size()) - 1; }
};

struct LeaveOneOutEntry {
  std::int64_t user = 0;
  std::vector<ItemId> train;  // prefix, length >= 1
  ItemId val = kPaddingItem;  // penultimate item
  ItemId test = kPaddingItem; // last item
};

struct SkippedUser {
  std::int64_t user = 0;
  std::string reason;
};

struct LeaveOneOutSplit {
  std::vector<LeaveOneOutEntry> entries;
  std::vector<SkippedUser> skipped;
};

enum class DatasetFormat { sequence_lines, triplet_log };

// Reads a dataset from disk. sequence_lines is one user per line,
// `user<TAB>comma-separated items`; triplet_log is `user<TAB>item<TAB>ts`
// per line, grouped by user and sorted by timestamp (stable on ties).
// Item ids are densified to 1..n_items preserving numeric order; user order
// is file order for sequence_lines and ascending user id for triplet_log.
Dataset load_dataset(const std::string& path, DatasetFormat format);

// Writes the canonical sequence-lines form: users ascending by id, items
// comma-separated, '\n' line endings.
void save_dataset(const Dataset& d, const std::string& path);

PopularityTable compute_popularity(const Dataset& d);

// Last item per user is the test target, penultimate the validation target.
// Users shorter than 3 are skipped and listed in the skip report.
LeaveOneOutSplit split_leave_one_out(const Dataset& d);

// CSV `user_id,reason`, one row per skipped user.
void write_skip_report(const LeaveOneOutSplit& split, const std::string& path);

// True iff pattern occurs as a consecutive block in any user sequence.
bool contains_pattern(const Dataset& d, std::span<const ItemId> pattern);

struct SyntheticSpec {
  int n_users = 2000;
  ItemId n_items = 300;
  int len_min = 20;
  int len_max = 50;
  double locality = 0.8;  // in (0,1]: probability of a ring-neighborhood step
  std::uint64_t seed = 0;
};

// Ring neighborhood width used by the synthetic generator: from item i the
// local successors are i+1..i+kSyntheticNeighborhood (wrapping past n_items).
inline constexpr int kSyntheticNeighborhood = 8;

// First-order Markov sequences over a ring of items. Each step either moves
// to a nearby ring successor (probability = locality, geometrically weighted
// toward the immediate successor) or jumps to an item drawn from a Zipf
// distribution, which also seeds the first item; the Zipf head gives the
// popularity distribution its long tail. Deterministic under seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace seqmark
