#include "seqmark/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace seqmark {

std::size_t Dataset::total_interactions() const {
  std::size_t total = 0;
  for (const auto& u : users) total += u.items.size();
  return total;
}

const UserSequence* Dataset::find_user(std::int64_t user) const {
  for (const auto& u : users) {
    if (u.user == user) return &u;
  }
  return nullptr;
}

namespace {

std::int64_t parse_int(std::string_view tok, std::size_t line, const char* what) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(tok) + "'", line);
  }
  return value;
}

// Maps raw item ids onto 1..n preserving numeric order.
void densify_items(std::vector<UserSequence>& users, std::vector<std::int64_t>&& raw_per_user_flat,
                   const std::vector<std::size_t>& lengths, ItemId& n_items_out) {
  std::vector<std::int64_t> distinct = raw_per_user_flat;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::size_t cursor = 0;
  for (std::size_t ui = 0; ui < users.size(); ++ui) {
    users[ui].items.resize(lengths[ui]);
    for (std::size_t k = 0; k < lengths[ui]; ++k) {
      auto it = std::lower_bound(distinct.begin(), distinct.end(), raw_per_user_flat[cursor]);
      users[ui].items[k] = static_cast<ItemId>(std::distance(distinct.begin(), it) + 1);
      ++cursor;
    }
  }
  n_items_out = static_cast<ItemId>(distinct.size());
}

Dataset load_sequence_lines(std::istream& in) {
  Dataset d;
  std::vector<std::int64_t> raw_flat;
  std::vector<std::size_t> lengths;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected '<user>\\t<items>'", lineno);
    UserSequence seq;
    seq.user = parse_int(std::string_view(line).substr(0, tab), lineno, "user id");
    std::string_view rest = std::string_view(line).substr(tab + 1);
    std::size_t count = 0;
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string_view tok = rest.substr(0, comma);
      raw_flat.push_back(parse_int(tok, lineno, "item id"));
      if (raw_flat.back() < 0) throw ParseError("negative item id", lineno);
      ++count;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (count == 0) throw ParseError("user with no items", lineno);
    lengths.push_back(count);
    d.users.push_back(std::move(seq));
  }
  if (d.users.empty()) throw Error("empty dataset");
  std::vector<std::int64_t> ids;
  ids.reserve(d.users.size());
  for (const auto& u : d.users) ids.push_back(u.user);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error("duplicate user id in dataset");
  }
  densify_items(d.users, std::move(raw_flat), lengths, d.n_items);
  return d;
}

Dataset load_triplet_log(std::istream& in) {
  struct Event {
    std::int64_t item;
    std::int64_t ts;
  };
  std::map<std::int64_t, std::vector<Event>> by_user;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw ParseError("expected '<user>\\t<item>\\t<timestamp>'", lineno);
    }
    std::string_view sv(line);
    std::int64_t user = parse_int(sv.substr(0, t1), lineno, "user id");
    std::int64_t item = parse_int(sv.substr(t1 + 1, t2 - t1 - 1), lineno, "item id");
    std::int64_t ts = parse_int(sv.substr(t2 + 1), lineno, "timestamp");
    if (item < 0) throw ParseError("negative item id", lineno);
    by_user[user].push_back({item, ts});
  }
  if (by_user.empty()) throw Error("empty dataset");

  Dataset d;
  std::vector<std::int64_t> raw_flat;
  std::vector<std::size_t> lengths;
  for (auto& [user, events] : by_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.ts < b.ts; });
    UserSequence seq;
    seq.user = user;
    for (const auto& e : events) raw_flat.push_back(e.item);
    lengths.push_back(events.size());
    d.users.push_back(std::move(seq));
  }
  densify_items(d.users, std::move(raw_flat), lengths, d.n_items);
  return d;
}

}  // namespace

Dataset load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  switch (format) {
    case DatasetFormat::sequence_lines:
      return load_sequence_lines(in);
    case DatasetFormat::triplet_log:
      return load_triplet_log(in);
  }
  throw Error("unknown dataset format");
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::vector<const UserSequence*> order;
  order.reserve(d.users.size());
  for (const auto& u : d.users) order.push_back(&u);
  std::sort(order.begin(), order.end(),
            [](const UserSequence* a, const UserSequence* b) { return a->user < b->user; });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file: " + path);
  for (const UserSequence* u : order) {
    out << u->user << '\t';
    for (std::size_t i = 0; i < u->items.size(); ++i) {
      if (i) out << ',';
      out << u->items[i];
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

PopularityTable compute_popularity(const Dataset& d) {
  PopularityTable pop;
  pop.counts.assign(static_cast<std::size_t>(d.n_items) + 1, 0);
  for (const auto& u : d.users) {
    for (ItemId item : u.items) {
      pop.counts.at(static_cast<std::size_t>(item)) += 1;
      pop.total += 1;
    }
  }
  return pop;
}

LeaveOneOutSplit split_leave_one_out(const Dataset& d) {
  LeaveOneOutSplit split;
  for (const auto& u : d.users) {
    if (u.items.size() < 3) {
      split.skipped.push_back({u.user, "sequence shorter than 3"});
      continue;
    }
    LeaveOneOutEntry e;
    e.user = u.user;
    e.train.assign(u.items.begin(), u.items.end() - 2);
    e.val = u.items[u.items.size() - 2];
    e.test = u.items.back();
    split.entries.push_back(std::move(e));
  }
  return split;
}

void write_skip_report(const LeaveOneOutSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write skip report: " + path);
  out << "user_id,reason\n";
  for (const auto& s : split.skipped) out << s.user << ',' << s.reason << '\n';
}

bool contains_pattern(const Dataset& d, std::span<const ItemId> pattern) {
  if (pattern.empty()) throw Error("contains_pattern: empty pattern");
  for (const auto& u : d.users) {
    auto it = std::search(u.items.begin(), u.items.end(), pattern.begin(), pattern.end());
    if (it != u.items.end()) return true;
  }
  return false;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_items < 20) throw Error("generate_synthetic: n_items must be >= 20");
  if (spec.len_min < 3 || spec.len_max < spec.len_min) {
    throw Error("generate_synthetic: need 3 <= len_min <= len_max");
  }
  if (!(spec.locality > 0.0 && spec.locality <= 1.0)) {
    throw Error("generate_synthetic: locality must be in (0,1]");
  }
  if (spec.n_users < 1) throw Error("generate_synthetic: n_users must be >= 1");

  std::mt19937_64 rng(spec.seed);

  // Zipf weights over item ids; the head items become the popular ones.
  const double zipf_s = 1.3;
  std::vector<double> zipf(static_cast<std::size_t>(spec.n_items));
  for (ItemId i = 1; i <= spec.n_items; ++i) {
    zipf[static_cast<std::size_t>(i - 1)] = std::pow(static_cast<double>(i), -zipf_s);
  }
  std::discrete_distribution<int> zipf_draw(zipf.begin(), zipf.end());

  // Ring step offsets 1..kSyntheticNeighborhood, geometrically favoring +1.
  std::vector<double> step(kSyntheticNeighborhood);
  for (int k = 0; k < kSyntheticNeighborhood; ++k) step[static_cast<std::size_t>(k)] = std::pow(0.7, k);
  std::discrete_distribution<int> step_draw(step.begin(), step.end());

  std::uniform_int_distribution<int> len_draw(spec.len_min, spec.len_max);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Dataset d;
  d.n_items = spec.n_items;
  d.users.reserve(static_cast<std::size_t>(spec.n_users));
  for (int u = 0; u < spec.n_users; ++u) {
    UserSequence seq;
    seq.user = u;
    int len = len_draw(rng);
    seq.items.reserve(static_cast<std::size_t>(len));
    ItemId cur = static_cast<ItemId>(zipf_draw(rng) + 1);
    seq.items.push_back(cur);
    for (int t = 1; t < len; ++t) {
      if (coin(rng) < spec.locality) {
        int offset = step_draw(rng) + 1;
        cur = static_cast<ItemId>((cur - 1 + offset) % spec.n_items + 1);
      } else {
        cur = static_cast<ItemId>(zipf_draw(rng) + 1);
      }
      seq.items.push_back(cur);
    }
    d.users.push_back(std::move(seq));
  }
  return d;
}

}  // namespace seqmark
