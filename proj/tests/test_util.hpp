#pragma once

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "seqmark/corpus.hpp"

namespace seqmark::testutil {

// Random dataset with user ids 0..n-1. When dense_items is set, every id
// 1..n_items is guaranteed to occur (one closing user walks the whole range).
inline Dataset random_dataset(std::mt19937_64& rng, int max_users, ItemId n_items, int min_len,
                              int max_len, bool dense_items = false) {
  std::uniform_int_distribution<int> users_draw(1, max_users);
  std::uniform_int_distribution<int> len_draw(min_len, max_len);
  std::uniform_int_distribution<ItemId> item_draw(1, n_items);

  Dataset d;
  d.n_items = n_items;
  const int n_users = users_draw(rng);
  for (int u = 0; u < n_users; ++u) {
    UserSequence seq;
    seq.user = u;
    const int len = len_draw(rng);
    for (int i = 0; i < len; ++i) seq.items.push_back(item_draw(rng));
    d.users.push_back(std::move(seq));
  }
  if (dense_items) {
    UserSequence walker;
    walker.user = n_users;
    for (ItemId i = 1; i <= n_items; ++i) walker.items.push_back(i);
    d.users.push_back(std::move(walker));
  }
  return d;
}

class TempDir {
public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("seqmark_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return {};
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

inline void spit(const std::string& path, const std::string& contents) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fwrite(contents.data(), 1, contents.size(), f);
  std::fclose(f);
}

}  // namespace seqmark::testutil
