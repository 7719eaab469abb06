/*
 * Copyright 2026 The preferdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "preferdiff/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string_view>

#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string line_error(const std::string& source, std::size_t line, const std::string& what) {
  return source + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

std::vector<RawInteraction> parse_interactions(std::istream& in, const std::string& source) {
  std::vector<RawInteraction> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const char sep = body.find('\t') != std::string_view::npos ? '\t' : ',';
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = body.find(sep, start);
      fields.push_back(trim(body.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (fields.size() != 3) {
      throw DataError(line_error(source, line_no,
                                 "expected 3 fields (user, item, timestamp), found " + std::to_string(fields.size())));
    }
    if (fields[0].empty() || fields[1].empty()) throw DataError(line_error(source, line_no, "empty user or item"));
    RawInteraction row{std::string(fields[0]), std::string(fields[1]), 0};
    if (!parse_number(fields[2], row.timestamp)) {
      throw DataError(line_error(source, line_no, "timestamp '" + std::string(fields[2]) + "' is not an integer"));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

InteractionLog filter_interactions(std::span<const RawInteraction> raw, int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  std::vector<bool> alive(raw.size(), true);
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string_view, int> user_counts;
    std::unordered_map<std::string_view, int> item_counts;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!alive[i]) continue;
      ++user_counts[raw[i].user];
      ++item_counts[raw[i].item];
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (alive[i] && (user_counts[raw[i].user] < min_count || item_counts[raw[i].item] < min_count)) {
        alive[i] = false;
        changed = true;
      }
    }
  }

  InteractionLog log;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!alive[i]) continue;
    const RawInteraction& r = raw[i];
    auto [u, new_user] = log.user_index.try_emplace(r.user, log.user_count());
    if (new_user) log.user_keys.push_back(r.user);
    auto [it, new_item] = log.item_index.try_emplace(r.item, log.item_count());
    if (new_item) log.item_keys.push_back(r.item);
    log.records.push_back({u->second, it->second, r.timestamp});
  }
  if (log.records.empty()) {
    throw DataError("no interactions left after filtering with min_count = " + std::to_string(min_count));
  }
  return log;
}

InteractionLog load_interactions(const std::filesystem::path& path, int min_count) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  const std::vector<RawInteraction> raw = parse_interactions(in, path.string());
  return filter_interactions(raw, min_count);
}

void write_interactions(std::ostream& out, const InteractionLog& log) {
  for (const Interaction& r : log.records) {
    out << log.user_keys[static_cast<std::size_t>(r.user)] << '\t' << log.item_keys[static_cast<std::size_t>(r.item)]
        << '\t' << r.timestamp << '\n';
  }
}

SplitRatios parse_split_ratios(const std::string& text) {
  SplitRatios ratios;
  int* slots[] = {&ratios.train, &ratios.valid, &ratios.test};
  std::size_t start = 0;
  for (int k = 0; k < 3; ++k) {
    const std::size_t pos = text.find(':', start);
    if ((k < 2) != (pos != std::string::npos)) throw ConfigError("split must look like 8:1:1, got '" + text + "'");
    const std::string_view field = std::string_view(text).substr(start, pos == std::string::npos ? pos : pos - start);
    if (!parse_number(field, *slots[k]) || *slots[k] < 1) {
      throw ConfigError("split ratios must be positive integers, got '" + text + "'");
    }
    start = pos + 1;
  }
  return ratios;
}

DataSplit user_split(const InteractionLog& log, const SplitRatios& ratios, int max_len) {
  if (ratios.train < 1 || ratios.valid < 1 || ratios.test < 1) throw ConfigError("split ratios must be positive");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");

  // Stable sort keeps file order between equal timestamps.
  std::vector<std::vector<const Interaction*>> per_user(static_cast<std::size_t>(log.user_count()));
  for (const Interaction& r : log.records) per_user[static_cast<std::size_t>(r.user)].push_back(&r);
  for (auto& events : per_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Interaction* a, const Interaction* b) { return a->timestamp < b->timestamp; });
  }

  std::vector<Index> order(per_user.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const std::int64_t ta = per_user[static_cast<std::size_t>(a)].back()->timestamp;
    const std::int64_t tb = per_user[static_cast<std::size_t>(b)].back()->timestamp;
    return ta != tb ? ta < tb : a < b;
  });

  const std::size_t n = order.size();
  if (n < 3) throw DataError("need at least 3 user sequences to split, found " + std::to_string(n));
  const std::size_t total = static_cast<std::size_t>(ratios.train + ratios.valid + ratios.test);
  const std::size_t n_valid = std::max<std::size_t>(1, n * static_cast<std::size_t>(ratios.valid) / total);
  const std::size_t n_test = std::max<std::size_t>(1, n * static_cast<std::size_t>(ratios.test) / total);
  if (n_valid + n_test >= n) throw DataError("split leaves no training sequences");
  const std::size_t n_train = n - n_valid - n_test;

  const ItemId padding = log.item_count();
  auto make_example = [&](Index user) {
    const auto& events = per_user[static_cast<std::size_t>(user)];
    SequenceExample ex;
    ex.user = user;
    ex.target = events.back()->item;
    ex.history.assign(static_cast<std::size_t>(max_len), padding);
    const std::size_t available = events.size() - 1;
    const std::size_t take = std::min<std::size_t>(available, static_cast<std::size_t>(max_len));
    for (std::size_t k = 0; k < take; ++k) {
      ex.history[static_cast<std::size_t>(max_len) - take + k] = events[available - take + k]->item;
    }
    return ex;
  };

  DataSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dest = i < n_train ? split.train : (i < n_train + n_valid ? split.valid : split.test);
    dest.push_back(make_example(order[i]));
  }
  return split;
}

std::vector<Batch> make_batches(std::span<const SequenceExample> set, int batch_size, int negatives, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (negatives < 0) throw ConfigError("negatives must be non-negative");
  if (batch_size == 1 && negatives >= 1) {
    throw ConfigError("batch_size 1 leaves no in-batch negatives; use batch_size >= 2 or negatives = 0");
  }
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Batch batch;
    for (std::size_t k = start; k < end; ++k) batch.examples.push_back(set[order[k]]);

    for (const SequenceExample& ex : batch.examples) {
      std::vector<ItemId> pool;
      for (const SequenceExample& other : batch.examples) {
        if (other.target != ex.target && std::find(pool.begin(), pool.end(), other.target) == pool.end()) {
          pool.push_back(other.target);
        }
      }
      const std::size_t keep = std::min(pool.size(), static_cast<std::size_t>(negatives));
      // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
      for (std::size_t i = 0; i < keep && keep < pool.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      pool.resize(keep);
      batch.negatives.push_back(std::move(pool));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

void SynthConfig::validate() const {
  if (users < 100) throw ConfigError("synthetic users must be at least 100");
  if (items < 20) throw ConfigError("synthetic items must be at least 20");
  if (clusters < 1 || clusters > items) throw ConfigError("synthetic clusters must lie in [1, items]");
  if (latent_dim < 1) throw ConfigError("synthetic latent dimension must be positive");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synthetic noise must lie in [0,1]");
  if (min_length < 2 || max_length < min_length) throw ConfigError("synthetic lengths need 2 <= min <= max");
}

SyntheticData gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticData data;

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(cfg.clusters));
  data.item_cluster.resize(static_cast<std::size_t>(cfg.items));
  for (Index i = 0; i < cfg.items; ++i) {
    const Index c = i * cfg.clusters / cfg.items;
    data.item_cluster[static_cast<std::size_t>(i)] = c;
    members[static_cast<std::size_t>(c)].push_back(i);
  }
  const Matrix centers = random_normal(cfg.clusters, cfg.latent_dim, rng, 3.0);
  data.item_latent = random_normal(cfg.items, cfg.latent_dim, rng, 0.5);
  for (Index i = 0; i < cfg.items; ++i) {
    data.item_latent.row(i) += centers.row(data.item_cluster[static_cast<std::size_t>(i)]);
  }

  std::uniform_int_distribution<Index> pick_cluster(0, cfg.clusters - 1);
  std::uniform_int_distribution<Index> pick_item(0, cfg.items - 1);
  std::uniform_int_distribution<int> pick_length(cfg.min_length, cfg.max_length);
  std::uniform_int_distribution<Index> pick_step(1, 3);
  std::bernoulli_distribution is_noise(cfg.noise);

  std::vector<RawInteraction> raw;
  std::int64_t clock = 0;
  for (Index u = 0; u < cfg.users; ++u) {
    const Index c = pick_cluster(rng);
    data.user_cluster.push_back(c);
    const auto& ring = members[static_cast<std::size_t>(c)];
    const Index ring_size = static_cast<Index>(ring.size());
    Index position = std::uniform_int_distribution<Index>(0, ring_size - 1)(rng);
    const int length = pick_length(rng);
    for (int k = 0; k < length; ++k) {
      Index item;
      if (is_noise(rng)) {
        item = pick_item(rng);
      } else {
        if (k > 0) position = (position + pick_step(rng)) % ring_size;
        item = ring[static_cast<std::size_t>(position)];
      }
      raw.push_back({std::to_string(u), std::to_string(item), clock++});
    }
  }
  data.log = filter_interactions(raw, 1);
  return data;
}

void write_cluster_sidecar(std::ostream& out, const SyntheticData& data) {
  char buf[32];
  for (std::size_t i = 0; i < data.item_cluster.size(); ++i) {
    out << i << '\t' << data.item_cluster[i];
    for (Index k = 0; k < data.item_latent.cols(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.item_latent(static_cast<Index>(i), k));
      out << '\t' << buf;
    }
    out << '\n';
  }
}

ItemEmbeddingTable read_text_embeddings(std::istream& in, const std::string& source, Index expected_count) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw DataError(source + ": empty embedding file");
  Index count = 0;
  Index dim = 0;
  {
    std::istringstream header(line);
    std::string a, b, extra;
    header >> a >> b;
    if (!parse_number(a, count) || !parse_number(b, dim) || (header >> extra) || count < 1 || dim < 1) {
      throw DataError(line_error(source, line_no, "header must be 'N d' with positive integers"));
    }
  }
  if (expected_count >= 0 && count != expected_count) {
    throw DataError(source + ": embedding file has N = " + std::to_string(count) + " rows but the item index has " +
                    std::to_string(expected_count) + " items");
  }
  Matrix weights(count, dim);
  for (Index r = 0; r < count; ++r) {
    if (!next_line()) throw DataError(source + ": missing embedding row " + std::to_string(r));
    std::istringstream fields(line);
    std::string token;
    Index c = 0;
    while (fields >> token) {
      if (c >= dim) throw DataError(line_error(source, line_no, "row " + std::to_string(r) + " has more than d values"));
      double value = 0.0;
      if (!parse_number(token, value)) {
        throw DataError(line_error(source, line_no, "row " + std::to_string(r) + ": '" + token + "' is not a number"));
      }
      weights(r, c++) = value;
    }
    if (c != dim) {
      throw DataError(line_error(source, line_no,
                                 "row " + std::to_string(r) + " has " + std::to_string(c) + " values, expected " +
                                     std::to_string(dim)));
    }
  }
  if (next_line()) throw DataError(line_error(source, line_no, "more rows than the header's N"));
  return ItemEmbeddingTable(std::move(weights), EmbeddingMode::kFrozen);
}

ItemEmbeddingTable import_text_embeddings(const std::filesystem::path& path, Index expected_count) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  return read_text_embeddings(in, path.string(), expected_count);
}

void write_text_embeddings(std::ostream& out, const Matrix& weights) {
  out << weights.rows() << ' ' << weights.cols() << '\n';
  char buf[32];
  for (Index r = 0; r < weights.rows(); ++r) {
    for (Index c = 0; c < weights.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", weights(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace preferdiff
