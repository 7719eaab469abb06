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

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "preferdiff/model.hpp"
#include "preferdiff/tensor.hpp"

namespace preferdiff {

/// One line of an interaction file before filtering.
struct RawInteraction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
};

/// Dense user/item ids after filtering.
struct Interaction {
  Index user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
};

/// Filtered interactions with a bijective original <-> dense id mapping.
/// Dense ids follow first appearance in file order.
struct InteractionLog {
  std::vector<Interaction> records;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::unordered_map<std::string, Index> user_index;
  std::unordered_map<std::string, ItemId> item_index;

  Index user_count() const { return static_cast<Index>(user_keys.size()); }
  Index item_count() const { return static_cast<Index>(item_keys.size()); }
};

/// `user item timestamp` separated by one tab or comma. Blank lines and
/// lines starting with '#' are skipped. `source` prefixes error messages.
std::vector<RawInteraction> parse_interactions(std::istream& in, const std::string& source);

/// Drops users and items with fewer than `min_count` records, repeating
/// until no count changes, then re-indexes densely.
InteractionLog filter_interactions(std::span<const RawInteraction> raw, int min_count);

InteractionLog load_interactions(const std::filesystem::path& path, int min_count);

/// Writes original keys, tab separated, one record per line.
void write_interactions(std::ostream& out, const InteractionLog& log);

/// `history` holds exactly max_len ids, oldest first, left-padded with the
/// padding id (= item count). `target` is never padding.
struct SequenceExample {
  Index user = 0;
  std::vector<ItemId> history;
  ItemId target = 0;
};

struct SplitRatios {
  int train = 8;
  int valid = 1;
  int test = 1;
};

/// Parses "a:b:c" with positive integers.
SplitRatios parse_split_ratios(const std::string& text);

struct DataSplit {
  std::vector<SequenceExample> train;
  std::vector<SequenceExample> valid;
  std::vector<SequenceExample> test;
};

/// Whole users go to one split. Users are ordered by their last timestamp
/// (ties by dense user id); valid and test each take floor(n * r / sum)
/// users, at least one, from the end and train keeps the rest.
DataSplit user_split(const InteractionLog& log, const SplitRatios& ratios, int max_len);

/// Negatives for one example are distinct in-batch targets other than its
/// own, subsampled without replacement to at most `negatives`.
struct Batch {
  std::vector<SequenceExample> examples;
  std::vector<std::vector<ItemId>> negatives;

  Index size() const { return static_cast<Index>(examples.size()); }
};

/// One shuffled epoch. The last short batch is kept.
std::vector<Batch> make_batches(std::span<const SequenceExample> set, int batch_size, int negatives, Rng& rng);

struct SynthConfig {
  Index users = 2000;
  Index items = 200;
  Index clusters = 8;
  Index latent_dim = 16;
  double noise = 0.2;
  int min_length = 8;
  int max_length = 20;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Ground truth is indexed by original item id (0..items-1, written as the
/// item key) so it survives re-indexing.
struct SyntheticData {
  InteractionLog log;
  std::vector<Index> item_cluster;
  Matrix item_latent;
  std::vector<Index> user_cluster;
};

/// Item i sits in cluster i * clusters / items, ordered on a ring inside its
/// cluster. Each user prefers one cluster. Every draw is uniform over the
/// catalogue with probability `noise`; otherwise the user walks 1 to 3
/// places forward on the ring of the preferred cluster.
SyntheticData gen_synthetic(const SynthConfig& cfg);

/// `item<TAB>cluster<TAB>latent_0 ...` per original item.
void write_cluster_sidecar(std::ostream& out, const SyntheticData& data);

/// Header "N d", then N rows of d reals; row i belongs to dense item i.
ItemEmbeddingTable import_text_embeddings(const std::filesystem::path& path, Index expected_count);
ItemEmbeddingTable read_text_embeddings(std::istream& in, const std::string& source, Index expected_count);
void write_text_embeddings(std::ostream& out, const Matrix& weights);

}  // namespace preferdiff
