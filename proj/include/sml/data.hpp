#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sml {

/// Dense item index in [0, vocab size).
using ItemIndex = std::int32_t;

struct RawEvent {
  std::string session_id;
  std::int64_t timestamp = 0;  // milliseconds since epoch
  std::string item_id;

  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

enum class InputFormat { Csv, Jsonl };

/// Guesses the format from the file extension (".jsonl"/".json" -> Jsonl).
InputFormat format_from_path(const std::filesystem::path& path);

struct IngestResult {
  std::vector<RawEvent> events;
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::vector<std::string> warnings;
};

/// Reads raw interaction events in file order. Malformed rows (empty ids,
/// unparseable or negative timestamps) are skipped and reported; more than
/// 10% skipped rows is a DataError.
IngestResult ingest(const std::filesystem::path& path, InputFormat format);
IngestResult ingest_csv(std::istream& in);
IngestResult ingest_jsonl(std::istream& in);

/// Bijection between opaque item ids and dense indices, with occurrence
/// counts of each item in the dataset it was built from.
class ItemVocab {
 public:
  ItemVocab() = default;

  /// Returns the index of `id`, inserting it with a zero count if absent.
  ItemIndex insert(const std::string& id);
  std::optional<ItemIndex> find(std::string_view id) const;
  const std::string& id(ItemIndex index) const;

  std::size_t count(ItemIndex index) const { return counts_.at(static_cast<std::size_t>(index)); }
  void set_count(ItemIndex index, std::size_t c) { counts_.at(static_cast<std::size_t>(index)) = c; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  friend bool operator==(const ItemVocab& a, const ItemVocab& b) {
    return a.ids_ == b.ids_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, ItemIndex> index_;
};

struct Session {
  std::string session_id;
  std::vector<ItemIndex> items;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return items.size(); }
  std::int64_t start_time() const { return timestamps.empty() ? 0 : timestamps.front(); }

  friend bool operator==(const Session&, const Session&) = default;
};

struct Dataset {
  std::vector<Session> sessions;
  ItemVocab vocab;
  std::size_t max_session_length = 15;

  std::size_t event_count() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Split {
  Dataset train;
  Dataset test;
};

struct PreprocessConfig {
  std::size_t min_item_count = 5;
  std::size_t min_session_length = 2;
  std::size_t max_session_length = 15;
};

/// Groups events into sessions and applies the item-frequency filter, the
/// session-length filter and suffix truncation, repeated until none of them
/// changes the data. Sessions are ordered by start time (stable on ties);
/// vocab indices follow first appearance in that order.
Dataset preprocess(std::span<const RawEvent> events, const PreprocessConfig& config = {});

/// Flattens a dataset back into events (session order, then event order).
std::vector<RawEvent> to_events(const Dataset& dataset);

/// Stable-sorts sessions by start time and cuts the last
/// ceil(n * test_fraction) off as the test part. No vocabulary closure.
std::pair<std::vector<Session>, std::vector<Session>> partition_by_start_time(
    const Dataset& dataset, double test_fraction);

/// Chronological train/test split. Test items never seen in a train session
/// are removed from test sessions; test sessions left shorter than 2 are
/// dropped. Both halves keep the input vocabulary (indices and corpus counts).
Split split_train_test(const Dataset& dataset, double test_fraction = 0.1);

struct DatasetStats {
  std::map<std::size_t, std::size_t> length_histogram;
  // 1 - unique_items / |items| per session, in dataset order.
  std::vector<std::pair<std::string, double>> repeat_fraction;
};

DatasetStats stats(const Dataset& dataset);
void write_length_histogram_tsv(const DatasetStats& s, std::ostream& out);
void write_repeat_fraction_tsv(const DatasetStats& s, std::ostream& out);

// Intermediate on-disk formats: JSONL sessions with opaque item ids plus a
// TSV vocabulary (`item_id<TAB>count`, one line per index).
void write_sessions_jsonl(const Dataset& dataset, std::ostream& out);
std::vector<Session> read_sessions_jsonl(std::istream& in, const ItemVocab& vocab);
void write_vocab_tsv(const ItemVocab& vocab, std::ostream& out);
ItemVocab read_vocab_tsv(std::istream& in);

void save_dataset(const Dataset& dataset, const std::filesystem::path& sessions_path);
Dataset load_dataset(const std::filesystem::path& sessions_path, const ItemVocab& vocab,
                     std::size_t max_session_length = 15);
ItemVocab load_vocab(const std::filesystem::path& path);
void save_vocab(const ItemVocab& vocab, const std::filesystem::path& path);

/// Rebuilds the counts of `vocab` from the items in `sessions`.
void recount(ItemVocab& vocab, std::span<const Session> sessions);

}  // namespace sml
