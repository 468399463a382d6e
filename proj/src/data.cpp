#include "sml/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "sml/error.hpp"

namespace sml {

namespace {

using json = nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

std::optional<std::int64_t> parse_timestamp(std::string_view text) {
  std::int64_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || value < 0) return std::nullopt;
  return value;
}

void check_skip_ratio(const IngestResult& r) {
  if (r.rows_read > 0 && r.rows_skipped * 10 > r.rows_read) {
    throw DataError("too many malformed rows: " + std::to_string(r.rows_skipped) + " of " +
                    std::to_string(r.rows_read) + " skipped");
  }
}

std::string json_to_id(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  return {};
}

std::optional<std::int64_t> json_to_timestamp(const json& v) {
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(INT64_MAX)) return std::nullopt;
    return static_cast<std::int64_t>(u);
  }
  if (v.is_number_integer()) {
    auto i = v.get<std::int64_t>();
    return i < 0 ? std::nullopt : std::optional<std::int64_t>(i);
  }
  if (v.is_string()) return parse_timestamp(v.get_ref<const std::string&>());
  return std::nullopt;
}

struct WorkingSession {
  std::string id;
  std::vector<std::string> items;
  std::vector<std::int64_t> timestamps;
};

}  // namespace

InputFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") ? InputFormat::Jsonl : InputFormat::Csv;
}

IngestResult ingest_csv(std::istream& in) {
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: missing CSV header");

  auto header = split_commas(line);
  auto column = [&](std::string_view name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing required column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t session_col = column("session_id");
  const std::size_t time_col = column("timestamp");
  const std::size_t item_col = column("item_id");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.rows_read;
    auto fields = split_commas(line);
    auto skip = [&](const std::string& why) {
      ++result.rows_skipped;
      result.warnings.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != header.size()) {
      skip("expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    if (fields[session_col].empty() || fields[item_col].empty()) {
      skip("empty session_id or item_id");
      continue;
    }
    auto ts = parse_timestamp(fields[time_col]);
    if (!ts) {
      skip("unparseable timestamp '" + std::string(fields[time_col]) + "'");
      continue;
    }
    result.events.push_back({std::string(fields[session_col]), *ts, std::string(fields[item_col])});
  }
  check_skip_ratio(result);
  return result;
}

IngestResult ingest_jsonl(std::istream& in) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.rows_read;
    auto skip = [&](const std::string& why) {
      ++result.rows_skipped;
      result.warnings.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object()) {
      skip("not a JSON object");
      continue;
    }
    if (!record.contains("session_id") || !record.contains("timestamp") || !record.contains("item_id")) {
      skip("missing session_id, timestamp or item_id");
      continue;
    }
    RawEvent ev{json_to_id(record["session_id"]), 0, json_to_id(record["item_id"])};
    if (ev.session_id.empty() || ev.item_id.empty()) {
      skip("empty session_id or item_id");
      continue;
    }
    auto ts = json_to_timestamp(record["timestamp"]);
    if (!ts) {
      skip("unparseable timestamp");
      continue;
    }
    ev.timestamp = *ts;
    result.events.push_back(std::move(ev));
  }
  check_skip_ratio(result);
  return result;
}

IngestResult ingest(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return format == InputFormat::Csv ? ingest_csv(in) : ingest_jsonl(in);
}

// ---------------------------------------------------------------------------

ItemIndex ItemVocab::insert(const std::string& id) {
  auto [it, inserted] = index_.try_emplace(id, static_cast<ItemIndex>(ids_.size()));
  if (inserted) {
    ids_.push_back(id);
    counts_.push_back(0);
  }
  return it->second;
}

std::optional<ItemIndex> ItemVocab::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& ItemVocab::id(ItemIndex index) const { return ids_.at(static_cast<std::size_t>(index)); }

std::size_t Dataset::event_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.size();
  return n;
}

void recount(ItemVocab& vocab, std::span<const Session> sessions) {
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (const auto& s : sessions)
    for (auto item : s.items) ++counts.at(static_cast<std::size_t>(item));
  for (std::size_t i = 0; i < counts.size(); ++i) vocab.set_count(static_cast<ItemIndex>(i), counts[i]);
}

Dataset preprocess(std::span<const RawEvent> events, const PreprocessConfig& config) {
  if (events.empty()) throw DataError("no events to preprocess");
  if (config.max_session_length < config.min_session_length || config.max_session_length == 0)
    throw UsageError("max_session_length must be >= min_session_length and positive");

  std::vector<WorkingSession> sessions;
  {
    std::unordered_map<std::string, std::size_t> by_id;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < events.size(); ++i) {
      auto [it, inserted] = by_id.try_emplace(events[i].session_id, sessions.size());
      if (inserted) {
        sessions.push_back({events[i].session_id, {}, {}});
        members.emplace_back();
      }
      members[it->second].push_back(i);
    }
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      auto& idx = members[s];
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return events[a].timestamp < events[b].timestamp; });
      for (auto i : idx) {
        sessions[s].items.push_back(events[i].item_id);
        sessions[s].timestamps.push_back(events[i].timestamp);
      }
    }
  }

  // Truncation and session removal can push an item below the frequency
  // threshold, so the three rules run until a fixpoint.
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& s : sessions)
      for (const auto& item : s.items) ++counts[item];

    std::vector<WorkingSession> kept;
    kept.reserve(sessions.size());
    for (auto& s : sessions) {
      WorkingSession out{std::move(s.id), {}, {}};
      for (std::size_t j = 0; j < s.items.size(); ++j) {
        if (counts[s.items[j]] >= config.min_item_count) {
          out.items.push_back(std::move(s.items[j]));
          out.timestamps.push_back(s.timestamps[j]);
        }
      }
      if (out.items.size() != s.items.size()) changed = true;
      if (out.items.size() < config.min_session_length) {
        changed = true;
        continue;
      }
      if (out.items.size() > config.max_session_length) {
        auto drop = static_cast<std::ptrdiff_t>(out.items.size() - config.max_session_length);
        out.items.erase(out.items.begin(), out.items.begin() + drop);
        out.timestamps.erase(out.timestamps.begin(), out.timestamps.begin() + drop);
        changed = true;
      }
      kept.push_back(std::move(out));
    }
    sessions = std::move(kept);
  }
  if (sessions.empty()) throw DataError("all sessions were filtered out during preprocessing");

  std::stable_sort(sessions.begin(), sessions.end(), [](const WorkingSession& a, const WorkingSession& b) {
    return a.timestamps.front() < b.timestamps.front();
  });

  Dataset dataset;
  dataset.max_session_length = config.max_session_length;
  dataset.sessions.reserve(sessions.size());
  for (auto& s : sessions) {
    Session out{std::move(s.id), {}, std::move(s.timestamps)};
    out.items.reserve(s.items.size());
    for (const auto& item : s.items) out.items.push_back(dataset.vocab.insert(item));
    dataset.sessions.push_back(std::move(out));
  }
  recount(dataset.vocab, dataset.sessions);
  return dataset;
}

std::vector<RawEvent> to_events(const Dataset& dataset) {
  std::vector<RawEvent> events;
  events.reserve(dataset.event_count());
  for (const auto& s : dataset.sessions)
    for (std::size_t j = 0; j < s.size(); ++j)
      events.push_back({s.session_id, s.timestamps[j], dataset.vocab.id(s.items[j])});
  return events;
}

std::pair<std::vector<Session>, std::vector<Session>> partition_by_start_time(const Dataset& dataset,
                                                                             double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must be in (0, 1)");
  std::vector<Session> ordered = dataset.sessions;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Session& a, const Session& b) { return a.start_time() < b.start_time(); });
  auto n_test = static_cast<std::size_t>(std::ceil(static_cast<double>(ordered.size()) * test_fraction));
  n_test = std::min(n_test, ordered.size());
  auto cut = ordered.begin() + static_cast<std::ptrdiff_t>(ordered.size() - n_test);
  std::vector<Session> test(std::make_move_iterator(cut), std::make_move_iterator(ordered.end()));
  ordered.erase(cut, ordered.end());
  return {std::move(ordered), std::move(test)};
}

Split split_train_test(const Dataset& dataset, double test_fraction) {
  auto [train_sessions, test_sessions] = partition_by_start_time(dataset, test_fraction);

  std::vector<bool> seen(dataset.vocab.size(), false);
  for (const auto& s : train_sessions)
    for (auto item : s.items) seen[static_cast<std::size_t>(item)] = true;

  std::vector<Session> closed;
  for (auto& s : test_sessions) {
    Session out{s.session_id, {}, {}};
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (seen[static_cast<std::size_t>(s.items[j])]) {
        out.items.push_back(s.items[j]);
        out.timestamps.push_back(s.timestamps[j]);
      }
    }
    if (out.size() >= 2) closed.push_back(std::move(out));
  }
  if (closed.empty()) throw DataError("test split is empty after removing items unseen in train");
  if (train_sessions.empty()) throw DataError("train split is empty");

  Split split;
  split.train.sessions = std::move(train_sessions);
  split.train.vocab = dataset.vocab;
  split.train.max_session_length = dataset.max_session_length;
  split.test.sessions = std::move(closed);
  split.test.vocab = dataset.vocab;
  split.test.max_session_length = dataset.max_session_length;
  return split;
}

DatasetStats stats(const Dataset& dataset) {
  DatasetStats out;
  for (const auto& s : dataset.sessions) {
    ++out.length_histogram[s.size()];
    std::unordered_set<ItemIndex> unique(s.items.begin(), s.items.end());
    double frac = s.items.empty() ? 0.0 : 1.0 - static_cast<double>(unique.size()) / static_cast<double>(s.size());
    out.repeat_fraction.emplace_back(s.session_id, frac);
  }
  return out;
}

void write_length_histogram_tsv(const DatasetStats& s, std::ostream& out) {
  out << "length\tcount\n";
  for (const auto& [length, count] : s.length_histogram) out << length << '\t' << count << '\n';
}

void write_repeat_fraction_tsv(const DatasetStats& s, std::ostream& out) {
  out << "session_id\trepeat_fraction\n";
  std::ostringstream num;
  num.precision(6);
  for (const auto& [id, frac] : s.repeat_fraction) {
    num.str({});
    num << frac;
    out << id << '\t' << num.str() << '\n';
  }
}

void write_sessions_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const auto& s : dataset.sessions) {
    json items = json::array();
    for (auto item : s.items) items.push_back(dataset.vocab.id(item));
    json record{{"session_id", s.session_id}, {"items", std::move(items)}, {"timestamps", s.timestamps}};
    out << record.dump() << '\n';
  }
}

std::vector<Session> read_sessions_jsonl(std::istream& in, const ItemVocab& vocab) {
  std::vector<Session> sessions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    const std::string where = "session file line " + std::to_string(line_no);
    if (record.is_discarded() || !record.is_object() || !record.contains("session_id") ||
        !record.contains("items") || !record.contains("timestamps"))
      throw DataError(where + ": expected object with session_id, items, timestamps");
    Session s;
    s.session_id = json_to_id(record["session_id"]);
    const auto& items = record["items"];
    const auto& times = record["timestamps"];
    if (!items.is_array() || !times.is_array() || items.size() != times.size())
      throw DataError(where + ": items and timestamps must be arrays of equal length");
    for (std::size_t j = 0; j < items.size(); ++j) {
      auto index = vocab.find(json_to_id(items[j]));
      if (!index) throw DataError(where + ": item '" + json_to_id(items[j]) + "' not in vocabulary");
      auto ts = json_to_timestamp(times[j]);
      if (!ts) throw DataError(where + ": bad timestamp");
      s.items.push_back(*index);
      s.timestamps.push_back(*ts);
    }
    sessions.push_back(std::move(s));
  }
  return sessions;
}

void write_vocab_tsv(const ItemVocab& vocab, std::ostream& out) {
  for (std::size_t i = 0; i < vocab.size(); ++i)
    out << vocab.ids()[i] << '\t' << vocab.count(static_cast<ItemIndex>(i)) << '\n';
}

ItemVocab read_vocab_tsv(std::istream& in) {
  ItemVocab vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) throw DataError("malformed vocabulary line: " + line);
    std::string id = line.substr(0, tab);
    std::size_t count = 0;
    auto tail = std::string_view(line).substr(tab + 1);
    auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), count);
    if (ec != std::errc{} || ptr != tail.data() + tail.size()) throw DataError("malformed vocabulary count: " + line);
    if (vocab.find(id)) throw DataError("duplicate vocabulary id: " + id);
    vocab.set_count(vocab.insert(id), count);
  }
  return vocab;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& sessions_path) {
  std::ofstream out(sessions_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + sessions_path.string());
  write_sessions_jsonl(dataset, out);
}

Dataset load_dataset(const std::filesystem::path& sessions_path, const ItemVocab& vocab,
                     std::size_t max_session_length) {
  std::ifstream in(sessions_path);
  if (!in) throw DataError("cannot open " + sessions_path.string());
  Dataset dataset;
  dataset.vocab = vocab;
  dataset.max_session_length = max_session_length;
  dataset.sessions = read_sessions_jsonl(in, vocab);
  for (auto& s : dataset.sessions) {
    if (s.size() > max_session_length) {
      auto drop = static_cast<std::ptrdiff_t>(s.size() - max_session_length);
      s.items.erase(s.items.begin(), s.items.begin() + drop);
      s.timestamps.erase(s.timestamps.begin(), s.timestamps.begin() + drop);
    }
  }
  return dataset;
}

ItemVocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_vocab_tsv(in);
}

void save_vocab(const ItemVocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_vocab_tsv(vocab, out);
}

}  // namespace sml
