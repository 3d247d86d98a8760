#pragma once

#include "msight/pubsub.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace msight {

struct StorageOptions {
  std::size_t fsync_every = 64;
  /// Bytes the sink may write in total before reporting a full disk; 0 means unlimited.
  std::uint64_t quota_bytes = 0;
};

/// Envelope body inside a record: topic, received_ts, source, content_type, payload.
std::string serialize_envelope(const CloudEnvelope& e);
/// Throws ParseError.
CloudEnvelope deserialize_envelope(std::string_view bytes);

/// UTC hour bucket "YYYYMMDDHH".
std::string hour_bucket(std::uint64_t ts_ms);

/// Append-only store: root/<topic>/<YYYYMMDDHH>.log holding records of
/// u32 length + envelope + u32 CRC-32 of the envelope.
class StorageSink {
 public:
  /// Throws StorageUnavailable when root cannot be created.
  explicit StorageSink(std::filesystem::path root, StorageOptions opt = {});
  ~StorageSink();
  StorageSink(const StorageSink&) = delete;
  StorageSink& operator=(const StorageSink&) = delete;

  /// Returns after the record reached the OS. Throws StorageUnavailable
  /// (disk full or write error); a failed append leaves no partial record.
  void append(const CloudEnvelope& env);
  void flush();

  std::filesystem::path file_for(const std::string& topic, std::uint64_t ts_ms) const;
  const std::filesystem::path& root() const { return root_; }
  std::uint64_t records_written() const;
  std::uint64_t bytes_written() const;
  std::uint64_t fsyncs() const;

 private:
  struct OpenFile {
    int fd = -1;
    std::size_t unsynced = 0;
  };
  OpenFile& open_for(const std::string& topic, std::uint64_t ts_ms);

  std::filesystem::path root_;
  StorageOptions opt_;
  mutable std::mutex mu_;
  std::map<std::filesystem::path, OpenFile> files_;
  std::uint64_t records_ = 0;
  std::uint64_t bytes_ = 0;
  std::uint64_t fsyncs_ = 0;
};

struct ReplayResult {
  std::vector<CloudEnvelope> envelopes;
  std::size_t truncated_tail = 0;  // incomplete final record
  std::size_t corrupt = 0;         // CRC or body failures (replay stops there)
};

/// Throws IoError when the file cannot be opened.
ReplayResult replay_file(const std::filesystem::path& file);
/// Every hourly file of one topic, oldest first.
ReplayResult replay_topic(const std::filesystem::path& root, const std::string& topic);
/// Every topic under root, in topic then time order.
ReplayResult replay_all(const std::filesystem::path& root);

}  // namespace msight
