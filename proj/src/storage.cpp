#include "msight/storage.hpp"

#include "bytes.hpp"
#include "msight/error.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>
#include <limits>

namespace msight {

namespace {

std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

void put_string16(detail::ByteWriter& w, const std::string& s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) throw Error(Errc::InvalidArgument, "field longer than 65535 bytes");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  w.put_bytes(s);
}

}  // namespace

std::string serialize_envelope(const CloudEnvelope& e) {
  detail::ByteWriter w;
  put_string16(w, e.topic);
  w.put<std::uint64_t>(e.received_ts_ms);
  put_string16(w, e.source);
  put_string16(w, e.content_type);
  if (e.payload.size() > std::numeric_limits<std::uint32_t>::max()) throw Error(Errc::InvalidArgument, "payload too large");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.payload.size()));
  w.put_bytes(e.payload);
  return w.take();
}

CloudEnvelope deserialize_envelope(std::string_view bytes) {
  detail::ByteReader r(bytes, Errc::ParseError);
  CloudEnvelope e;
  e.topic = std::string(r.get_bytes(r.get<std::uint16_t>()));
  e.received_ts_ms = r.get<std::uint64_t>();
  e.source = std::string(r.get_bytes(r.get<std::uint16_t>()));
  e.content_type = std::string(r.get_bytes(r.get<std::uint16_t>()));
  e.payload = std::string(r.get_bytes(r.get<std::uint32_t>()));
  if (r.remaining() != 0) throw Error(Errc::ParseError, "trailing bytes in envelope");
  return e;
}

std::string hour_bucket(std::uint64_t ts_ms) {
  const std::time_t t = static_cast<std::time_t>(ts_ms / 1000);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[16];
  std::strftime(buf, sizeof(buf), "%Y%m%d%H", &tm);
  return buf;
}

StorageSink::StorageSink(std::filesystem::path root, StorageOptions opt) : root_(std::move(root)), opt_(opt) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw Error(Errc::StorageUnavailable, "cannot create storage root " + root_.string() + ": " + ec.message());
  if (opt_.fsync_every == 0) opt_.fsync_every = 1;
}

StorageSink::~StorageSink() {
  std::lock_guard lk(mu_);
  for (auto& [path, f] : files_) {
    if (f.unsynced > 0) ::fsync(f.fd);
    ::close(f.fd);
  }
}

std::filesystem::path StorageSink::file_for(const std::string& topic, std::uint64_t ts_ms) const {
  return root_ / topic / (hour_bucket(ts_ms) + ".log");
}

StorageSink::OpenFile& StorageSink::open_for(const std::string& topic, std::uint64_t ts_ms) {
  const auto path = file_for(topic, ts_ms);
  auto it = files_.find(path);
  if (it != files_.end()) return it->second;
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(Errc::StorageUnavailable, "cannot create " + path.parent_path().string());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(Errc::StorageUnavailable, "cannot open " + path.string() + ": " + std::strerror(errno));
  return files_.emplace(path, OpenFile{fd, 0}).first->second;
}

void StorageSink::append(const CloudEnvelope& env) {
  if (!valid_topic(env.topic)) throw Error(Errc::InvalidTopic, "topic '" + env.topic + "' is invalid");
  const std::string body = serialize_envelope(env);
  detail::ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(body.size()));
  w.put_bytes(body);
  w.put<std::uint32_t>(crc32_of(body));
  const std::string record = w.take();

  std::lock_guard lk(mu_);
  if (opt_.quota_bytes > 0 && bytes_ + record.size() > opt_.quota_bytes)
    throw Error(Errc::StorageUnavailable, "storage quota exhausted (disk full)");
  OpenFile& f = open_for(env.topic, env.received_ts_ms);
  const off_t start = ::lseek(f.fd, 0, SEEK_END);
  std::size_t done = 0;
  while (done < record.size()) {
    const auto n = ::write(f.fd, record.data() + done, record.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      // Best effort: drop the partial record so replay stays aligned.
      if (start >= 0) [[maybe_unused]] const int rc = ::ftruncate(f.fd, start);
      throw Error(Errc::StorageUnavailable, std::string("write failed: ") + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  ++records_;
  bytes_ += record.size();
  if (++f.unsynced >= opt_.fsync_every) {
    if (::fsync(f.fd) != 0) throw Error(Errc::StorageUnavailable, std::string("fsync failed: ") + std::strerror(errno));
    f.unsynced = 0;
    ++fsyncs_;
  }
}

void StorageSink::flush() {
  std::lock_guard lk(mu_);
  for (auto& [path, f] : files_) {
    if (f.unsynced == 0) continue;
    if (::fsync(f.fd) != 0) throw Error(Errc::StorageUnavailable, "fsync failed for " + path.string());
    f.unsynced = 0;
    ++fsyncs_;
  }
}

std::uint64_t StorageSink::records_written() const {
  std::lock_guard lk(mu_);
  return records_;
}

std::uint64_t StorageSink::bytes_written() const {
  std::lock_guard lk(mu_);
  return bytes_;
}

std::uint64_t StorageSink::fsyncs() const {
  std::lock_guard lk(mu_);
  return fsyncs_;
}

ReplayResult replay_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + file.string());
  const std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ReplayResult r;
  std::size_t pos = 0;
  while (pos < data.size()) {
    if (data.size() - pos < 4) {
      r.truncated_tail = 1;
      break;
    }
    detail::ByteReader len_reader(std::string_view(data).substr(pos, 4), Errc::ParseError);
    const auto len = len_reader.get<std::uint32_t>();
    if (data.size() - pos < 8 + static_cast<std::size_t>(len)) {
      r.truncated_tail = 1;
      break;
    }
    const std::string_view body = std::string_view(data).substr(pos + 4, len);
    detail::ByteReader crc_reader(std::string_view(data).substr(pos + 4 + len, 4), Errc::ParseError);
    if (crc_reader.get<std::uint32_t>() != crc32_of(body)) {
      ++r.corrupt;
      break;
    }
    try {
      r.envelopes.push_back(deserialize_envelope(body));
    } catch (const Error&) {
      ++r.corrupt;
      break;
    }
    pos += 8 + len;
  }
  return r;
}

namespace {

void merge(ReplayResult& into, ReplayResult&& part) {
  std::move(part.envelopes.begin(), part.envelopes.end(), std::back_inserter(into.envelopes));
  into.truncated_tail += part.truncated_tail;
  into.corrupt += part.corrupt;
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".log"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

ReplayResult replay_topic(const std::filesystem::path& root, const std::string& topic) {
  ReplayResult r;
  for (const auto& f : sorted_entries(root / topic, false)) merge(r, replay_file(f));
  return r;
}

ReplayResult replay_all(const std::filesystem::path& root) {
  ReplayResult r;
  for (const auto& d : sorted_entries(root, true)) merge(r, replay_topic(root, d.filename().string()));
  return r;
}

}  // namespace msight
