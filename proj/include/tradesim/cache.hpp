#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <list>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tradesim/rng.hpp"

namespace tradesim::cache {

/// Time is integer milliseconds throughout this module.
using Millis = std::int64_t;

/// Stable 64-bit hash (FNV-1a followed by a murmur3 finalizer).
std::uint64_t stable_hash(std::string_view bytes);

struct CacheConfig {
  std::size_t l1_capacity = 1000;
  Millis l1_ttl_ms = 10'000;
  std::size_t l2_capacity = 10'000;  // total across shards
  Millis l2_ttl_ms = 60'000;
  std::uint32_t l2_shards = 4;
  std::uint32_t l2_virtual_nodes = 128;
  std::size_t l3_retention = 8;  // versions kept per key; 0 keeps all
  std::string l3_log_path;       // empty disables write-through

  void validate() const;
};

enum class Tier { kL1 = 1, kL2 = 2, kL3 = 3, kMiss = 0 };
const char* tier_name(Tier t);

struct CacheEntry {
  std::string key;
  std::string value;
  std::uint64_t version = 0;
  Millis inserted_at = 0;
  Millis last_access = 0;
};

struct GetResult {
  Tier tier = Tier::kMiss;
  std::string value;
  std::uint64_t version = 0;

  bool hit() const { return tier != Tier::kMiss; }
};

struct TierStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  std::uint64_t expired = 0;

  std::uint64_t lookups() const { return hits + misses; }
};

struct CacheStats {
  TierStats l1, l2, l3;
  std::uint64_t lookups = 0;
  /// (L1 hits + L2 hits) / lookups; 0 with `defined` false when nothing was looked up.
  double memory_hit_rate = 0.0;
  bool defined = false;
};

/// One LRU tier with a TTL measured from insertion (or promotion).
class LruTier {
 public:
  LruTier(std::size_t capacity, Millis ttl_ms);

  /// Unexpired entry, refreshing its recency. Expired entries are dropped and reported as a miss.
  const CacheEntry* get(const std::string& key, Millis now);
  /// Entry regardless of expiry, without touching recency.
  const CacheEntry* peek(const std::string& key) const;
  /// Inserts or replaces; evicts (expired first, then LRU) to stay within capacity.
  void install(const std::string& key, const std::string& value, std::uint64_t version, Millis now);
  /// Re-inserts an entry keeping its original timestamps (shard relocation).
  void adopt(CacheEntry entry, Millis now);
  bool erase(const std::string& key);

  /// Drops all entries older than the TTL. Returns how many.
  std::size_t purge_expired(Millis now);
  /// Purges expired entries, then removes the least recently used live one.
  std::optional<std::string> evict_lru(Millis now);

  bool expired(const CacheEntry& e, Millis now) const { return now - e.inserted_at > ttl_; }
  std::size_t size() const { return index_.size(); }
  std::size_t capacity() const { return capacity_; }
  Millis ttl() const { return ttl_; }
  const TierStats& stats() const { return stats_; }
  TierStats& stats() { return stats_; }
  /// Keys from most to least recently used.
  std::vector<std::string> keys_by_recency() const;
  std::vector<CacheEntry> entries() const;
  /// Least recently used entry, or null when empty.
  const CacheEntry* lru_entry() const;

 private:
  struct Slot {
    CacheEntry entry;
    std::list<std::string>::iterator lru;
    std::list<std::string>::iterator fifo;
  };
  void remove(std::unordered_map<std::string, Slot>::iterator it);
  void make_room(Millis now);

  std::size_t capacity_;
  Millis ttl_;
  std::list<std::string> lru_;   // front = most recent
  std::list<std::string> fifo_;  // front = oldest insertion
  std::unordered_map<std::string, Slot> index_;
  TierStats stats_;
};

/// Consistent-hash ring with virtual nodes.
class HashRing {
 public:
  explicit HashRing(std::uint32_t virtual_nodes = 128) : vnodes_(virtual_nodes) {}

  void add(std::uint32_t shard);
  void remove(std::uint32_t shard);
  /// Throws ConfigError on an empty ring.
  std::uint32_t assign(std::string_view key) const;
  bool contains(std::uint32_t shard) const;
  std::vector<std::uint32_t> shards() const;
  bool empty() const { return points_.empty(); }
  std::size_t point_count() const { return points_.size(); }

 private:
  std::uint32_t vnodes_;
  std::map<std::uint64_t, std::uint32_t> points_;
};

struct VersionRecord {
  std::uint64_t version = 0;
  std::string value;
  Millis written_at = 0;
};

struct LogRecord {
  std::string key;
  std::string value;
  std::uint64_t version = 0;
  std::int64_t tick = 0;
  bool operator==(const LogRecord&) const = default;
};

/// Reads a write-through log: u32 LE key length, key, u32 LE value length,
/// value, u64 LE version, i64 LE tick per record.
std::vector<LogRecord> read_log(const std::string& path);
void append_log_record(std::ostream& out, const LogRecord& r);

/// L1 LRU/TTL, L2 consistent-hash sharded LRU/TTL, L3 authoritative versioned store.
class CacheHierarchy {
 public:
  explicit CacheHierarchy(CacheConfig config);

  GetResult get(const std::string& key, Millis now, std::optional<std::uint64_t> snapshot_version = std::nullopt);
  std::uint64_t put(const std::string& key, const std::string& value, Millis now);

  /// L1 or L2 (all shards, oldest-first by shard id). Tier::kL3 is rejected.
  std::optional<std::string> evict_lru(Tier tier, Millis now);
  void purge_expired(Millis now);

  std::uint32_t ring_assign(const std::string& key) const { return ring_.assign(key); }
  /// Adds a shard and moves the L2 entries whose owner changed. Returns the number moved.
  std::size_t ring_add(std::uint32_t shard);
  std::size_t ring_remove(std::uint32_t shard);

  CacheStats stats() const;
  void reset_stats();

  /// Latest committed value in L3, ignoring the memory tiers.
  std::optional<VersionRecord> l3_latest(const std::string& key) const;
  const std::deque<VersionRecord>* l3_versions(const std::string& key) const;
  /// Rebuilds L3 from a write-through log.
  void recover_l3(const std::vector<LogRecord>& records);

  const LruTier& l1() const { return l1_; }
  const LruTier* l2_shard(std::uint32_t shard) const;
  std::size_t l2_size() const;
  std::size_t l2_shard_capacity() const { return shard_capacity_; }
  const HashRing& ring() const { return ring_; }
  const CacheConfig& config() const { return config_; }

 private:
  LruTier& shard_for(const std::string& key);
  void store_l3(const std::string& key, VersionRecord rec);

  CacheConfig config_;
  LruTier l1_;
  HashRing ring_;
  std::size_t shard_capacity_;
  std::map<std::uint32_t, LruTier> l2_;
  // Hit/miss counts live here; evictions and expiries are summed from the tiers.
  TierStats l1_stats_;
  TierStats l2_stats_;
  TierStats l3_stats_;
  TierStats retired_l2_;  // eviction/expiry counts of removed shards
  std::uint64_t lookups_ = 0;
  std::unordered_map<std::string, std::deque<VersionRecord>> l3_;
  std::unordered_map<std::string, std::uint64_t> latest_version_;
  std::unique_ptr<std::ofstream> log_;
};

/// Zipf(s) over ranks 1..n by inverse CDF; rank r has weight r^-s.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s);
  /// Rank in [0, n).
  std::uint64_t sample(Rng& rng) const;
  double probability(std::uint64_t rank) const;

 private:
  std::vector<double> cdf_;
};

struct TraceOp {
  std::int64_t tick = 0;
  enum Kind { kGet, kPut } op = kGet;
  std::string key;
};

/// Trace CSV with header `tick,op,key`; op is get or put.
std::vector<TraceOp> parse_trace_csv(const std::string& text);

/// Replays a trace, with tick * tick_ms as the clock. Puts write "<key>@<tick>".
/// With `read_through`, a get that misses every tier loads the key with a put.
CacheStats replay_trace(CacheHierarchy& cache, const std::vector<TraceOp>& trace, Millis tick_ms = 1000,
                        bool read_through = false);

/// Read-through Zipf workload: `reads` gets over `key_space` keys issued at a
/// steady `reads_per_second`. Keys are "k<rank>".
CacheStats run_zipf_reads(CacheHierarchy& cache, std::uint64_t key_space, double s, std::uint64_t reads,
                          std::uint64_t seed, double reads_per_second = 25000.0);

}  // namespace tradesim::cache
