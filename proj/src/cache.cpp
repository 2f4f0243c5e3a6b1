#include "tradesim/cache.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tradesim/common.hpp"

namespace tradesim::cache {

std::uint64_t stable_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // fmix64: FNV alone clusters badly on short, similar keys.
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

void CacheConfig::validate() const {
  if (l1_capacity == 0) throw ConfigError("cache.l1_capacity", "must be > 0");
  if (l2_capacity == 0) throw ConfigError("cache.l2_capacity", "must be > 0");
  if (l1_ttl_ms <= 0) throw ConfigError("cache.l1_ttl_ms", "must be > 0");
  if (l2_ttl_ms <= 0) throw ConfigError("cache.l2_ttl_ms", "must be > 0");
  if (l2_shards == 0) throw ConfigError("cache.l2_shards", "must be >= 1");
  if (l2_virtual_nodes == 0) throw ConfigError("cache.l2_virtual_nodes", "must be >= 1");
  if (l2_capacity < l2_shards) throw ConfigError("cache.l2_capacity", "must be >= l2_shards");
}

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::kL1: return "L1";
    case Tier::kL2: return "L2";
    case Tier::kL3: return "L3";
    case Tier::kMiss: return "miss";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// LruTier

LruTier::LruTier(std::size_t capacity, Millis ttl_ms) : capacity_(capacity), ttl_(ttl_ms) {
  if (capacity == 0) throw std::invalid_argument("LruTier: capacity must be > 0");
}

void LruTier::remove(std::unordered_map<std::string, Slot>::iterator it) {
  lru_.erase(it->second.lru);
  fifo_.erase(it->second.fifo);
  index_.erase(it);
}

const CacheEntry* LruTier::get(const std::string& key, Millis now) {
  auto it = index_.find(key);
  if (it == index_.end()) return nullptr;
  if (expired(it->second.entry, now)) {
    remove(it);
    ++stats_.expired;
    return nullptr;
  }
  lru_.splice(lru_.begin(), lru_, it->second.lru);
  it->second.entry.last_access = std::max(it->second.entry.last_access, now);
  return &it->second.entry;
}

const CacheEntry* LruTier::peek(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &it->second.entry;
}

const CacheEntry* LruTier::lru_entry() const {
  if (lru_.empty()) return nullptr;
  return &index_.at(lru_.back()).entry;
}

std::size_t LruTier::purge_expired(Millis now) {
  std::size_t n = 0;
  for (auto it = fifo_.begin(); it != fifo_.end();) {
    auto slot = index_.find(*it);
    if (!expired(slot->second.entry, now)) break;
    ++it;
    remove(slot);
    ++stats_.expired;
    ++n;
  }
  return n;
}

void LruTier::make_room(Millis now) {
  if (index_.size() < capacity_) return;
  purge_expired(now);
  while (index_.size() >= capacity_) {
    remove(index_.find(lru_.back()));
    ++stats_.evictions;
  }
}

std::optional<std::string> LruTier::evict_lru(Millis now) {
  purge_expired(now);
  if (lru_.empty()) return std::nullopt;
  std::string key = lru_.back();
  remove(index_.find(key));
  ++stats_.evictions;
  return key;
}

void LruTier::install(const std::string& key, const std::string& value, std::uint64_t version, Millis now) {
  CacheEntry e{key, value, version, now, now};
  if (auto it = index_.find(key); it != index_.end()) remove(it);
  make_room(now);
  lru_.push_front(key);
  fifo_.push_back(key);
  index_.emplace(key, Slot{std::move(e), lru_.begin(), std::prev(fifo_.end())});
}

void LruTier::adopt(CacheEntry e, Millis now) {
  if (expired(e, now)) return;
  if (auto it = index_.find(e.key); it != index_.end()) remove(it);
  make_room(now);
  // Recency: place by last_access. Expiry order: place by inserted_at.
  auto lru_pos = lru_.begin();
  while (lru_pos != lru_.end() && index_.at(*lru_pos).entry.last_access > e.last_access) ++lru_pos;
  auto fifo_pos = fifo_.end();
  while (fifo_pos != fifo_.begin() && index_.at(*std::prev(fifo_pos)).entry.inserted_at > e.inserted_at) --fifo_pos;
  const std::string key = e.key;
  auto l = lru_.insert(lru_pos, key);
  auto f = fifo_.insert(fifo_pos, key);
  index_.emplace(key, Slot{std::move(e), l, f});
}

bool LruTier::erase(const std::string& key) {
  auto it = index_.find(key);
  if (it == index_.end()) return false;
  remove(it);
  return true;
}

std::vector<std::string> LruTier::keys_by_recency() const { return {lru_.begin(), lru_.end()}; }

std::vector<CacheEntry> LruTier::entries() const {
  std::vector<CacheEntry> out;
  out.reserve(index_.size());
  for (const auto& k : lru_) out.push_back(index_.at(k).entry);
  return out;
}

// ---------------------------------------------------------------------------
// HashRing

namespace {

std::uint64_t point_hash(std::uint32_t shard, std::uint32_t replica) {
  const std::string label = "shard-" + std::to_string(shard) + "#" + std::to_string(replica);
  return stable_hash(label);
}

}  // namespace

void HashRing::add(std::uint32_t shard) {
  if (contains(shard)) return;
  for (std::uint32_t v = 0; v < vnodes_; ++v) {
    // On the (unlikely) collision the lower shard id keeps the point.
    auto [it, inserted] = points_.emplace(point_hash(shard, v), shard);
    if (!inserted && shard < it->second) it->second = shard;
  }
}

void HashRing::remove(std::uint32_t shard) {
  std::erase_if(points_, [shard](const auto& p) { return p.second == shard; });
}

std::uint32_t HashRing::assign(std::string_view key) const {
  if (points_.empty()) throw ConfigError("hash ring", "no shards");
  auto it = points_.lower_bound(stable_hash(key));
  if (it == points_.end()) it = points_.begin();
  return it->second;
}

bool HashRing::contains(std::uint32_t shard) const {
  return std::any_of(points_.begin(), points_.end(), [shard](const auto& p) { return p.second == shard; });
}

std::vector<std::uint32_t> HashRing::shards() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : points_) out.push_back(p.second);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Log

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

bool get_bytes(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

template <typename T>
bool get_le(std::istream& in, T& v) {
  unsigned char b[sizeof(T)];
  if (!get_bytes(in, reinterpret_cast<char*>(b), sizeof(T))) return false;
  std::uint64_t x = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  v = static_cast<T>(x);
  return true;
}

}  // namespace

void append_log_record(std::ostream& out, const LogRecord& r) {
  put_u32(out, static_cast<std::uint32_t>(r.key.size()));
  out.write(r.key.data(), static_cast<std::streamsize>(r.key.size()));
  put_u32(out, static_cast<std::uint32_t>(r.value.size()));
  out.write(r.value.data(), static_cast<std::streamsize>(r.value.size()));
  put_u64(out, r.version);
  put_u64(out, static_cast<std::uint64_t>(r.tick));
}

std::vector<LogRecord> read_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log " + path);
  std::vector<LogRecord> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    LogRecord r;
    std::uint32_t klen = 0, vlen = 0;
    std::uint64_t tick = 0;
    bool ok = get_le(in, klen);
    if (ok) {
      r.key.resize(klen);
      ok = get_bytes(in, r.key.data(), klen) && get_le(in, vlen);
    }
    if (ok) {
      r.value.resize(vlen);
      ok = get_bytes(in, r.value.data(), vlen) && get_le(in, r.version) && get_le(in, tick);
    }
    if (!ok) throw std::runtime_error("truncated log record in " + path);
    r.tick = static_cast<std::int64_t>(tick);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CacheHierarchy

CacheHierarchy::CacheHierarchy(CacheConfig config)
    : config_((config.validate(), std::move(config))),
      l1_(config_.l1_capacity, config_.l1_ttl_ms),
      ring_(config_.l2_virtual_nodes),
      shard_capacity_(config_.l2_capacity / config_.l2_shards) {
  for (std::uint32_t s = 0; s < config_.l2_shards; ++s) {
    ring_.add(s);
    l2_.emplace(s, LruTier(shard_capacity_, config_.l2_ttl_ms));
  }
  if (!config_.l3_log_path.empty()) {
    log_ = std::make_unique<std::ofstream>(config_.l3_log_path, std::ios::binary | std::ios::app);
    if (!*log_) throw ConfigError("cache.l3_log_path", "cannot open " + config_.l3_log_path);
  }
}

LruTier& CacheHierarchy::shard_for(const std::string& key) { return l2_.at(ring_.assign(key)); }

const LruTier* CacheHierarchy::l2_shard(std::uint32_t shard) const {
  auto it = l2_.find(shard);
  return it == l2_.end() ? nullptr : &it->second;
}

std::size_t CacheHierarchy::l2_size() const {
  std::size_t n = 0;
  for (const auto& [id, tier] : l2_) n += tier.size();
  return n;
}

void CacheHierarchy::store_l3(const std::string& key, VersionRecord rec) {
  auto& chain = l3_[key];
  latest_version_[key] = rec.version;
  chain.push_back(std::move(rec));
  if (config_.l3_retention > 0) {
    while (chain.size() > config_.l3_retention) chain.pop_front();
  }
}

std::uint64_t CacheHierarchy::put(const std::string& key, const std::string& value, Millis now) {
  const std::uint64_t version = latest_version_[key] + 1;
  store_l3(key, {version, value, now});
  if (log_) {
    append_log_record(*log_, {key, value, version, now});
    log_->flush();
  }
  shard_for(key).install(key, value, version, now);
  l1_.install(key, value, version, now);
  return version;
}

GetResult CacheHierarchy::get(const std::string& key, Millis now, std::optional<std::uint64_t> snapshot) {
  ++lookups_;
  auto visible = [&](const CacheEntry* e) { return e != nullptr && (!snapshot || e->version <= *snapshot); };

  if (const CacheEntry* e = l1_.get(key, now); visible(e)) {
    ++l1_stats_.hits;
    return {Tier::kL1, e->value, e->version};
  }
  ++l1_stats_.misses;

  if (const CacheEntry* e = shard_for(key).get(key, now); visible(e)) {
    ++l2_stats_.hits;
    GetResult r{Tier::kL2, e->value, e->version};
    l1_.install(key, r.value, r.version, now);
    return r;
  }
  ++l2_stats_.misses;

  auto it = l3_.find(key);
  if (it != l3_.end()) {
    const auto& chain = it->second;
    for (auto v = chain.rbegin(); v != chain.rend(); ++v) {
      if (snapshot && v->version > *snapshot) continue;
      ++l3_stats_.hits;
      GetResult r{Tier::kL3, v->value, v->version};
      // Only the latest version may live in the memory tiers.
      if (v->version == latest_version_.at(key)) {
        shard_for(key).install(key, r.value, r.version, now);
        l1_.install(key, r.value, r.version, now);
      }
      return r;
    }
  }
  ++l3_stats_.misses;
  return {};
}

std::optional<std::string> CacheHierarchy::evict_lru(Tier tier, Millis now) {
  if (tier == Tier::kL1) return l1_.evict_lru(now);
  if (tier != Tier::kL2) throw std::invalid_argument("evict_lru: only L1 and L2 evict");
  for (auto& [id, shard] : l2_) shard.purge_expired(now);
  LruTier* victim = nullptr;
  for (auto& [id, shard] : l2_) {
    const CacheEntry* e = shard.lru_entry();
    if (e != nullptr && (victim == nullptr || e->last_access < victim->lru_entry()->last_access)) victim = &shard;
  }
  if (victim == nullptr) return std::nullopt;
  return victim->evict_lru(now);
}

void CacheHierarchy::purge_expired(Millis now) {
  l1_.purge_expired(now);
  for (auto& [id, shard] : l2_) shard.purge_expired(now);
}

std::size_t CacheHierarchy::ring_add(std::uint32_t shard) {
  if (l2_.count(shard) != 0) return 0;
  ring_.add(shard);
  auto& fresh = l2_.emplace(shard, LruTier(shard_capacity_, config_.l2_ttl_ms)).first->second;
  std::size_t moved = 0;
  for (auto& [id, tier] : l2_) {
    if (id == shard) continue;
    for (auto& e : tier.entries()) {
      if (ring_.assign(e.key) != shard) continue;
      tier.erase(e.key);
      // Relocation keeps timestamps; the clock is the entry's own last access.
      const Millis at = e.last_access;
      fresh.adopt(std::move(e), at);
      ++moved;
    }
  }
  return moved;
}

std::size_t CacheHierarchy::ring_remove(std::uint32_t shard) {
  auto it = l2_.find(shard);
  if (it == l2_.end()) return 0;
  if (l2_.size() == 1) throw ConfigError("cache.l2_shards", "cannot remove the last shard");
  auto entries = it->second.entries();
  retired_l2_.evictions += it->second.stats().evictions;
  retired_l2_.expired += it->second.stats().expired;
  l2_.erase(it);
  ring_.remove(shard);
  // Oldest first so that the most recent entries survive any overflow in the target shard.
  std::reverse(entries.begin(), entries.end());
  for (auto& e : entries) {
    const Millis at = e.last_access;
    shard_for(e.key).adopt(std::move(e), at);
  }
  return entries.size();
}

CacheStats CacheHierarchy::stats() const {
  CacheStats s;
  s.l1 = l1_stats_;
  s.l1.evictions = l1_.stats().evictions;
  s.l1.expired = l1_.stats().expired;
  s.l2 = l2_stats_;
  s.l2.evictions = retired_l2_.evictions;
  s.l2.expired = retired_l2_.expired;
  for (const auto& [id, tier] : l2_) {
    s.l2.evictions += tier.stats().evictions;
    s.l2.expired += tier.stats().expired;
  }
  s.l3 = l3_stats_;
  s.lookups = lookups_;
  s.defined = lookups_ > 0;
  if (s.defined) s.memory_hit_rate = static_cast<double>(s.l1.hits + s.l2.hits) / static_cast<double>(lookups_);
  return s;
}

void CacheHierarchy::reset_stats() {
  l1_stats_ = l2_stats_ = l3_stats_ = retired_l2_ = {};
  l1_.stats() = {};
  for (auto& [id, tier] : l2_) tier.stats() = {};
  lookups_ = 0;
}

std::optional<VersionRecord> CacheHierarchy::l3_latest(const std::string& key) const {
  auto it = l3_.find(key);
  if (it == l3_.end() || it->second.empty()) return std::nullopt;
  return it->second.back();
}

const std::deque<VersionRecord>* CacheHierarchy::l3_versions(const std::string& key) const {
  auto it = l3_.find(key);
  return it == l3_.end() ? nullptr : &it->second;
}

void CacheHierarchy::recover_l3(const std::vector<LogRecord>& records) {
  for (const auto& r : records) {
    if (r.version <= latest_version_[r.key]) continue;
    store_l3(r.key, {r.version, r.value, r.tick});
  }
}

// ---------------------------------------------------------------------------
// Workloads

ZipfSampler::ZipfSampler(std::uint64_t n, double s) {
  if (n == 0) throw std::invalid_argument("ZipfSampler: n must be > 0");
  cdf_.resize(n);
  double acc = 0.0;
  for (std::uint64_t r = 0; r < n; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -s);
    cdf_[r] = acc;
  }
  for (double& c : cdf_) c /= acc;
  cdf_.back() = 1.0;
}

std::uint64_t ZipfSampler::sample(Rng& rng) const {
  const double u = rng.uniform();
  return static_cast<std::uint64_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
}

double ZipfSampler::probability(std::uint64_t rank) const {
  return rank == 0 ? cdf_[0] : cdf_[rank] - cdf_[rank - 1];
}

std::vector<TraceOp> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "tick,op,key") throw ConfigError("trace", "expected header tick,op,key");
  std::vector<TraceOp> ops;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ConfigError("trace:" + std::to_string(lineno), "expected 3 columns");
    TraceOp op;
    try {
      op.tick = std::stoll(line.substr(0, c1));
    } catch (const std::exception&) {
      throw ConfigError("trace:" + std::to_string(lineno), "bad tick");
    }
    const std::string kind = line.substr(c1 + 1, c2 - c1 - 1);
    if (kind == "get") {
      op.op = TraceOp::kGet;
    } else if (kind == "put") {
      op.op = TraceOp::kPut;
    } else {
      throw ConfigError("trace:" + std::to_string(lineno), "op must be get or put");
    }
    op.key = line.substr(c2 + 1);
    ops.push_back(std::move(op));
  }
  return ops;
}

CacheStats replay_trace(CacheHierarchy& cache, const std::vector<TraceOp>& trace, Millis tick_ms, bool read_through) {
  for (const auto& op : trace) {
    const Millis now = op.tick * tick_ms;
    if (op.op == TraceOp::kPut) {
      cache.put(op.key, op.key + "@" + std::to_string(op.tick), now);
    } else if (!cache.get(op.key, now).hit() && read_through) {
      cache.put(op.key, op.key + "@" + std::to_string(op.tick), now);
    }
  }
  return cache.stats();
}

CacheStats run_zipf_reads(CacheHierarchy& cache, std::uint64_t key_space, double s, std::uint64_t reads,
                          std::uint64_t seed, double reads_per_second) {
  if (!(reads_per_second > 0.0)) throw std::invalid_argument("run_zipf_reads: rate must be > 0");
  const ZipfSampler zipf(key_space, s);
  Rng rng(seed);
  for (std::uint64_t i = 0; i < reads; ++i) {
    const Millis now = static_cast<Millis>(static_cast<double>(i) * 1000.0 / reads_per_second);
    const std::string key = "k" + std::to_string(zipf.sample(rng));
    if (!cache.get(key, now).hit()) cache.put(key, "v", now);
  }
  return cache.stats();
}

}  // namespace tradesim::cache
