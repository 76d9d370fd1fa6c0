#include "nezha/node_daemon.h"

#include <algorithm>
#include <malloc.h>

#include <chrono>
#include <future>
#include <mutex>
#include <json.hpp>
#include <random>

namespace nezha {

namespace fs = std::filesystem;
using nlohmann::json;

const char* node_mode_name(NodeMode mode) { return mode == NodeMode::kNezha ? "nezha" : "baseline"; }

NodeMode parse_node_mode(std::string_view text) {
  if (text == "nezha") return NodeMode::kNezha;
  if (text == "baseline") return NodeMode::kBaseline;
  throw Error(ErrorCode::kInvalidArgument, "mode must be nezha or baseline");
}

FsyncPolicy parse_fsync_policy(std::string_view text) {
  if (text == "always") return FsyncPolicy::kAlways;
  if (text == "none") return FsyncPolicy::kNone;
  throw Error(ErrorCode::kInvalidArgument, "fsync policy must be always or none");
}

void NodeConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!peers.count(id)) fail("node id " + std::to_string(id) + " is not among the peers");
  for (const auto& [pid, address] : peers) parse_address(address);
  if (gc_threshold_bytes == 0) fail("gc threshold must be positive");
  if (data_dir.empty()) fail("data dir is required");
  if (tick_ms <= 0) fail("tick must be positive");
  if (baseline.compaction_factor < 1.0) fail("compaction factor must be at least 1");
}

NodeConfig apply_node_config_json(const std::string& json_text, NodeConfig c) {
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "id") {
        c.id = v.get<NodeId>();
      } else if (key == "peers") {
        c.peers.clear();
        if (v.is_array()) {
          NodeId next = 1;
          for (const auto& a : v) c.peers[next++] = a.get<std::string>();
        } else {
          for (const auto& [pid, a] : v.items()) c.peers[std::stoull(pid)] = a.get<std::string>();
        }
      } else if (key == "data_dir") {
        c.data_dir = v.get<std::string>();
      } else if (key == "gc_threshold_bytes") {
        c.gc_threshold_bytes = v.get<uint64_t>();
      } else if (key == "gc_timer_ms") {
        c.gc_timer_ms = v.get<TimeMs>();
      } else if (key == "gc_enabled") {
        c.gc_enabled = v.get<bool>();
      } else if (key == "mode") {
        c.mode = parse_node_mode(v.get<std::string>());
      } else if (key == "fsync") {
        c.fsync = parse_fsync_policy(v.get<std::string>());
      } else if (key == "memtable_bytes") {
        c.baseline.memtable_bytes = v.get<size_t>();
      } else if (key == "compaction_factor") {
        c.baseline.compaction_factor = v.get<double>();
      } else if (key == "compaction_batch") {
        c.compaction_batch = v.get<size_t>();
      } else if (key == "checkpoint_interval") {
        c.checkpoint_interval = v.get<uint64_t>();
      } else if (key == "tick_ms") {
        c.tick_ms = v.get<TimeMs>();
      } else if (key == "election_timeout_min_ms") {
        c.raft.election_timeout_min_ms = v.get<TimeMs>();
      } else if (key == "election_timeout_max_ms") {
        c.raft.election_timeout_max_ms = v.get<TimeMs>();
      } else if (key == "heartbeat_interval_ms") {
        c.raft.heartbeat_interval_ms = v.get<TimeMs>();
      } else if (key == "consensus_timeout_ms") {
        c.engine.consensus_timeout_ms = v.get<TimeMs>();
      } else {
        throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  return c;
}

namespace {

// Reads allocate and free megabytes per request on the loop thread. With the
// default thresholds a per-thread arena hands that memory back after every
// request and faults it in again on the next one.
void tune_allocator() {
  static std::once_flag once;
  std::call_once(once, [] {
    ::mallopt(M_MMAP_THRESHOLD, 32 << 20);
    ::mallopt(M_TRIM_THRESHOLD, 256 << 20);
  });
}

}  // namespace

TimeMs NodeDaemon::clock_ms() {
  static const auto origin = std::chrono::steady_clock::now();
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - origin)
             .count() +
         1;
}

NodeDaemon::NodeDaemon(NodeConfig config) : config_(std::move(config)) {
  config_.validate();
  tune_allocator();
  fs::create_directories(config_.data_dir);
  const SyncMode sync = config_.fsync == FsyncPolicy::kAlways ? SyncMode::kPhysical : SyncMode::kLogical;

  NodeHostOptions o;
  o.id = config_.id;
  for (const auto& [id, address] : config_.peers) o.members.push_back(id);
  o.dir = config_.data_dir;
  o.storage.sync_mode = sync;
  o.storage.run.sync_mode = sync;
  o.storage.trigger.size_threshold_bytes = config_.gc_threshold_bytes;
  o.storage.trigger.timer_interval_ms = config_.gc_timer_ms;
  o.storage.gc_enabled = config_.gc_enabled;
  o.storage.compaction_batch = config_.compaction_batch;
  o.raft = config_.raft;
  o.raft.seed = std::random_device{}() ^ (config_.id * 0x9e3779b97f4a7c15ull);
  o.engine = config_.engine;
  o.checkpoint_interval = config_.checkpoint_interval;
  host_ = std::make_unique<NodeHost>(o, &counters_, clock_ms());
  if (config_.mode == NodeMode::kBaseline) {
    baseline_ = std::make_unique<BaselineEmulator>(config_.data_dir / "baseline", config_.baseline, sync,
                                                   &counters_);
    host_->set_observer(baseline_.get());
  }

  TcpTransportOptions t;
  t.self = config_.id;
  std::tie(t.bind_host, t.port) = parse_address(config_.peers.at(config_.id));
  if (t.bind_host == "localhost") t.bind_host = "127.0.0.1";
  t.peers = config_.peers;
  transport_ = std::make_unique<TcpTransport>(t);
}

NodeDaemon::~NodeDaemon() { stop(); }

void NodeDaemon::set_peer_addresses(std::map<NodeId, std::string> peers) {
  if (started_) throw Error(ErrorCode::kAlreadyRunning, "node already started");
  if (peers.size() != config_.peers.size() ||
      !std::equal(peers.begin(), peers.end(), config_.peers.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw Error(ErrorCode::kInvalidArgument, "membership cannot change, only addresses");
  }
  config_.peers = std::move(peers);
  config_.validate();
  transport_->set_peers(config_.peers);
}

void NodeDaemon::start() {
  if (started_) throw Error(ErrorCode::kAlreadyRunning, "node already started");
  started_ = true;
  {
    std::lock_guard lock(mu_);
    running_ = true;
  }
  transport_->start([this](Envelope env) { post(std::move(env)); },
                    [this](uint64_t conn, ClientRequest req) { post(ClientItem{conn, std::move(req)}); });
  thread_ = std::thread([this] { loop(); });
}

void NodeDaemon::stop() {
  {
    std::lock_guard lock(mu_);
    if (!running_) return;
    running_ = false;
  }
  cv_.notify_all();
  thread_.join();
  transport_->stop();
  std::deque<Item> rest;
  {
    std::lock_guard lock(mu_);
    rest.swap(inbox_);
  }
  for (auto& item : rest) {
    if (auto* fn = std::get_if<std::function<void()>>(&item)) (*fn)();
  }
  host_->step(clock_ms());
  host_->storage().sync();
  if (baseline_) baseline_->sync();
}

void NodeDaemon::post(Item item) {
  {
    std::lock_guard lock(mu_);
    inbox_.push_back(std::move(item));
  }
  cv_.notify_one();
}

void NodeDaemon::with_host(const std::function<void(NodeHost&)>& fn) {
  {
    std::unique_lock lock(mu_);
    if (!running_) {
      lock.unlock();
      fn(*host_);
      return;
    }
  }
  std::promise<void> done;
  auto fut = done.get_future();
  post(std::function<void()>([&] {
    try {
      fn(*host_);
      done.set_value();
    } catch (...) {
      done.set_exception(std::current_exception());
    }
  }));
  fut.get();
}

std::string NodeDaemon::status_json() {
  std::string out;
  with_host([&](NodeHost& h) { out = h.status_json(); });
  return out;
}

void NodeDaemon::flush_baseline() {
  if (!baseline_) return;
  with_host([&](NodeHost&) {
    baseline_->flush_memtable();
    baseline_->sync();
  });
}

void NodeDaemon::loop() {
  TimeMs next_tick = clock_ms();
  const auto origin = std::chrono::steady_clock::now() - std::chrono::milliseconds(clock_ms());
  for (;;) {
    std::deque<Item> batch;
    {
      std::unique_lock lock(mu_);
      cv_.wait_until(lock, origin + std::chrono::milliseconds(next_tick),
                     [&] { return !running_ || !inbox_.empty(); });
      if (!running_) return;
      batch.swap(inbox_);
    }
    const TimeMs now = clock_ms();
    for (auto& item : batch) {
      if (auto* env = std::get_if<Envelope>(&item)) {
        host_->receive(*env, now);
      } else if (auto* c = std::get_if<ClientItem>(&item)) {
        host_->submit(c->conn, std::move(c->request), now);
      } else {
        std::get<std::function<void()>>(item)();
      }
    }
    if (now >= next_tick) {
      host_->tick(now);
      next_tick = now + config_.tick_ms;
    }
    host_->step(now);
    for (const auto& env : host_->take_messages()) transport_->send(env);
    for (const auto& out : host_->take_responses()) transport_->reply(out.to, out.response);
  }
}

}  // namespace nezha
