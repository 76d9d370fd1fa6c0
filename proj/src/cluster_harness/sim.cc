#include "nezha/sim.h"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <json.hpp>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <variant>

#include "nezha/node_host.h"
#include "nezha/transport.h"

namespace nezha {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config -----------------------------------------------------------------

void FaultPlan::validate(size_t nodes) const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kScriptError, what); };
  if (!(drop_prob >= 0 && drop_prob <= 1)) fail("drop_prob outside [0,1]");
  if (delay_min_ms < 0 || delay_max_ms < delay_min_ms) fail("bad delay range");
  for (const auto& p : partitions) {
    if (p.start_ms < 0 || p.end_ms < p.start_ms) fail("bad partition window");
    for (NodeId id : p.side) {
      if (id < 1 || id > nodes) fail("partition names unknown node " + std::to_string(id));
    }
  }
  for (const auto& c : crashes) {
    if (c.node < 1 || c.node > nodes) fail("crash names unknown node " + std::to_string(c.node));
    if (c.at_ms < 0) fail("negative crash time");
    if (c.restart_ms >= 0 && c.restart_ms < c.at_ms) fail("restart before crash");
  }
}

void WorkloadScript::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kScriptError, what); };
  if (keys == 0) fail("workload needs at least one key");
  if (put_fraction < 0 || scan_fraction < 0 || put_fraction + scan_fraction > 1) {
    fail("op fractions must be non-negative and sum to at most 1");
  }
  if (think_min_ms < 0 || think_max_ms < think_min_ms) fail("bad think time range");
  if (client_timeout_ms <= 0) fail("client_timeout_ms must be positive");
}

FaultPlan random_fault_plan(uint64_t seed, size_t nodes, TimeMs horizon_ms) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ull);
  FaultPlan plan;
  plan.seed = seed;
  plan.drop_prob = std::uniform_real_distribution<double>(0, 0.1)(rng);
  plan.delay_min_ms = 1 + static_cast<TimeMs>(rng() % 3);
  plan.delay_max_ms = plan.delay_min_ms + 1 + static_cast<TimeMs>(rng() % 15);
  plan.torn_tail = rng() % 4 != 0;
  const size_t f = (nodes - 1) / 2;
  if (f == 0 || horizon_ms <= 0) return plan;

  // Windows of affected nodes; an open-ended crash lasts to the horizon.
  struct Window {
    TimeMs start, end;
    std::vector<NodeId> nodes;
  };
  std::vector<Window> windows;
  auto load_ok = [&](const Window& w) {
    // Affected set size at any instant, checked at every window start.
    std::vector<TimeMs> points = {w.start};
    for (const auto& o : windows) {
      if (o.start >= w.start && o.start < w.end) points.push_back(o.start);
    }
    for (TimeMs t : points) {
      std::set<NodeId> hit(w.nodes.begin(), w.nodes.end());
      for (const auto& o : windows) {
        if (o.start <= t && t < o.end) hit.insert(o.nodes.begin(), o.nodes.end());
      }
      if (hit.size() > f) return false;
    }
    return true;
  };

  const int events = 1 + static_cast<int>(rng() % 4);
  for (int attempt = 0, placed = 0; placed < events && attempt < 40; ++attempt) {
    const TimeMs start = static_cast<TimeMs>(rng() % static_cast<uint64_t>(horizon_ms));
    const TimeMs len = 300 + static_cast<TimeMs>(rng() % 3000);
    const bool crash = rng() % 2 == 0;
    Window w{start, std::min(horizon_ms, start + len), {}};
    if (crash) {
      w.nodes.push_back(1 + rng() % nodes);
      const bool restarts = rng() % 5 != 0;
      if (!restarts) w.end = horizon_ms;
      if (!load_ok(w)) continue;
      plan.crashes.push_back({w.nodes[0], w.start, restarts ? w.end : -1});
    } else {
      const size_t side = 1 + rng() % f;
      std::vector<NodeId> all;
      for (NodeId id = 1; id <= nodes; ++id) all.push_back(id);
      std::shuffle(all.begin(), all.end(), rng);
      w.nodes.assign(all.begin(), all.begin() + static_cast<long>(side));
      if (!load_ok(w)) continue;
      plan.partitions.push_back({w.start, w.end, w.nodes});
    }
    windows.push_back(std::move(w));
    ++placed;
  }
  return plan;
}

namespace {

template <typename T>
void read_field(const json& j, const char* name, T& out) {
  if (j.contains(name)) out = j.at(name).get<T>();
}

}  // namespace

SimConfig parse_scenario(std::string_view text) {
  SimConfig cfg;
  try {
    const json j = json::parse(text);
    read_field(j, "nodes", cfg.nodes);
    read_field(j, "max_time_ms", cfg.max_time_ms);
    read_field(j, "settle_ms", cfg.settle_ms);
    read_field(j, "gc_threshold_bytes", cfg.gc_threshold_bytes);
    read_field(j, "compaction_batch", cfg.compaction_batch);
    read_field(j, "trace_messages", cfg.trace_messages);
    if (j.contains("workload")) {
      const json& w = j.at("workload");
      auto& s = cfg.workload;
      read_field(w, "clients", s.clients);
      read_field(w, "ops_per_client", s.ops_per_client);
      read_field(w, "keys", s.keys);
      read_field(w, "value_size", s.value_size);
      read_field(w, "put_fraction", s.put_fraction);
      read_field(w, "scan_fraction", s.scan_fraction);
      read_field(w, "think_min_ms", s.think_min_ms);
      read_field(w, "think_max_ms", s.think_max_ms);
      read_field(w, "client_timeout_ms", s.client_timeout_ms);
      read_field(w, "start_ms", s.start_ms);
    }
    if (!j.contains("faults") || !j.at("faults").contains("seed")) {
      throw Error(ErrorCode::kScriptError, "faults.seed is mandatory");
    }
    const json& f = j.at("faults");
    auto& p = cfg.faults;
    p.seed = f.at("seed").get<uint64_t>();
    read_field(f, "drop_prob", p.drop_prob);
    read_field(f, "delay_min_ms", p.delay_min_ms);
    read_field(f, "delay_max_ms", p.delay_max_ms);
    read_field(f, "torn_tail", p.torn_tail);
    if (f.contains("partitions")) {
      for (const auto& w : f.at("partitions")) {
        PartitionWindow pw;
        pw.start_ms = w.at("start_ms").get<TimeMs>();
        pw.end_ms = w.at("end_ms").get<TimeMs>();
        pw.side = w.at("side").get<std::vector<NodeId>>();
        p.partitions.push_back(std::move(pw));
      }
    }
    if (f.contains("crashes")) {
      for (const auto& c : f.at("crashes")) {
        CrashSpec cs;
        cs.node = c.at("node").get<NodeId>();
        cs.at_ms = c.at("at_ms").get<TimeMs>();
        read_field(c, "restart_ms", cs.restart_ms);
        p.crashes.push_back(cs);
      }
    }
    if (f.value("random", false)) {
      const uint64_t seed = p.seed;
      p = random_fault_plan(seed, cfg.nodes, cfg.max_time_ms / 2);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kScriptError, e.what());
  }
  if (cfg.nodes == 0) throw Error(ErrorCode::kScriptError, "nodes must be positive");
  cfg.workload.validate();
  cfg.faults.validate(cfg.nodes);
  return cfg;
}

SimConfig load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kScriptError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::string trace_to_tsv(const std::vector<TraceEvent>& trace) {
  std::string out;
  for (const auto& e : trace) {
    json payload = {{"term", e.term}, {"index", e.index}, {"aux", e.aux}, {"crc", e.crc}};
    if (!e.detail.empty()) payload["detail"] = e.detail;
    out += std::to_string(e.time);
    out += '\t';
    out += std::to_string(e.node);
    out += '\t';
    out += trace_kind_name(e.kind);
    out += '\t';
    out += payload.dump();
    out += '\n';
  }
  return out;
}

// ---- simulator -------------------------------------------------------------

namespace {

constexpr TimeMs kTickMs = 10;

struct EvTick {
  NodeId node;
  uint64_t incarnation;
};
struct EvDeliver {
  Envelope env;
};
struct EvClientRequest {
  NodeId node;
  ReplyTo reply_to;
  ClientRequest request;
};
struct EvClientResponse {
  uint64_t client;
  uint64_t attempt;
  ClientResponse response;
};
enum class WakeKind { kNextOp, kResend, kTimeout };
struct EvClientWake {
  uint64_t client;
  uint64_t attempt;
  WakeKind kind;
};
struct EvCrash {
  NodeId node;
};
struct EvRestart {
  NodeId node;
};

using EventBody =
    std::variant<EvTick, EvDeliver, EvClientRequest, EvClientResponse, EvClientWake, EvCrash, EvRestart>;

struct Event {
  TimeMs time;
  uint64_t seq;
  EventBody body;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

class VectorSink : public TraceSink {
 public:
  explicit VectorSink(std::vector<TraceEvent>* out) : out_(out) {}
  void record(TraceEvent e) override { out_->push_back(std::move(e)); }

 private:
  std::vector<TraceEvent>* out_;
};

class Simulator {
 public:
  explicit Simulator(const SimConfig& cfg)
      : cfg_(cfg), rng_(cfg.faults.seed * 0x2545f4914f6cdd1dull + 1), sink_(&result_.trace) {
    cfg_.workload.validate();
    cfg_.faults.validate(cfg_.nodes);
    if (cfg_.work_dir.empty()) {
      static std::atomic<uint64_t> counter{0};
      work_dir_ = fs::temp_directory_path() /
                  ("nezha-sim-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
      owns_dir_ = true;
    } else {
      work_dir_ = cfg_.work_dir;
    }
    fs::remove_all(work_dir_);
    fs::create_directories(work_dir_);
    for (NodeId id = 1; id <= cfg_.nodes; ++id) members_.push_back(id);
  }

  ~Simulator() {
    for (auto& [id, n] : nodes_) n.host.reset();
    if (owns_dir_ && !cfg_.keep_files) {
      std::error_code ec;
      fs::remove_all(work_dir_, ec);
    }
  }

  SimResult run() {
    for (NodeId id : members_) {
      auto& n = nodes_[id];
      n.dir = work_dir_ / ("node-" + std::to_string(id));
      fs::create_directories(n.dir);
      n.counters = std::make_unique<IoCounters>();
      start_node(id);
    }
    for (const auto& c : cfg_.faults.crashes) {
      schedule(c.at_ms, EvCrash{c.node});
      if (c.restart_ms >= 0) schedule(c.restart_ms, EvRestart{c.node});
    }
    clients_.resize(cfg_.workload.clients);
    for (uint64_t c = 0; c < clients_.size(); ++c) {
      clients_[c].id = c;
      clients_[c].target = 1 + rng_() % cfg_.nodes;
      schedule(cfg_.workload.start_ms + static_cast<TimeMs>(rng_() % 50),
               EvClientWake{c, 0, WakeKind::kNextOp});
    }

    TimeMs settle_end = -1;
    while (!queue_.empty()) {
      Event ev = queue_.top();
      if (settle_end >= 0 && ev.time > settle_end) break;
      queue_.pop();
      now_ = ev.time;
      if (settle_end < 0 && (all_clients_done() || now_ >= cfg_.max_time_ms)) {
        begin_settle();
        settle_end = now_ + cfg_.settle_ms;
      }
      std::visit([&](auto& body) { handle(body); }, ev.body);
    }
    if (settle_end < 0) {
      begin_settle();
      settle_end = now_;
    }
    now_ = std::max(now_, settle_end);
    finish();
    return std::move(result_);
  }

 private:
  struct NodeSlot {
    fs::path dir;
    std::unique_ptr<IoCounters> counters;
    std::unique_ptr<NodeHost> host;
    uint64_t incarnation = 0;
    std::optional<TimeMs> crash_deadline;
  };

  struct Client {
    uint64_t id = 0;
    size_t issued = 0;
    bool done = false;
    std::optional<size_t> op;  // index into history_
    uint64_t attempt = 0;
    int redirects = 0;
    int read_retries = 0;
    NodeId target = 1;
    RequestId rid{};
  };

  template <typename T>
  void schedule(TimeMs at, T body) {
    queue_.push(Event{at, seq_++, EventBody(std::move(body))});
  }

  TimeMs delay() {
    const auto span = static_cast<uint64_t>(cfg_.faults.delay_max_ms - cfg_.faults.delay_min_ms + 1);
    return cfg_.faults.delay_min_ms + static_cast<TimeMs>(rng_() % span);
  }
  bool chance(double p) { return p > 0 && std::uniform_real_distribution<double>(0, 1)(rng_) < p; }

  bool is_cut(NodeId a, NodeId b) const {
    if (settling_) return false;
    for (const auto& p : cfg_.faults.partitions) {
      if (now_ < p.start_ms || now_ >= p.end_ms) continue;
      const bool ia = std::find(p.side.begin(), p.side.end(), a) != p.side.end();
      const bool ib = std::find(p.side.begin(), p.side.end(), b) != p.side.end();
      if (ia != ib) return true;
    }
    return false;
  }

  void trace(TraceKind kind, NodeId node, uint64_t aux = 0, std::string detail = {},
             uint64_t index = 0) {
    result_.trace.push_back(TraceEvent{.time = now_,
                                       .node = node,
                                       .kind = kind,
                                       .index = index,
                                       .aux = aux,
                                       .detail = std::move(detail)});
  }

  // ---- nodes --------------------------------------------------------

  void start_node(NodeId id) {
    auto& n = nodes_[id];
    NodeHostOptions o;
    o.id = id;
    o.members = members_;
    o.dir = n.dir;
    o.storage.sync_mode = SyncMode::kLogical;
    o.storage.run.sync_mode = SyncMode::kLogical;
    o.storage.run.block_size = 512;
    o.storage.trigger.size_threshold_bytes = cfg_.gc_threshold_bytes;
    o.storage.compaction_batch = cfg_.compaction_batch;
    o.raft.seed = cfg_.faults.seed * 31 + n.incarnation * 7919 + id;
    o.raft.snapshot_chunk_bytes = 1024;
    o.checkpoint_interval = 64;
    n.host = std::make_unique<NodeHost>(o, n.counters.get(), now_, &sink_);
    ++n.incarnation;
    schedule(now_ + static_cast<TimeMs>(rng_() % kTickMs), EvTick{id, n.incarnation});
  }

  void crash_node(NodeId id) {
    auto& n = nodes_.at(id);
    if (!n.host) return;
    const auto files = n.host->storage().unsynced_files();
    n.host.reset();
    n.crash_deadline.reset();
    for (const auto& f : files) {
      std::error_code ec;
      const uint64_t size = fs::file_size(f.path, ec);
      if (ec || size <= f.durable_size) continue;
      uint64_t keep = f.durable_size;
      if (cfg_.faults.torn_tail) keep += rng_() % (size - f.durable_size + 1);
      fs::resize_file(f.path, keep, ec);
      result_.torn_bytes += size - keep;
    }
    ++result_.crashes;
    trace(TraceKind::kCrash, id);
  }

  void restart_node(NodeId id) {
    auto& n = nodes_.at(id);
    if (n.host) return;
    trace(TraceKind::kRestart, id);
    start_node(id);
    // Whatever the torn tail took is gone from the log.
    trace(TraceKind::kTruncate, id, 0, "recovered", n.host->storage().last_log_index() + 1);
  }

  void step_node(NodeId id) {
    auto& n = nodes_.at(id);
    n.host->step(now_);
    for (auto& env : n.host->take_messages()) network_.send(env);
    for (auto& out : n.host->take_responses()) {
      const uint64_t client = (out.to >> 32) - 1;
      const uint64_t attempt = out.to & 0xffffffffu;
      if (chance(drop_prob())) continue;
      schedule(now_ + delay(), EvClientResponse{client, attempt, std::move(out.response)});
    }
  }

  double drop_prob() const { return settling_ ? 0.0 : cfg_.faults.drop_prob; }

  // The simulated network as seen by nodes.
  class Network final : public Transport {
   public:
    explicit Network(Simulator* sim) : sim_(sim) {}
    void send(const Envelope& env) override { sim_->transmit(env); }

   private:
    Simulator* sim_;
  };

  void transmit(Envelope env) {
    const char* name = message_name(env.msg);
    if (cfg_.trace_messages) trace(TraceKind::kSend, env.from, env.to, name);
    if (is_cut(env.from, env.to) || chance(drop_prob())) {
      if (cfg_.trace_messages) trace(TraceKind::kDrop, env.from, env.to, name);
      return;
    }
    if (chance(drop_prob() / 2)) schedule(now_ + delay(), EvDeliver{env});
    schedule(now_ + delay(), EvDeliver{std::move(env)});
  }

  void handle(EvTick& e) {
    auto& n = nodes_.at(e.node);
    if (!n.host || n.incarnation != e.incarnation) return;
    if (n.crash_deadline && now_ >= *n.crash_deadline) {
      crash_node(e.node);
      return;
    }
    n.host->tick(now_);
    step_node(e.node);
    schedule(now_ + kTickMs, EvTick{e.node, e.incarnation});
  }

  void handle(EvDeliver& e) {
    auto& n = nodes_.at(e.env.to);
    const char* name = message_name(e.env.msg);
    if (!n.host || is_cut(e.env.from, e.env.to)) {
      if (cfg_.trace_messages) trace(TraceKind::kDrop, e.env.to, e.env.from, name);
      return;
    }
    if (cfg_.trace_messages) trace(TraceKind::kDeliver, e.env.to, e.env.from, name);
    // Nodes group-commit: appends stay unsynced until the next tick.
    n.host->receive(e.env, now_);
    maybe_crash_after_write(e.env.to);
  }

  void handle(EvClientRequest& e) {
    auto& n = nodes_.at(e.node);
    if (!n.host) return;
    n.host->submit(e.reply_to, std::move(e.request), now_);
    maybe_crash_after_write(e.node);
  }

  // A scheduled crash waits up to kCrashWindowMs for a moment when the node
  // holds written but unsynced bytes, so torn tails actually occur.
  static constexpr TimeMs kCrashWindowMs = 200;

  void handle(EvCrash& e) {
    auto& n = nodes_.at(e.node);
    if (settling_ || !n.host) return;
    n.crash_deadline = now_ + kCrashWindowMs;
    maybe_crash_after_write(e.node);
  }

  void maybe_crash_after_write(NodeId id) {
    auto& n = nodes_.at(id);
    if (!n.crash_deadline || !n.host) return;
    for (const auto& f : n.host->storage().unsynced_files()) {
      std::error_code ec;
      if (fs::file_size(f.path, ec) > f.durable_size && !ec) {
        crash_node(id);
        return;
      }
    }
  }

  void handle(EvRestart& e) {
    if (nodes_.at(e.node).crash_deadline) crash_node(e.node);
    restart_node(e.node);
  }

  // ---- clients --------------------------------------------------------------

  bool all_clients_done() const {
    for (const auto& c : clients_) {
      if (!c.done) return false;
    }
    return true;
  }

  void issue(Client& c) {
    const auto& w = cfg_.workload;
    if (settling_ || now_ >= cfg_.max_time_ms || c.issued >= w.ops_per_client) {
      c.done = true;
      return;
    }
    HistoryOp op;
    op.id = history_.size();
    op.client = c.id;
    const double r = std::uniform_real_distribution<double>(0, 1)(rng_);
    auto key = [&] { return "k" + std::to_string(rng_() % w.keys); };
    ClientOp wire;
    if (r < w.put_fraction) {
      op.kind = HistOpKind::kPut;
      op.key = key();
      op.value = "c" + std::to_string(c.id) + "-" + std::to_string(c.issued);
      if (op.value.size() < w.value_size) op.value.append(w.value_size - op.value.size(), '.');
      wire = PutOp{op.key, op.value};
    } else if (r < w.put_fraction + w.scan_fraction) {
      op.kind = HistOpKind::kScan;
      op.start = key();
      op.end = key();
      if (op.start > op.end) std::swap(op.start, op.end);
      op.limit = rng_() % 3 == 0 ? static_cast<uint32_t>(1 + rng_() % 3) : 0;
      wire = ScanOp{op.start, op.end, op.limit};
    } else {
      op.kind = HistOpKind::kGet;
      op.key = key();
      wire = GetOp{op.key};
    }
    op.invoke = ++clock_;
    ++c.issued;
    c.redirects = 0;
    c.read_retries = 0;
    c.rid = RequestId{};
    for (int i = 0; i < 8; ++i) c.rid[i] = static_cast<uint8_t>((c.id + 1) >> (8 * i));
    for (int i = 0; i < 8; ++i) c.rid[8 + i] = static_cast<uint8_t>(c.issued >> (8 * i));
    trace(TraceKind::kClientInvoke, c.target, c.id, describe(op));
    c.op = history_.size();
    history_.push_back(std::move(op));
    discard_.push_back(false);
    wire_.push_back(std::move(wire));
    send_attempt(c);
  }

  void send_attempt(Client& c) {
    ++c.attempt;
    const ReplyTo to = ((c.id + 1) << 32) | (c.attempt & 0xffffffffu);
    if (!chance(drop_prob())) {
      schedule(now_ + delay(), EvClientRequest{c.target, to, ClientRequest{c.rid, wire_[*c.op]}});
    }
    schedule(now_ + cfg_.workload.client_timeout_ms, EvClientWake{c.id, c.attempt, WakeKind::kTimeout});
  }

  void next_after_think(Client& c) {
    const auto& w = cfg_.workload;
    const auto span = static_cast<uint64_t>(w.think_max_ms - w.think_min_ms + 1);
    schedule(now_ + w.think_min_ms + static_cast<TimeMs>(rng_() % span),
             EvClientWake{c.id, c.attempt, WakeKind::kNextOp});
  }

  // Outcome unknown: a put may still take effect; a read tells us nothing.
  void abandon(Client& c) {
    HistoryOp& op = history_[*c.op];
    if (op.kind == HistOpKind::kPut) {
      ++result_.ops_unknown;
    } else {
      discard_[*c.op] = true;
      ++result_.ops_failed;
    }
    trace(TraceKind::kClientComplete, c.target, c.id, "unknown " + describe(op));
    c.op.reset();
  }

  // Reads are idempotent, so a lost one is simply reissued; its effect still
  // falls between the first invocation and the final answer. A put could
  // run twice on different leaders, so its fate stays unknown.
  void give_up_or_retry(Client& c) {
    if (history_[*c.op].kind != HistOpKind::kPut && c.read_retries < 3 && !settling_ &&
        now_ < cfg_.max_time_ms) {
      ++c.read_retries;
      c.target = c.target % cfg_.nodes + 1;
      send_attempt(c);
      return;
    }
    abandon(c);
    next_after_think(c);
  }

  void handle(EvClientResponse& e) {
    Client& c = clients_.at(e.client);
    if (!c.op || e.attempt != (c.attempt & 0xffffffffu)) return;
    HistoryOp& op = history_[*c.op];
    const ClientResponse& r = e.response;
    switch (r.status) {
      case Status::kOk:
      case Status::kValue:
      case Status::kNotFound:
      case Status::kEntries:
        if (r.status == Status::kValue) op.read = r.value;
        if (r.status == Status::kEntries) op.entries = r.entries;
        op.complete = ++clock_;
        ++result_.ops_ok;
        trace(TraceKind::kClientComplete, c.target, c.id, describe(op));
        c.op.reset();
        next_after_think(c);
        return;
      case Status::kNotLeader:
        // Definitely not executed: safe to try elsewhere.
        if (++c.redirects > 60) {
          discard_[*c.op] = true;
          ++result_.ops_failed;
          c.op.reset();
          next_after_think(c);
          return;
        }
        if (r.leader_hint != 0 && r.leader_hint != c.target && r.leader_hint <= cfg_.nodes) {
          c.target = r.leader_hint;
        } else {
          c.target = c.target % cfg_.nodes + 1;
        }
        ++c.attempt;
        schedule(now_ + 20, EvClientWake{c.id, c.attempt, WakeKind::kResend});
        return;
      case Status::kTimeout:
      case Status::kError:
        give_up_or_retry(c);
        return;
    }
  }

  void handle(EvClientWake& e) {
    Client& c = clients_.at(e.client);
    switch (e.kind) {
      case WakeKind::kNextOp:
        if (!c.op && !c.done) issue(c);
        break;
      case WakeKind::kResend:
        if (c.op && e.attempt == c.attempt) {
          if (settling_ || now_ >= cfg_.max_time_ms) {
            abandon(c);
            c.done = true;
          } else {
            send_attempt(c);
          }
        }
        break;
      case WakeKind::kTimeout:
        if (c.op && e.attempt == c.attempt) give_up_or_retry(c);
        break;
    }
  }

  // ---- end ------------------------------------------------------------------

  void begin_settle() {
    settling_ = true;
    for (auto& [id, n] : nodes_) n.crash_deadline.reset();
    for (auto& c : clients_) {
      if (c.op) abandon(c);
      c.done = true;
    }
    for (NodeId id : members_) {
      if (!nodes_.at(id).host) restart_node(id);
    }
  }

  void finish() {
    std::set<std::map<std::string, std::string>> distinct;
    std::set<uint64_t> commits;
    for (NodeId id : members_) {
      auto& host = *nodes_.at(id).host;
      result_.final_states[id] = host.state();
      result_.final_commit[id] = host.raft().commit_index();
      distinct.insert(result_.final_states[id]);
      commits.insert(host.raft().commit_index());
    }
    result_.converged = distinct.size() == 1 && commits.size() == 1;
    for (size_t i = 0; i < history_.size(); ++i) {
      if (!discard_[i]) result_.history.push_back(history_[i]);
    }
    for (const auto& e : result_.trace) {
      if (e.kind == TraceKind::kGcPhase && static_cast<GcPhase>(e.aux) == GcPhase::kPreGc) {
        ++result_.gc_cycles;
      }
      if (e.kind == TraceKind::kSnapshotInstall) ++result_.snapshots_installed;
    }
    result_.end_time_ms = now_;
  }

  SimConfig cfg_;
  Network network_{this};
  std::mt19937_64 rng_;
  SimResult result_;
  VectorSink sink_;
  fs::path work_dir_;
  bool owns_dir_ = false;
  std::vector<NodeId> members_;
  std::map<NodeId, NodeSlot> nodes_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  uint64_t seq_ = 0;
  TimeMs now_ = 0;
  bool settling_ = false;
  std::vector<Client> clients_;
  std::vector<HistoryOp> history_;
  std::vector<bool> discard_;
  std::vector<ClientOp> wire_;
  int64_t clock_ = 0;
};

}  // namespace

SimResult run_simulation(const SimConfig& config) {
  Simulator sim(config);
  return sim.run();
}

}  // namespace nezha
