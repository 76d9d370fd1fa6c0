// nezha: node daemon, client, benchmarks, simulator and experiments.

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "nezha/checker.h"
#include "nezha/experiments.h"
#include "nezha/kv_client.h"
#include "nezha/local_cluster.h"
#include "nezha/node_daemon.h"
#include "nezha/sim.h"
#include "nezha/workload.h"

using namespace nezha;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

// "a:1,b:2" (ids by position) or "1=a:1,2=b:2".
std::map<NodeId, std::string> parse_peers(const std::string& text) {
  std::map<NodeId, std::string> out;
  std::stringstream ss(text);
  std::string item;
  NodeId next = 1;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      out[next++] = item;
    } else {
      out[std::stoull(item.substr(0, eq))] = item.substr(eq + 1);
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no peers given");
  return out;
}

std::vector<std::string> address_list(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& [id, a] : parse_peers(text)) {
    if (id != out.size() + 1) throw Error(ErrorCode::kInvalidArgument, "peer ids must be 1..n");
    out.push_back(a);
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int print_response(const ClientResponse& r) {
  switch (r.status) {
    case Status::kOk: std::cout << "OK\n"; return 0;
    case Status::kValue: std::cout << r.value << "\n"; return 0;
    case Status::kNotFound: std::cout << "NOT_FOUND\n"; return 1;
    case Status::kEntries:
      for (const auto& [k, v] : r.entries) std::cout << k << "\t" << v << "\n";
      return 0;
    default:
      std::cerr << status_name(r.status) << (r.value.empty() ? "" : ": " + r.value) << "\n";
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Raft key-value store with a separated value log"};
  app.require_subcommand(1);

  // ---- node ----
  auto* node = app.add_subcommand("node", "Run one cluster member until SIGINT/SIGTERM");
  NodeConfig nc;
  std::string node_peers, node_mode = "nezha", node_fsync = "always", node_config;
  node->add_option("--id", nc.id, "This node's id (1-based)")->required();
  node->add_option("--peers", node_peers, "Members: host:port,... by id, or id=host:port,...")->required();
  node->add_option("--data-dir", nc.data_dir, "Storage directory")->required();
  node->add_option("--gc-threshold", nc.gc_threshold_bytes, "Active log bytes that trigger GC")
      ->default_val(nc.gc_threshold_bytes);
  node->add_option("--gc-timer-ms", nc.gc_timer_ms, "GC timer interval")->default_val(nc.gc_timer_ms);
  node->add_option("--mode", node_mode, "nezha or baseline")->default_val(node_mode);
  node->add_option("--fsync", node_fsync, "always or none")->default_val(node_fsync);
  node->add_option("--config", node_config, "JSON file; its keys override the flags");

  // ---- client ----
  auto* client = app.add_subcommand("client", "Talk to a running cluster");
  client->require_subcommand(1);
  std::string client_peers;
  int client_timeout = 3000;
  client->add_option("--peers", client_peers, "Member addresses by id")->required();
  client->add_option("--timeout-ms", client_timeout, "Per-attempt timeout")->default_val(client_timeout);
  std::string c_key, c_value, c_start, c_end;
  uint32_t c_limit = 0;
  size_t c_node = 1;
  auto* c_put = client->add_subcommand("put", "Store a value");
  c_put->add_option("key", c_key)->required();
  c_put->add_option("value", c_value)->required();
  auto* c_get = client->add_subcommand("get", "Read a value");
  c_get->add_option("key", c_key)->required();
  auto* c_scan = client->add_subcommand("scan", "Inclusive range scan");
  c_scan->add_option("start", c_start)->required();
  c_scan->add_option("end", c_end)->required();
  c_scan->add_option("--limit", c_limit, "0 for unbounded")->default_val(0);
  auto* c_status = client->add_subcommand("status", "Print one node's status record");
  c_status->add_option("--node", c_node, "Node id")->default_val(1);

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "Run a YCSB-style workload");
  WorkloadSpec ws;
  std::string b_workload = "a", b_peers, b_out, b_dir = "nezha-bench";
  size_t b_local = 0;
  bench->add_option("--workload", b_workload, "load, a, b, c, d, e or f")->default_val(b_workload);
  bench->add_option("--ops", ws.op_count, "Operations")->default_val(ws.op_count);
  bench->add_option("--keys", ws.key_count, "Loaded records")->default_val(ws.key_count);
  bench->add_option("--key-size", ws.key_size, "Key bytes")->default_val(ws.key_size);
  bench->add_option("--value-size", ws.value_size, "Value bytes")->default_val(ws.value_size);
  bench->add_option("--zipf", ws.zipf_exponent, "Zipf exponent")->default_val(ws.zipf_exponent);
  bench->add_option("--scan-len", ws.scan_length, "Records per scan")->default_val(ws.scan_length);
  bench->add_option("--concurrency", ws.concurrency, "Client connections")->default_val(ws.concurrency);
  bench->add_option("--seed", ws.seed, "Workload seed")->default_val(ws.seed);
  bench->add_option("--out", b_out, "Line-delimited report file");
  bench->add_option("--peers", b_peers, "Member addresses; omit with --local");
  bench->add_option("--local", b_local, "Start this many in-process nodes instead")->default_val(0);
  bench->add_option("--dir", b_dir, "Data directory for --local")->default_val(b_dir);

  // ---- sim ----
  auto* sim = app.add_subcommand("sim", "Deterministic simulation with fault injection");
  std::string s_scenario, s_trace;
  uint64_t s_seed = 0;
  bool s_seed_set = false;
  sim->add_option("--scenario", s_scenario, "Scenario JSON file")->required();
  sim->add_option("--seed", s_seed, "Override the scenario seed")->each([&](const std::string&) { s_seed_set = true; });
  sim->add_option("--trace", s_trace, "Write the trace as TSV");

  // ---- recover-test ----
  auto* recover = app.add_subcommand("recover-test", "Kill a node in a GC phase and time its recovery");
  RecoveryOptions ro;
  std::string r_phase = "pre";
  ro.dir = "nezha-recover";
  recover->add_option("--phase", r_phase, "pre, during or post")->default_val(r_phase);
  recover->add_option("--dir", ro.dir, "Scratch directory")->default_val(ro.dir.string());
  recover->add_option("--records", ro.records, "Puts before the kill")->default_val(ro.records);
  recover->add_option("--keys", ro.key_count, "Distinct keys")->default_val(ro.key_count);
  recover->add_option("--value-size", ro.value_size, "Value bytes")->default_val(ro.value_size);

  // ---- compare ----
  auto* compare = app.add_subcommand("compare", "Same workload in nezha and baseline mode");
  WorkloadSpec cs;
  cs.kind = WorkloadKind::kLoad;
  cs.op_count = 10'000;
  cs.value_size = 16 * 1024;
  CompareOptions co;
  co.dir = "nezha-compare";
  std::string cmp_out, cmp_fsync = "always";
  compare->add_option("--ops", cs.op_count, "Puts")->default_val(cs.op_count);
  compare->add_option("--value-size", cs.value_size, "Value bytes")->default_val(cs.value_size);
  compare->add_option("--concurrency", cs.concurrency, "Client connections")->default_val(cs.concurrency);
  compare->add_option("--nodes", co.nodes, "Cluster size")->default_val(co.nodes);
  compare->add_option("--dir", co.dir, "Scratch directory")->default_val(co.dir.string());
  compare->add_option("--fsync", cmp_fsync, "always or none")->default_val(cmp_fsync);
  compare->add_option("--compaction-factor", co.base.baseline.compaction_factor, "Baseline compaction rewrite factor")
      ->default_val(co.base.baseline.compaction_factor);
  compare->add_option("--out", cmp_out, "Write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*node) {
      nc.peers = parse_peers(node_peers);
      nc.mode = parse_node_mode(node_mode);
      nc.fsync = parse_fsync_policy(node_fsync);
      if (!node_config.empty()) nc = apply_node_config_json(read_text(node_config), nc);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      NodeDaemon d(nc);
      d.start();
      std::cerr << "node " << nc.id << " listening on port " << d.port() << " (" << node_mode_name(nc.mode) << ")\n";
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      d.stop();
      return 0;
    }
    if (*client) {
      KvClientOptions o;
      o.addresses = address_list(client_peers);
      o.request_timeout_ms = client_timeout;
      KvClient kv(o);
      if (*c_put) return print_response(kv.put(c_key, c_value));
      if (*c_get) return print_response(kv.get(c_key));
      if (*c_scan) return print_response(kv.scan(c_start, c_end, c_limit));
      if (*c_status) {
        if (c_node < 1 || c_node > o.addresses.size()) throw Error(ErrorCode::kInvalidArgument, "no such node");
        auto s = kv.status(c_node - 1);
        if (!s) {
          std::cerr << "node " << c_node << " unreachable\n";
          return 2;
        }
        std::cout << *s << "\n";
        return 0;
      }
    }
    if (*bench) {
      ws.kind = parse_workload_kind(b_workload);
      WorkloadRunOptions wo;
      wo.jsonl_path = b_out;
      MetricsReport report;
      if (b_local > 0) {
        LocalClusterOptions lo;
        lo.nodes = b_local;
        lo.dir = b_dir;
        LocalCluster cluster(lo);
        cluster.wait_leader();
        report = run_workload(ws, cluster.addresses(), wo);
      } else {
        if (b_peers.empty()) throw Error(ErrorCode::kInvalidArgument, "--peers or --local is required");
        report = run_workload(ws, address_list(b_peers), wo);
      }
      std::cout << report.summary();
      return report.failed() ? 1 : 0;
    }
    if (*sim) {
      SimConfig config = load_scenario(s_scenario);
      if (s_seed_set) config.faults.seed = s_seed;
      const SimResult r = run_simulation(config);
      const SafetyReport safety = check_safety(r.trace);
      const LinearizabilityResult lin = check_linearizable(r.history);
      if (!s_trace.empty()) {
        std::ofstream out(s_trace);
        out << trace_to_tsv(r.trace);
      }
      std::cout << "seed " << config.faults.seed << ": " << r.trace.size() << " events, " << r.ops_ok << " ops ok, "
                << r.ops_unknown << " unknown, " << r.ops_failed << " failed, " << r.crashes << " crashes, "
                << r.gc_cycles << " gc cycles, " << r.snapshots_installed << " snapshot installs\n";
      for (const auto& v : safety.violations) std::cout << "VIOLATION " << v.property << ": " << v.detail << "\n";
      std::cout << "safety " << (safety.ok() ? "ok" : "VIOLATED") << ", linearizable " << (lin.ok ? "yes" : "NO")
                << ", converged " << (r.converged ? "yes" : "no") << "\n";
      if (!lin.ok) std::cout << lin.detail << "\n";
      return safety.ok() && lin.ok && r.converged ? 0 : 1;
    }
    if (*recover) {
      const RecoveryReport r = measure_recovery(parse_kill_phase(r_phase), ro);
      std::cout << r.to_json() << "\n";
      return 0;
    }
    if (*compare) {
      co.base.fsync = parse_fsync_policy(cmp_fsync);
      const ComparisonReport r = compare_modes(cs, co);
      std::cout << r.summary();
      if (!cmp_out.empty()) {
        std::ofstream out(cmp_out);
        out << r.to_json() << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kIntegrityFailure ? 3 : 2;
  }
  return 0;
}
