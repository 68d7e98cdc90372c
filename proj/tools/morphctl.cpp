// Copyright (c) 2026 The Morpheus Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// morphctl: command-line front end. Boots a controller over a topology
// file, deploys version updates from spec files, inspects the store, and
// runs the canned experiments.
//
// One invocation is one process; durable state lives in a JSON state file
// ({"topology", "apps", "nib"}) that start writes and deploy/nib read.
// MORPHEUS_CLOCK=fixed:<t> pins the wall clock that transformer programs
// observe, for reproducible stamps.
//
// Exit codes: 0 success, 1 error or non-chain abort, 2 chain-mismatch
// abort.

#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "morpheus/scenario.hpp"

namespace {

using namespace morpheus;

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kChainMismatchExit = 2;

Document read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for read: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_document(ss.str());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  out << text;
}

// A whole controller: runtime, simulated network, store, platform, apps,
// and the update coordinator, wired exactly like the library tests.
struct Stack {
  Runtime rt;
  sim::SimNet net;
  std::shared_ptr<nib::NibStore> nib;
  Platform plat;
  UpdateCoordinator::HostMap hosts;
  std::map<std::string, Document> configs;
  UpdateCoordinator updc;

  Stack(sim::TopologySpec topo, std::shared_ptr<Clock> nib_clock)
      : rt(1),
        net(std::move(topo), &rt),
        nib(std::make_shared<nib::NibStore>(std::move(nib_clock))),
        plat(&net, nib.get()),
        updc(&rt, &plat, nib.get(), &hosts, &configs) {}

  void add_app(const std::string& id, const std::string& version,
               Document config) {
    configs[id] = config;
    auto host = std::make_unique<AppHost>(&rt, &plat, nib.get(), id, version,
                                          std::move(config));
    host->spawn();
    hosts[id] = std::move(host);
  }
};

// Reads every key at its namespace's current version, so lazy migrations
// are materialized before the store is serialized (transformer programs do
// not survive the process).
void settle_store(nib::NibStore& nib) {
  for (const std::string& ns : nib.namespaces()) {
    auto s = nib.connect("morphctl", {{ns, nib.meta(ns)->current()}});
    for (const std::string& key : nib.list_keys(s, ns, "*"))
      nib.get(s, ns, key);
  }
}

void save_state(const Stack& st, const Document& topo_json,
                const std::string& path) {
  Document apps = Document::array();
  for (const auto& [id, host] : st.hosts) {
    if (!host) continue;
    apps.push_back({{"id", id},
                    {"version", host->version()},
                    {"config", st.configs.at(id)}});
  }
  Document state{
      {"topology", topo_json}, {"apps", apps}, {"nib", st.nib->to_json()}};
  write_file(path, state.dump(2) + "\n");
}

std::unique_ptr<Stack> load_state(const Document& state) {
  auto st = std::make_unique<Stack>(
      sim::TopologySpec::from_json(state.at("topology")), make_cli_clock());
  st->nib->load_json(state.at("nib"));
  st->net.start();
  for (const auto& a : state.at("apps"))
    st->add_app(a.at("id").get<std::string>(),
                a.at("version").get<std::string>(), a.value("config", Document::object()));
  st->rt.run_until(st->rt.now() + 2 * kBootDelaySec);
  for (const auto& [id, host] : st->hosts)
    if (host->failed())
      throw MorpheusError("app " + id + " failed to boot: " + host->error());
  return st;
}

int cmd_start(const std::string& topo_path, const std::string& apps_arg,
              const std::string& configs_path, const std::string& state_path,
              double settle) {
  const Document topo_json = read_json_file(topo_path);
  Document configs = Document::object();
  if (!configs_path.empty()) configs = read_json_file(configs_path);

  Stack st(sim::TopologySpec::from_json(topo_json), make_cli_clock());
  st.net.start();
  std::stringstream apps(apps_arg);
  std::string item;
  while (std::getline(apps, item, ',')) {
    const auto at = item.find('@');
    if (at == std::string::npos)
      throw MorpheusError("--apps entries look like <id>@<version>: " + item);
    const std::string id = item.substr(0, at);
    st.add_app(id, item.substr(at + 1), configs.value(id, Document::object()));
  }
  st.rt.run_until(settle);
  for (const auto& [id, host] : st.hosts) {
    if (host->failed())
      throw MorpheusError("app " + id + " failed to boot: " + host->error());
    std::cout << "app " << id << "@" << host->version() << " running\n";
  }
  for (const std::string& ns : st.nib->namespaces())
    std::cout << "ns " << ns << "@" << st.nib->meta(ns)->current() << "\n";
  save_state(st, topo_json, state_path);
  std::cout << "state written to " << state_path << "\n";
  return kOk;
}

int cmd_deploy(const std::string& spec_path, const std::string& state_path) {
  const Document state = read_json_file(state_path);
  const UpdateSpec spec = UpdateSpec::from_json(read_json_file(spec_path));
  auto st = load_state(state);

  st->updc.start(spec);
  const double deadline = st->rt.now() + 120.0;
  while (st->updc.active() && st->rt.now() < deadline)
    st->rt.run_until(st->rt.now() + 0.25);
  const UpdateReport& rep = st->updc.report();
  std::cout << rep.to_json().dump(2) << "\n";

  settle_store(*st->nib);
  save_state(*st, state.at("topology"), state_path);
  if (rep.status == "done") return kOk;
  std::cerr << "deploy aborted: " << rep.reason << " (" << rep.detail << ")\n";
  return rep.reason == "AbortChainMismatch" ? kChainMismatchExit : kError;
}

int cmd_nib(const std::string& what, const std::string& ns,
            const std::string& key, const std::string& state_path) {
  const Document state = read_json_file(state_path);
  nib::NibStore store(make_cli_clock());
  store.load_json(state.at("nib"));
  if (what == "dump") {
    std::cout << store.to_json().dump(2) << "\n";
    return kOk;
  }
  if (what == "versions") {
    for (const std::string& n : store.namespaces()) {
      const auto* m = store.meta(n);
      std::cout << n << "@" << m->current() << "  history=";
      for (size_t i = 0; i < m->history.size(); ++i)
        std::cout << (i ? "," : "") << m->history[i];
      std::cout << "\n";
    }
    return kOk;
  }
  // get
  const auto* m = store.meta(ns);
  if (!m) throw MorpheusError("no such namespace: " + ns);
  auto s = store.connect("morphctl", {{ns, m->current()}});
  auto doc = store.get(s, ns, key);
  if (!doc) throw MorpheusError("no such key: " + ns + "/" + key);
  std::cout << doc->dump(2) << "\n";
  return kOk;
}

int cmd_scenario(const std::string& name, const std::string& mode,
                 uint64_t seed, double duration, const std::string& out_path,
                 const std::string& report_path) {
  auto sc = scenarios::make(name, parse_update_mode(mode), seed);
  if (duration > 0)
    sc->run(duration);
  else
    sc->run();

  const std::string csv = sc->csv();
  const std::string reports = sc->reports_json().dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    write_file(out_path, csv);
    std::cout << reports;
  }
  if (!report_path.empty()) write_file(report_path, reports);

  for (const auto& r : sc->reports())
    if (r.status != "done") {
      std::cerr << "scenario update aborted: " << r.reason << "\n";
      return r.reason == "AbortChainMismatch" ? kChainMismatchExit : kError;
    }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morphctl: drive and inspect a Morpheus controller"};
  app.require_subcommand(1);
  std::string state_path = "morpheus_state.json";
  app.add_option("--state", state_path, "controller state file")
      ->capture_default_str();

  auto* start = app.add_subcommand("start", "boot a controller and save it");
  std::string topo_path, apps_arg, configs_path;
  double settle = 3.0;
  start->add_option("--topo", topo_path, "topology JSON file")->required();
  start->add_option("--apps", apps_arg, "comma-separated <id>@<version>")
      ->required();
  start->add_option("--configs", configs_path,
                    "JSON file mapping app id to its config block");
  start->add_option("--settle", settle, "seconds to run before saving")
      ->capture_default_str();

  auto* deploy = app.add_subcommand("deploy", "run a version update");
  std::string spec_path;
  deploy->add_option("spec", spec_path, "update spec JSON file")->required();

  auto* nib = app.add_subcommand("nib", "inspect the saved store");
  std::string nib_what, nib_ns, nib_key;
  nib->add_option("what", nib_what, "dump | get | versions")
      ->required()
      ->check(CLI::IsMember({"dump", "get", "versions"}));
  nib->add_option("ns", nib_ns, "namespace (for get)");
  nib->add_option("key", nib_key, "key (for get)");

  auto* scenario = app.add_subcommand("scenario", "run a canned experiment");
  std::string sc_name, sc_mode = "state_transfer", out_path, report_path;
  uint64_t seed = 1;
  double duration = 0;
  scenario->add_option("name", sc_name, "firewall | routing | loadbalancer")
      ->required()
      ->check(CLI::IsMember(morpheus::scenarios::names()));
  scenario
      ->add_option("--mode", sc_mode,
                   "state_transfer | simple_restart | record_replay")
      ->capture_default_str();
  scenario->add_option("--seed", seed, "RNG seed")->capture_default_str();
  scenario->add_option("--duration", duration,
                       "seconds to simulate (0 = scenario default)");
  scenario->add_option("--out", out_path,
                       "write the bucket series CSV here (default: stdout)");
  scenario->add_option("--report", report_path,
                       "also write update reports JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (start->parsed())
      return cmd_start(topo_path, apps_arg, configs_path, state_path, settle);
    if (deploy->parsed()) return cmd_deploy(spec_path, state_path);
    if (nib->parsed()) {
      if (nib_what == "get" && (nib_ns.empty() || nib_key.empty()))
        throw morpheus::MorpheusError("nib get needs <ns> <key>");
      return cmd_nib(nib_what, nib_ns, nib_key, state_path);
    }
    if (scenario->parsed())
      return cmd_scenario(sc_name, sc_mode, seed, duration, out_path,
                          report_path);
  } catch (const morpheus::ChainMismatch& e) {
    std::cerr << "error: ChainMismatch: " << e.what() << "\n";
    return kChainMismatchExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
