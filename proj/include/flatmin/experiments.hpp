#pragma once

// Scenario runner. A scenario expands to sweep points x repetitions; each
// run generates its dataset, executes the protocol and reports metrics and
// tables, and the protocol then aggregates over runs.
//
// Common keys
//   seed, repetitions       run seeds are seed, seed + 1, ...
//   seeds                   explicit seed list (overrides the above)
//   sweep.param             any scenario key; sweep.values its values
//   dataset.seed            fixed dataset seed (default: the run seed)
//   model.hidden            hidden widths, comma separated ("" for none)
//   model.activation        linear | relu | power:<m> | poly:<degree>
//   model.init              zero | gaussian | rowspace; model.init_std
//   loss                    square | logistic | cross_entropy
//   train.eta, train.iterations, train.batch_size, train.weight_decay,
//   train.eval_every, train.stop_loss, train.sampling (replacement | cyclic)
//   output                  artifact directory
//   full.<key>              replaces <key> under the full-budget flag

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flatmin/artifacts.hpp"
#include "flatmin/datasets.hpp"
#include "flatmin/perturbation.hpp"
#include "flatmin/scenario.hpp"
#include "flatmin/serialize.hpp"
#include "flatmin/training.hpp"

namespace flatmin {

struct RunOptions {
  std::optional<std::uint64_t> seed;  // replaces the scenario's base seed
  std::string out_dir;                // replaces the output key
  int threads = 1;
  bool write = true;                  // false: keep results in memory only
  bool full_budget = false;
};

struct RunSummary {
  int index = 0;
  std::uint64_t seed = 0;
  std::string sweep_value;
  bool ok = false;
  std::string error;
  Json metrics = Json::object();
};

using NamedTable = std::pair<std::string, CsvTable>;

struct ScenarioResult {
  Scenario scenario;  // after the full-budget and seed overrides
  std::vector<RunSummary> runs;
  Json aggregate = Json::object();
  Json summary;   // contents of summary.json
  Json manifest;  // contents of manifest.json
  std::vector<NamedTable> tables;  // file name and table, in file order
  std::string artifact_dir;        // empty when nothing was written

  int runs_ok() const;
  int runs_failed() const { return static_cast<int>(runs.size()) - runs_ok(); }
  const CsvTable* table(const std::string& name) const;
};

/// Version string compiled into the library.
std::string code_version();

std::vector<std::uint64_t> scenario_seeds(const Scenario& s);
Activation scenario_activation(const Scenario& s);
Network build_network(const Scenario& s, const Dataset& train, std::uint64_t seed);
TrainConfig train_config(const Scenario& s, std::uint64_t seed, const std::string& prefix = "train.");
LossKind scenario_loss(const Scenario& s, Task task);
PerturbationConfig perturbation_config(const Scenario& s, std::uint64_t seed);

/// Validates s, executes every run on a pool of opts.threads workers and
/// merges results in run order. Failed runs are recorded, not thrown.
ScenarioResult run_scenario(const Scenario& s, const RunOptions& opts = {});

}  // namespace flatmin
