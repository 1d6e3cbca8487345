#pragma once

// Mix-and-match sweeps: {CPC, CIC, MP} x {TG, CG, PG} x delta_theta cells,
// all cells sharing the same episode seeds (paired comparison). Episodes
// run on a worker pool; results are stored by (cell, episode index), so the
// output does not depend on the worker count or completion order.

#include "trifinger/harness/episode.hpp"
#include "trifinger/harness/results.hpp"

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace trifinger::harness {

/// Seed of episode k in every cell.
inline std::uint64_t episode_seed(std::uint64_t base_seed, int k) {
  return mix_seed(base_seed, static_cast<std::uint64_t>(k));
}

/// Runs job(i) for i in [0, n) on `workers` threads. Exceptions are
/// rethrown (first by index) after all workers finish.
inline void parallel_for(int n, int workers, const std::function<void(int)>& job) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min(workers, n));
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < w; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct CellSpec {
  ControllerKind controller;
  GraspKind grasp;
  double delta_theta_deg;
};

struct SweepResult {
  std::vector<CellSpec> cells;
  std::vector<std::vector<EpisodeLog>> logs;  // per cell, episode-index order
  std::vector<AggregateRow> rows;
};

inline ExperimentConfig cell_config(const ExperimentConfig& base, const CellSpec& cell) {
  ExperimentConfig c = base;
  c.controller = cell.controller;
  c.grasp = cell.grasp;
  c.delta_theta_deg = cell.delta_theta_deg;
  return c;
}

/// Runs the given cells with `trials` paired episodes each.
inline SweepResult run_cells(const ExperimentConfig& base, const std::vector<CellSpec>& cells,
                             int trials, int workers) {
  base.validate();
  if (trials < 1) throw ConfigError("run_cells: trials must be >= 1");
  SweepResult res;
  res.cells = cells;
  res.logs.assign(cells.size(), std::vector<EpisodeLog>(static_cast<std::size_t>(trials)));
  const int n = static_cast<int>(cells.size()) * trials;
  parallel_for(n, workers, [&](int job) {
    const std::size_t cell = static_cast<std::size_t>(job / trials);
    const int k = job % trials;
    const ExperimentConfig c = cell_config(base, cells[cell]);
    res.logs[cell][static_cast<std::size_t>(k)] = run_episode(c, episode_seed(base.seed, k));
  });
  for (const auto& logs : res.logs) res.rows.push_back(aggregate(logs));
  return res;
}

inline std::vector<CellSpec> mix_and_match_cells(const std::vector<double>& delta_thetas) {
  std::vector<CellSpec> cells;
  for (ControllerKind ctl : {ControllerKind::CPC, ControllerKind::CIC, ControllerKind::MP}) {
    for (GraspKind g : {GraspKind::TG, GraspKind::CG, GraspKind::PG}) {
      for (double d : delta_thetas) cells.push_back(CellSpec{ctl, g, d});
    }
  }
  return cells;
}

/// The Table-II grid: 3 controllers x 3 grasps x config.sweep_delta_theta_deg
/// (27 rows with the default angles) on the config's task level.
inline SweepResult run_mix_and_match(const ExperimentConfig& base, int trials) {
  return run_cells(base, mix_and_match_cells(base.sweep_delta_theta_deg), trials, base.workers);
}

}  // namespace trifinger::harness
