#pragma once

#include "fedsim/config.hpp"

#include <iosfwd>
#include <string>

namespace fedsim {

// Experiment driver behind the CLI subcommands. Each returns a process exit
// code and reports failures on the given stream.

// Executes the round loop; writes rounds.csv (one row per round, flushed as
// rounds finish), summary.json, and the resolved config echo.
int cmd_run(const ExperimentConfig& cfg, std::ostream& log);

// Runs the gradient-inversion attack against simulated one-step updates for
// the configured defense; writes psnr.csv and per-target PGM pairs.
int cmd_attack(const ExperimentConfig& cfg, std::ostream& log);

// Prints client count, size histogram, and per-client class counts; writes
// partition.csv.
int cmd_partition_stats(const ExperimentConfig& cfg, std::ostream& log);

// Post-hoc analysis of a recorded rounds.csv: rounds-to-fraction table
// against a reference accuracy.
int cmd_diagnose(const std::string& rounds_csv, double reference_accuracy, std::ostream& log);

// Shared CSV helpers (17 significant digits so determinism is byte-checkable).
std::string csv_double(double v);

} // namespace fedsim
