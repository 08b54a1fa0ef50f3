#pragma once

#include <string>
#include <vector>

#include "segrobust/attacks.hpp"
#include "segrobust/config.hpp"
#include "segrobust/data.hpp"

namespace segrobust {

// Deterministic in-memory dataset from the data section: standardized
// phantoms "subject_00".."subject_NN" split by seeded shuffle.
Dataset build_dataset(const DataConfig& data);

// Attack-grid entries from config; iterative budgets are spread over
// `iterations` equal steps. Always contains the epsilon = 0 reference
// when the epsilon list does.
std::vector<AttackSpec> build_attack_specs(const AttackGridConfig& grid);

void cmd_gen_data(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config);
void cmd_attack(const ExperimentConfig& config, const std::string& checkpoint,
                int subject_index);
void cmd_evaluate(const ExperimentConfig& config,
                  const std::vector<std::string>& checkpoints);
void cmd_report(const ExperimentConfig& config);

// Full argv entry point; maps errors to exit codes
// (0 ok, 1 usage/config, 2 divergence, 3 I/O).
int run_cli(int argc, const char* const* argv);

}  // namespace segrobust
