#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlsi/data/dataset.hpp"
#include "fedlsi/federation/pipeline.hpp"

namespace fedlsi::report {

// Full experiment description. Parsed from a strict JSON document: unknown
// keys are errors, missing keys take the defaults below.
struct ExperimentConfig {
    // data: synthetic spec or a CSV path (csv_path nonempty wins)
    data::SyntheticSpec synthetic;
    std::string csv_path;

    federation::PipelineConfig pipeline;
    double val_fraction = 0.1;

    // "all" rotates the unseen domain over every domain id
    bool unseen_all = true;
    int unseen_id = 0;

    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_dir = "out";

    void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace fedlsi::report
