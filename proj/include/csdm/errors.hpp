#pragma once

#include <stdexcept>
#include <string>

namespace csdm {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures onto exit codes (2 = usage/config, 1 = everything else).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

struct MetricError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace csdm
