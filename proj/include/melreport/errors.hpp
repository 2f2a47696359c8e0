#pragma once

#include <stdexcept>
#include <string>

namespace melreport {

// Violated precondition of an operation (empty input where one is required,
// non-scalar loss, double-applied adapters, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Missing files, malformed manifests, schema mismatches.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed data that disagrees with the declared schema (e.g. feature
// dimension).
class SchemaError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite gradients or losses during optimization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace melreport
