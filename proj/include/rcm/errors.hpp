#pragma once

#include <stdexcept>
#include <string>

namespace rcm {

// Bad argument values (sizes, probabilities, empty sets).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed trees and non-nested subset families.
class StructureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input files that cannot be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A message or belief lost all of its mass. node is -1 when not tied to a node.
class ZeroMassError : public std::runtime_error {
 public:
  ZeroMassError(const std::string& what, int node = -1)
      : std::runtime_error(what), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

// Constraint sets that admit no configuration (matching, Gibbs init).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

// Hard size guards (enumeration oracles) and benchmark budgets.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rcm
