#pragma once

#include <stdexcept>
#include <string>

namespace cda {

// Base type for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed manifest, invalid synthetic spec, bad config.
struct ValidationError : Error {
  using Error::Error;
};

// Violated call contract: shape mismatch, missing precondition.
struct ContractError : Error {
  using Error::Error;
};

// Filesystem or file-format problems.
struct IoError : Error {
  using Error::Error;
};

// Training-side read of sealed target labels. The unlabeled-target contract
// makes this a hard error, never a warning.
struct LabelAccessError : Error {
  using Error::Error;
};

// Artifact produced under a different configuration than the one in effect.
struct LineageError : Error {
  using Error::Error;
};

// Requested stage needs an artifact that an earlier stage has not produced.
struct MissingArtifactError : Error {
  using Error::Error;
};

}  // namespace cda
