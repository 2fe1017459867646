#ifndef MMFA_COMMANDS_HPP_
#define MMFA_COMMANDS_HPP_

#include <string>
#include <vector>

namespace mmfa::cli {

/// Runs one subcommand: gen-data, train, extract, eval, grad-check, ablate,
/// or help. Returns 0 on success, 1 on validation errors (bad arguments,
/// unknown keys, mismatched shapes), 2 on runtime errors (I/O, corrupt
/// files, non-finite losses). Errors are printed to stderr with the
/// offending token named.
int dispatch(const std::vector<std::string>& args);

std::string usage();

}  // namespace mmfa::cli

#endif  // MMFA_COMMANDS_HPP_
