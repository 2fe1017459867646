#include <string>
#include <vector>

#include "mmfa/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmfa::cli::dispatch(args);
}
