#include <string>
#include <vector>

#include "trajalign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return trajalign::cli::dispatch(args);
}
