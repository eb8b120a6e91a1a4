#include "metastyle/run_config.hpp"

int main(int argc, char** argv) {
  auto parsed = metastyle::parse_command_line(argc, argv);
  if (!parsed.config) return parsed.exit_code;
  return metastyle::run(*parsed.config);
}
