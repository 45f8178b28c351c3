#include "grpo_forge/cli.hpp"

int main(int argc, char** argv) { return grpo_forge::run_cli(argc, argv); }
