#include "markov_mimic/cli.hpp"

int main(int argc, char** argv) { return markov_mimic::cli::run(argc, argv); }
