#include "s3pet/cli.hpp"

int main(int argc, char** argv) { return s3pet::run_cli(argc, argv); }
