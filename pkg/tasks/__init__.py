# Pipeline tasks: one entry point per CLI subcommand
