"""Configuration, experiment orchestration, checkpoints, aggregation and the CLI."""
