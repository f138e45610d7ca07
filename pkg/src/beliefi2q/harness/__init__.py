"""Experiment orchestration: configs, runs, grid search, plots and the CLI."""
