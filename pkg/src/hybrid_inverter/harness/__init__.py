"""Scenario configuration, experiment runner, metrics, CSV output and the command line."""
