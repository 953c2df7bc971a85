"""Metrics, experiment runner, reports and the command line."""
