"""Experiment harness: task generators, baselines, persistence, verification and CLI."""
