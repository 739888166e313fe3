"""Experiment plumbing: data, metrics, diagnostics, checkpoints and the CLI."""
