"""Experiment harness: norm estimation, lemma checks, sweeps and the command line."""
