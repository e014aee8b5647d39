"""Data generation, IO, experiment runners and the command line."""
