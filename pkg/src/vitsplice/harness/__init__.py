"""Configuration, file I/O, synthetic data and the command-line workflows."""
