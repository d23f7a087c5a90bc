"""Particle filters for jump-diffusion signals observed through correlated noise.

Modules
-------
model, zoo
    Coefficients, Levy measures, test functions and shipped models.
operators
    Generator, observation and jump operators on test functions.
paths, simulator
    Noise sampling, Euler simulation and observation decomposition.
girsanov
    Likelihood processes of the change of measure.
particle_filter
    Weighted particle filter, filter-equation residuals, innovation checks.
oracles
    Kalman-Bucy, grid density solver and projection-identity fixtures.
config, experiments, cli
    YAML experiment configs, experiment runner and command line.
"""

__version__ = "0.1.0"
