"""Dynamical low-rank approximation schemes for SDEs.

A small numerical library implementing three time-discretization schemes
for dynamical low-rank approximation (DLRA) of stochastic differential
equations, a full-order Euler-Maruyama reference, seeded coupled Brownian
noise, diagnostics for Gramian lower bounds and mean-square stability,
and a config-driven experiment harness with a CLI.
"""

__version__ = "0.1.0"
