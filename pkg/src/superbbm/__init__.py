"""Skeleton decomposition toolkit for super-Brownian motion with a barrier.

Submodules
----------
mechanism      branching mechanisms (alpha, beta, Pi) and their transforms
backbone       skeleton branch rate, offspring law, exact branch-event sampler
waves          monotone wave profiles, the exit mechanism, decay-rate fits
sim            event-driven Monte Carlo of the skeleton BBM with absorption
exit_analysis  absorbed-mass generating-function / Laplace-exponent flows
config         mechanism files and experiment descriptions
verify, cli    acceptance suite and the command-line front end
"""

from . import backbone, config, exit_analysis, mechanism, sim, waves  # noqa: F401

__version__ = "0.1.0"
