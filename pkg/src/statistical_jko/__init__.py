"""
Statistical JKO Lab - Wasserstein proximal flows with estimated potentials

This package contains the numerical laboratory for the statistical JKO scheme:
- Grid densities, free-energy functionals and 1D optimal transport
- The flux-descent JKO step driven by offline and online parameter estimates
- Crank-Nicolson solvers for the Fokker-Planck equation and its limiting fields
- The Bures-Wasserstein (Gaussian) restriction of the flow
- A config-driven experiment runner and the `wgf` command line

Every run is reproducible from its configuration document and seed.
"""

__version__ = "1.0.0"
__author__ = "Statistical JKO Lab"
__description__ = "Numerical laboratory for JKO schemes with estimated potentials"
