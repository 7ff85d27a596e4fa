"""Hamiltonian-dynamics spatio-temporal process: simulation, MCMC inference,
prediction and diagnostics."""
__version__ = "0.1.0"
