"""Desk-scale spectral laboratory for Neumann divergence-form diffusion
operators on convex domains: discretization, eigenanalysis, semigroup and
transition-density machinery, perturbation/stability/minimax audits and a
reflected-SDE simulator."""

__version__ = "0.1.0"
