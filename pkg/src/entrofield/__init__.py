"""Entropic dynamics of scalar fields on periodic lattices.

Modules: ``lattice`` (geometry and modes), ``kernel`` (max-entropy step
kernel), ``grid`` (exact few-site dynamics of (ρ, Φ) and Ψ), ``freefield``
(Gaussian free-field vacuum), ``ensemble`` (walker realisation),
``analytics`` (continuum oracles) and ``cli``.
"""
__version__ = "0.1.0"
