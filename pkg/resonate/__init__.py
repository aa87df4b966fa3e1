"""Numerical toolkit for Helmholtz resonators with a thin neck.

Meshing, finite elements, Dirichlet spectra, resonances through a complex
absorbing layer, resolvent gluing, nodal domains and wave decay.
"""

__version__ = "0.1.0"
