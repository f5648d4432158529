"""Numerical operator calculus for cone Laplacians and the fractional
porous medium equation.

Modules
-------
linop
    Dense operators, shifted solves, norms, eigen oracle, CSV round trip.
sectorial
    Sectorial-bound probes, Rademacher R-bound estimates, resolvent decay
    fits, Laurent expansions at resolvent poles.
funcalc
    Quadrature functional calculus: fractional, complex and imaginary
    powers, fractional resolvents on half-line and ray contours, H-infinity
    evaluation, shift comparison.
cone
    Cross-section spectral data, weight windows, log-radial discretization
    of the cone Laplacian with the locally-constant extension, Mellin
    weighted norms, tip decay fits, dilation covariance.
fpme
    Semi-implicit time integration of the fractional porous medium
    equation plus commutator and sectoriality probes of its linearization.
cli
    Batch driver with machine-readable JSON/CSV reports.
"""

__version__ = "0.1.0"
