"""Pseudospectral simulation and large-time expansion profiles for 2D drift-diffusion models.

Three bilinear models share the form ``u_t = Δu + ∇·f[u]`` on the plane:

* ``QG``  - dissipative quasi-geostrophic equation, ``f = -u R⊥u``
* ``CD``  - convection-diffusion, ``f = a|u|u`` (``CD2``: ``f = a u²``)
* ``FR``  - forward-Riesz drift, ``f = u Ru``

The package integrates them on a periodic box, evaluates the closed-form
terms of their large-time expansions and checks one against the other.
"""

from qgexpand.spectral import (
    Field,
    Grid,
    MomentSet,
    MultiplierOp,
    apply_multiplier,
    dealias,
    lq_norm,
    make_grid,
    moments,
    skew_pairing,
)
from qgexpand.dynamics import (
    Bump,
    DiagnosticsRow,
    InitialDataSpec,
    ModelKind,
    ModelSpec,
    SimConfig,
    nonlinear_flux,
    run,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "Bump",
    "DiagnosticsRow",
    "Field",
    "Grid",
    "InitialDataSpec",
    "ModelKind",
    "ModelSpec",
    "MomentSet",
    "MultiplierOp",
    "SimConfig",
    "apply_multiplier",
    "dealias",
    "lq_norm",
    "make_grid",
    "moments",
    "nonlinear_flux",
    "run",
    "skew_pairing",
    "step",
]
