"""Gibbs ensembles, diagonal Green's functions and Hamiltonian flows for defocusing mKdV."""

from .flows import HkFlow, MkdvFlow, hk_flow, mkdv_flow
from .gibbs import GibbsSampler
from .greens import GreensTransformer, diag_greens
from .lattice import LatticeField
from .miura import MiuraTransformer, miura
from .oscillator import OscillatorSpec, build_spectrum

__version__ = "0.1.0"

__all__ = [
    "GibbsSampler",
    "GreensTransformer",
    "HkFlow",
    "LatticeField",
    "MiuraTransformer",
    "MkdvFlow",
    "OscillatorSpec",
    "build_spectrum",
    "diag_greens",
    "hk_flow",
    "miura",
    "mkdv_flow",
]
