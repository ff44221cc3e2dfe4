"""Invertible building blocks: coordinatewise maps, rotations, chains."""

from .affine import AffineFamily, AffineMap
from .backend import active_backend, get_kernels
from .chain import (
    PullbackTarget,
    RotatedTarget,
    TransportChain,
    TransportLayer,
    chain_from_dict,
    chain_from_json,
    chain_to_dict,
    chain_to_json,
    map_from_dict,
    map_to_dict,
)
from .rotation import Rotation, householder_from_rows
from .spline import (
    DEFAULT_BOUND,
    DEFAULT_KNOTS,
    MIN_BIN_FRACTION,
    SOFTPLUS_INV_ONE,
    RQSplineMap,
    SplineFamily,
    compute_knots,
)

__all__ = [
    "AffineFamily", "AffineMap", "RQSplineMap", "SplineFamily",
    "Rotation", "householder_from_rows",
    "TransportChain", "TransportLayer", "PullbackTarget", "RotatedTarget",
    "chain_to_dict", "chain_from_dict", "chain_to_json", "chain_from_json",
    "map_to_dict", "map_from_dict",
    "active_backend", "get_kernels", "compute_knots",
    "DEFAULT_BOUND", "DEFAULT_KNOTS", "MIN_BIN_FRACTION", "SOFTPLUS_INV_ONE",
]


def family_from_spec(spec):
    """Family from a config dict: {"type": "affine"} or
    {"type": "spline", "knots": K, "bound": B}."""
    kind = spec.get("type")
    if kind == "affine":
        return AffineFamily()
    if kind in ("spline", "rq_spline"):
        return SplineFamily(knots=int(spec.get("knots", DEFAULT_KNOTS)),
                            bound=float(spec.get("bound", DEFAULT_BOUND)))
    raise ValueError(f"unknown family type {kind!r}")


def family_to_spec(family):
    if isinstance(family, AffineFamily):
        return {"type": "affine"}
    if isinstance(family, SplineFamily):
        return {"type": "spline", "knots": family.knots, "bound": family.bound}
    raise TypeError(f"cannot serialize family {type(family).__name__}")
