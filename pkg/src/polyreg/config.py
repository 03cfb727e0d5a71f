"""JSON experiment configuration: defaults, loading, object builders.

The config describes the grid and domain mask, the regularization density,
the synthetic reference image, the noise sweep and the solver settings.
Unknown keys are rejected early, so typos fail loudly rather than silently
falling back to defaults.
"""

from __future__ import annotations

import copy
import json
import math

from .bregman import SourceConditionParams, poly_subgradient, zero_subgradient
from .fields import Grid, disk_mask, full_mask
from .integrands import detsq_energy, pq_energy, rotation_energy
from .rates import RateExperiment, geometric_levels
from .registration import ForwardModel, blob_image, random_blobs, rotation_field, warp


def default_config() -> dict:
    return {
        "grid": {"bounds": [[-1.0, 1.0], [-1.0, 1.0]], "nx": 64, "ny": 64},
        "mask": {"type": "disk", "center": [0.0, 0.0], "radius": 1.0, "path": None},
        "integrand": {"name": "rotation", "p": 4.0, "q": 2.0},
        "image": {"blobs": None, "seed": 7},
        "experiment": {
            "theta": math.pi / 6.0,
            "delta0": 0.1,
            "levels": 7,
            "alpha0": 0.05,
            "epsilon": 0.5,
            "seeds": [0],
            "subgradient": "zero",
            "fit_levels": 4,
            "exact_row": True,
        },
        "solver": {"tol": 3e-7, "max_iter": 4000, "memory": 12, "starts": 3},
        "source_condition": {
            "beta1": 0.5,
            "beta2": 1.0,
            "alpha_bar": None,
            "rho": None,
        },
        "verify": {"trials": 200, "radius": 0.5, "seed": 11},
    }


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ValueError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with the JSON file at ``path`` (if given)."""
    cfg = default_config()
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as fh:
        user = json.load(fh)
    return _merge(cfg, user)


def build_grid(cfg) -> Grid:
    g = cfg["grid"]
    bounds = tuple(tuple(float(v) for v in b) for b in g["bounds"])
    bare = Grid(bounds, int(g["nx"]), int(g["ny"]))
    m = cfg["mask"]
    kind = m["type"]
    if kind == "disk":
        mask = disk_mask(bare, center=tuple(m["center"]), radius=float(m["radius"]))
    elif kind == "none":
        mask = full_mask(bare)
    elif kind == "csv":
        from .io import load_mask
        mask = load_mask(m["path"])
    else:
        raise ValueError(f"unknown mask type {kind!r}")
    return bare.with_mask(mask)


def build_integrand(cfg):
    spec = cfg["integrand"]
    name = spec["name"]
    if name == "rotation":
        return rotation_energy(spec["p"])
    if name == "pq":
        return pq_energy(spec["p"], spec["q"])
    if name == "detsq":
        return detsq_energy()
    raise ValueError(f"unknown integrand {name!r}")


def build_image(cfg, grid):
    img = cfg["image"]
    blobs = img["blobs"]
    if blobs is None:
        blobs = random_blobs(img["seed"])
    return blob_image(grid, blobs)


def misfit_exponent(cfg) -> float:
    return float(cfg["integrand"]["q"])


def build_experiment(cfg) -> RateExperiment:
    grid = build_grid(cfg)
    integrand = build_integrand(cfg)
    reference = build_image(cfg, grid)
    ecfg = cfg["experiment"]
    q = misfit_exponent(cfg)

    u_dagger = rotation_field(float(ecfg["theta"]), grid)
    exact_data = warp(reference, u_dagger, strict=True)
    forward = ForwardModel(reference=reference, exact_data=exact_data, q=q)

    which = ecfg["subgradient"]
    if which == "zero":
        w = zero_subgradient(integrand, u_dagger)
    elif which == "gradient":
        w = poly_subgradient(integrand, u_dagger)
    else:
        raise ValueError(f"unknown subgradient choice {which!r}")

    scfg = cfg["source_condition"]
    alpha_bar = scfg["alpha_bar"]
    if alpha_bar is None:
        alpha_bar = float(ecfg["alpha0"])
    rho = scfg["rho"]
    if rho is None:
        rho = 10.0 * alpha_bar * w.base_energy
    params = SourceConditionParams(
        beta1=float(scfg["beta1"]), beta2=float(scfg["beta2"]),
        rho=float(rho), alpha_bar=float(alpha_bar),
    )

    sol = cfg["solver"]
    return RateExperiment(
        integrand=integrand,
        forward=forward,
        u_dagger=u_dagger,
        w=w,
        deltas=geometric_levels(float(ecfg["delta0"]), 1, int(ecfg["levels"])),
        alpha0=float(ecfg["alpha0"]),
        epsilon=float(ecfg["epsilon"]),
        seeds=tuple(int(s) for s in ecfg["seeds"]),
        source_params=params,
        solver_tol=float(sol["tol"]),
        solver_max_iter=int(sol["max_iter"]),
        solver_memory=int(sol["memory"]),
        solver_starts=int(sol["starts"]),
        fit_levels=int(ecfg["fit_levels"]),
        exact_row=bool(ecfg["exact_row"]),
    )
