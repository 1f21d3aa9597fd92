"""Column-by-column characteristic evolution in the regular (U, v) gauge."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from . import kernels as K
from .core import CellState, ModelParams, DataError, U_from_u
from .initial_data import (HorizonProfile, IngoingProfile, build_ingoing_data, default_ingoing,
                           horizon_column, integrate_horizon_constraint, power_law_profile,
                           corner_mismatch)


class EvolutionError(RuntimeError):
    """Non-finite state produced by the scheme."""


@dataclass(frozen=True)
class StepControls:
    """Grid and refinement settings.

    U columns are uniform in u = 4M ln(U/4M) between ``u_first`` and the
    u-value of U0 (``U_spacing='log'``), or uniform in U (``'uniform'``); the
    horizon U = 0 is always column 0. In v the base mesh is uniform and
    subdivided wherever |dw|, |dw|/w, |d sigma| or |d phi| per step exceed
    ``max_dw``, ``eta``, ``max_dsigma``. Strips between columns are split in U
    while |dw|/w > ``eta_U`` (or |d sigma| > ``max_dsigma_U``) and r exceeds
    ``r_refine_floor``.
    """

    nU: int = 512
    U_spacing: str = "log"
    u_first: float = -400.0
    base_dv: float = 0.1
    v_max: float = 400.0
    dv_min: float = 1e-12
    max_dw: float = 0.1
    eta: float = 0.05
    max_dsigma: float = 0.05
    eta_U: float = 0.1
    max_dsigma_U: float = 0.1
    r_refine_floor: float = 0.0
    max_U_depth: int = 48
    tol: float = 1e-13
    maxit: int = 8
    id_substeps: int = 4

    def scaled(self, factor: float) -> "StepControls":
        """Controls with every resolution knob divided by ``factor``."""
        return StepControls(
            nU=int(round(self.nU * factor)), U_spacing=self.U_spacing, u_first=self.u_first,
            base_dv=self.base_dv / factor, v_max=self.v_max, dv_min=self.dv_min,
            max_dw=self.max_dw / factor, eta=self.eta / factor, max_dsigma=self.max_dsigma / factor,
            eta_U=self.eta_U / factor, max_dsigma_U=self.max_dsigma_U / factor,
            r_refine_floor=self.r_refine_floor, max_U_depth=self.max_U_depth, tol=self.tol,
            maxit=self.maxit, id_substeps=self.id_substeps)

    def to_dict(self) -> dict:
        return asdict(self)


STOP_NAMES = {K.PREV_END: "reached_vmax", K.REACHED_RMIN: "reached_rmin",
              K.STEP_UNDERFLOW: "step_underflow"}


@dataclass
class Column:
    U: float
    v: np.ndarray
    x: np.ndarray
    stop_reason: str

    def state(self, i: int, M: float = 1.0) -> CellState:
        return CellState.from_array(self.U, float(self.v[i]), self.x[i], M)

    @property
    def r(self):
        return np.sqrt(self.x[:, 0])


@dataclass
class GridSheet:
    """The evolved causal rectangle: column 0 is the horizon, columns ordered in U."""

    params: ModelParams
    controls: StepControls
    v_base: np.ndarray
    columns: List[Column]
    horizon: Optional[HorizonProfile] = None
    stats: dict = field(default_factory=dict)

    @property
    def U_nodes(self) -> np.ndarray:
        return np.array([c.U for c in self.columns])

    @property
    def stop_reasons(self) -> List[str]:
        return [c.stop_reason for c in self.columns]

    def row_index(self, j: int) -> np.ndarray:
        """Index into column j of every base-mesh v (-1 where the column has ended)."""
        col = self.columns[j]
        idx = np.searchsorted(col.v, self.v_base)
        idx = np.minimum(idx, len(col.v) - 1)
        hit = col.v[idx] == self.v_base
        return np.where(hit, idx, -1)

    def n_cells(self) -> int:
        return sum(len(c.v) for c in self.columns)


def make_U_nodes(params: ModelParams, controls: StepControls) -> np.ndarray:
    M = params.M
    n = controls.nU
    if controls.U_spacing == "uniform":
        return np.linspace(0.0, params.U0, n + 1)
    if controls.U_spacing != "log":
        raise ValueError(f"unknown U_spacing {controls.U_spacing!r}")
    u_last = 4 * M * math.log(params.U0 / (4 * M))
    if controls.u_first >= u_last:
        raise ValueError("u_first must lie below u(U0)")
    u = np.linspace(controls.u_first, u_last, n)
    return np.concatenate([[0.0], U_from_u(u, M)])


def make_v_base(params: ModelParams, controls: StepControls) -> np.ndarray:
    n = int(math.ceil((controls.v_max - params.v0) / controls.base_dv - 1e-9))
    return params.v0 + controls.base_dv * np.arange(n + 1)


class _Marcher:
    def __init__(self, params: ModelParams, c: StepControls):
        self.c = c
        self.w_stop = params.r_min ** 2
        self.w_floor = c.r_refine_floor ** 2
        self.calls = 0
        self.subcolumns = 0

    def advance(self, prev_v, prev_x, U_prev, U_new, bottom):
        c = self.c
        v, x, status, nsub = K.advance_strip(
            np.ascontiguousarray(prev_v), np.ascontiguousarray(prev_x), U_new - U_prev,
            np.ascontiguousarray(bottom, dtype=float), 0, c.max_U_depth, c.base_dv,
            self.w_stop, c.max_dw, c.eta, c.max_dsigma, c.dv_min, c.eta_U, c.max_dsigma_U,
            self.w_floor, c.tol, c.maxit, 0.0)
        self.calls += 1
        self.subcolumns += nsub
        if status == K.PREV_END and prev_v[-1] < self.v_end - 1e-9:
            # prev stopped near the singularity before v_max
            status = K.REACHED_RMIN
        return v, x, status


def evolve(params: ModelParams, controls: StepControls = StepControls(),
           horizon: Optional[HorizonProfile] = None, ingoing: Optional[IngoingProfile] = None,
           two_term: bool = False) -> GridSheet:
    """Fill [0, U0] x [v0, v_max] up to r = r_min, column by column in U."""
    v_base = make_v_base(params, controls)
    U_nodes = make_U_nodes(params, controls)
    if horizon is None:
        horizon = power_law_profile(params, two_term)
    if ingoing is None:
        ingoing = default_ingoing(params)
    rY0 = float(ingoing.rYphi(np.array([0.0]))[0])
    hp = integrate_horizon_constraint(horizon, params, v_base, substeps=controls.id_substeps,
                                      dUr0=ingoing.dUr0, rYphi0=rY0)
    hx = horizon_column(hp, params)
    slice_ = build_ingoing_data(ingoing, hp, params, U_nodes, substeps=controls.id_substeps)
    mismatch = corner_mismatch(slice_, hx)

    marcher = _Marcher(params, controls)
    marcher.v_end = v_base[-1]
    columns = [Column(0.0, v_base.copy(), hx, "reached_vmax")]
    for j in range(1, len(U_nodes)):
        prev = columns[-1]
        if len(prev.v) < 2:
            break
        bottom = slice_.x[j]
        if bottom[0] < params.r_min ** 2:
            raise DataError("ingoing slice reaches r_min; reduce U0")
        v, x, status = marcher.advance(prev.v, prev.x, prev.U, U_nodes[j], bottom)
        if not np.all(np.isfinite(x)):
            bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
            raise EvolutionError(f"non-finite state at U={U_nodes[j]:.6g}, v={v[bad]:.6g}")
        columns.append(Column(float(U_nodes[j]), v, x, STOP_NAMES[status]))
    sheet = GridSheet(params, controls, v_base, columns, hp)
    sheet.stats = {"corner_mismatch": mismatch, "march_calls": marcher.calls,
                   "subcolumns": marcher.subcolumns, "cells": sheet.n_cells()}
    return sheet


def save_sheet(sheet: GridSheet, path) -> None:
    """Store a sheet (without the horizon profile closures) as a compressed .npz."""
    import json
    lens = np.array([len(c.v) for c in sheet.columns], dtype=np.int64)
    np.savez_compressed(
        path,
        params=json.dumps(sheet.params.to_dict()),
        controls=json.dumps(sheet.controls.to_dict()),
        stats=json.dumps(sheet.stats),
        v_base=sheet.v_base,
        U=np.array([c.U for c in sheet.columns]),
        lens=lens,
        v=np.concatenate([c.v for c in sheet.columns]),
        x=np.concatenate([c.x for c in sheet.columns]),
        stop=np.array([c.stop_reason for c in sheet.columns]),
    )


def load_sheet(path) -> GridSheet:
    import json
    with np.load(path, allow_pickle=False) as z:
        params = ModelParams(**json.loads(str(z["params"])))
        controls = StepControls(**json.loads(str(z["controls"])))
        offs = np.concatenate([[0], np.cumsum(z["lens"])])
        v, x = z["v"], z["x"]
        cols = [Column(float(U), v[offs[i]:offs[i + 1]].copy(), x[offs[i]:offs[i + 1]].copy(), str(s))
                for i, (U, s) in enumerate(zip(z["U"], z["stop"]))]
        sheet = GridSheet(params, controls, z["v_base"].copy(), cols)
        sheet.stats = json.loads(str(z["stats"]))
    return sheet
