"""Index bookkeeping and design matrices shared by densities and samplers.

Every region/method pair carries one coefficient block
``gamma = (alpha, c_1, ..., c_n)``. In anchored mode the ``c`` are the rates of
change ``delta`` and ``beta = A @ gamma``; in additive mode they are the spline
coefficients ``beta`` themselves and ``psi = alpha + B beta``. Either way the
latent logit trajectory is ``psi = design @ gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisConfig, KnotVector, annual_grid, build_basis, place_knots
from .data import LogitData, Method
from .errors import DataError


def anchor_matrix(n_basis: int, k_star: int) -> np.ndarray:
    """Matrix ``A`` with ``beta = A @ (alpha, delta_1, ..., delta_{K-1})``.

    Row ``k`` picks ``alpha`` and adds the deltas between ``k*`` and ``k``
    (subtracting them when ``k < k*``).
    """
    a = np.zeros((n_basis, n_basis))
    a[:, 0] = 1.0
    for k in range(n_basis):
        if k > k_star:
            a[k, 1 + k_star:1 + k] = 1.0
        elif k < k_star:
            a[k, 1 + k:1 + k_star] = -1.0
    return a


def difference_matrix(n: int) -> np.ndarray:
    """First-difference operator with ``e_1 = beta_1`` (AR(1) started at zero)."""
    return np.eye(n) - np.eye(n, k=-1)


@dataclass
class ModelLayout:
    countries: tuple[str, ...]
    regions: tuple[str, ...]
    region_country: np.ndarray
    methods: tuple[Method, ...]
    grid: np.ndarray
    knots: tuple[KnotVector, ...]
    n_basis: np.ndarray
    n_coef: np.ndarray
    additive: bool
    basis: np.ndarray        # (P, T, Kmax) padded basis values
    design: np.ndarray       # (P, T, D) maps gamma to psi
    obs_region: np.ndarray
    obs_method: np.ndarray
    obs_time: np.ndarray
    y: np.ndarray
    se: np.ndarray

    @property
    def P(self):
        return len(self.regions)

    @property
    def C(self):
        return len(self.countries)

    @property
    def M(self):
        return len(self.methods)

    @property
    def T(self):
        return self.grid.size

    @property
    def D(self):
        return self.design.shape[2]

    @property
    def n_obs(self):
        return self.y.size

    @property
    def coef_mask(self) -> np.ndarray:
        """``(P, D-1)`` boolean mask of the valid (unpadded) coefficient slots."""
        return np.arange(self.D - 1)[None, :] < self.n_coef[:, None]

    @property
    def country_sizes(self) -> np.ndarray:
        return np.bincount(self.region_country, minlength=self.C)

    def obs_rows(self) -> np.ndarray:
        """Design row for every observation, ``(N, D)``."""
        return self.design[self.obs_region, self.obs_time]

    def gram(self):
        """Data precision and linear terms per block: ``(P, M, D, D)``, ``(P, M, D)``."""
        rows = self.obs_rows()
        w = 1.0 / self.se ** 2
        g = np.zeros((self.P, self.M, self.D, self.D))
        h = np.zeros((self.P, self.M, self.D))
        np.add.at(g, (self.obs_region, self.obs_method), w[:, None, None] * rows[:, :, None] * rows[:, None, :])
        np.add.at(h, (self.obs_region, self.obs_method), (w * self.y)[:, None] * rows)
        return g, h

    def structure_matrices(self) -> np.ndarray:
        """Prior structure for the coefficient part of each block, ``(P, D-1, D-1)``.

        Identity on valid slots in anchored mode; ``Dif^T Dif`` (random-walk
        precision) in additive mode. Padding slots are zero.
        """
        dc = self.D - 1
        out = np.zeros((self.P, dc, dc))
        for p, n in enumerate(self.n_coef):
            if self.additive:
                dif = difference_matrix(n)
                out[p, :n, :n] = dif.T @ dif
            else:
                out[p, :n, :n] = np.eye(n)
        return out

    def difference_operators(self) -> np.ndarray:
        dc = self.D - 1
        out = np.zeros((self.P, dc, dc))
        for p, n in enumerate(self.n_coef):
            out[p, :n, :n] = difference_matrix(n)
        return out

    def beta(self, alpha, coef) -> np.ndarray:
        """Spline coefficients ``(..., P, M, Kmax)`` from block parameters."""
        coef = np.asarray(coef)
        if self.additive:
            return coef[..., : self.basis.shape[2]] * 1.0
        kmax = self.basis.shape[2]
        out = np.zeros(np.broadcast_shapes(np.shape(alpha) + (kmax,), coef.shape[:-1] + (kmax,)))
        for p in range(self.P):
            k = self.n_basis[p]
            a = anchor_matrix(k, self.knots[p].anchor_basis)
            gamma = np.concatenate([np.asarray(alpha)[..., p, :, None], coef[..., p, :, : k - 1]], axis=-1)
            out[..., p, :, :k] = gamma @ a.T
        return out

    def psi(self, alpha, coef) -> np.ndarray:
        """Latent trajectories ``(..., P, M, T)`` for stacked parameter draws."""
        gamma = np.concatenate([np.asarray(alpha)[..., None], np.asarray(coef)], axis=-1)
        return np.einsum("ptd,...pmd->...pmt", self.design, gamma, optimize=True)


def build_layout(data: LogitData, additive: bool, basis: BasisConfig = BasisConfig()) -> ModelLayout:
    """Assemble region bases, design matrices and observation indices."""
    regions = tuple(sorted(data.region_index, key=lambda r: (data.region_index[r], r)))
    countries = tuple(sorted(set(data.region_index.values())))
    region_country = np.array([countries.index(data.region_index[r]) for r in regions], dtype=int)
    grid = annual_grid(data.time_window)
    knots = tuple(place_knots(data.time_window, data.anchor_year[r], basis.spacing, basis.degree)
                  for r in regions)
    n_basis = np.array([k.n_basis for k in knots], dtype=int)
    n_coef = n_basis.copy() if additive else n_basis - 1
    kmax = int(n_basis.max())
    dc = int(n_coef.max())
    P, T = len(regions), grid.size
    basis_vals = np.zeros((P, T, kmax))
    design = np.zeros((P, T, 1 + dc))
    for p, kv in enumerate(knots):
        b = build_basis(kv, grid).values
        k = b.shape[1]
        basis_vals[p, :, :k] = b
        if additive:
            design[p, :, 0] = 1.0
            design[p, :, 1:1 + k] = b
        else:
            ba = b @ anchor_matrix(k, kv.anchor_basis)
            design[p, :, :k] = ba
    rindex = {r: i for i, r in enumerate(regions)}
    try:
        obs_region = np.array([rindex[r] for r in data.region], dtype=int)
    except KeyError as exc:
        raise DataError(f"observation region {exc.args[0]} missing from region index") from None
    obs_time = np.asarray(data.year, dtype=int) - int(grid[0])
    off = (obs_time < 0) | (obs_time >= T)
    if np.any(off):
        raise DataError(f"observation year {int(np.asarray(data.year)[off][0])} outside grid "
                        f"{int(grid[0])}-{int(grid[-1])}")
    return ModelLayout(
        countries=countries,
        regions=regions,
        region_country=region_country,
        methods=tuple(data.methods),
        grid=grid,
        knots=knots,
        n_basis=n_basis,
        n_coef=n_coef,
        additive=additive,
        basis=basis_vals,
        design=design,
        obs_region=obs_region,
        obs_method=np.asarray(data.method, dtype=int),
        obs_time=obs_time,
        y=np.asarray(data.y, dtype=float),
        se=np.asarray(data.se, dtype=float),
    )
