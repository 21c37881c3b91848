"""Label alignment functions mapping original labels onto predictions.

Five families are supported:

``offset``      polar ``y~ = y + B``
``linear``      polar ``y~ = K * y + B`` (per-component gain)
``affine``      polar ``y~ = A @ y + T``
``homography``  ``[t~, p~, 1] ~ H @ [t, p, 1]`` with ``h33 = 1``
``rt``          ``y~ = unit(R @ t_c + T - o)``, a rigid re-placement of the
                gaze target

Polar families work in ``(theta, phi)`` degrees.  Offset, linear and affine
are solved in closed form by least squares on polar residuals; homography
and rt are solved with Levenberg-Marquardt on the chordal residual
``y~ - y_hat``, whose squared norm is ``4 sin^2(e / 2)`` for angular error
``e``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientSamples, ProjectiveDegenerate, UncoveredSample
from .geometry import (
    angular_error,
    euler_to_rotation,
    gaze_direction,
    polar_to_vector,
    vector_to_polar,
    wrap_degrees,
)

KINDS = ("offset", "linear", "affine", "homography", "rt")
MIN_SAMPLES = {"offset": 1, "linear": 10, "affine": 10, "homography": 30, "rt": 30}
MAX_CONDITION = 1e10
MIN_HOMOGENEOUS = 1e-9


# --------------------------------------------------------------------------
# Models


@dataclass
class OffsetModel:
    B: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kind = "offset"

    def apply(self, y, t_c=None, o=None):
        return polar_to_vector(vector_to_polar(y) + self.B)

    def to_dict(self):
        return {"kind": self.kind, "B": np.asarray(self.B).tolist()}


@dataclass
class LinearModel:
    K: np.ndarray = field(default_factory=lambda: np.ones(2))
    B: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kind = "linear"

    def apply(self, y, t_c=None, o=None):
        return polar_to_vector(self.K * vector_to_polar(y) + self.B)

    def to_dict(self):
        return {"kind": self.kind, "K": np.asarray(self.K).tolist(), "B": np.asarray(self.B).tolist()}


@dataclass
class AffineModel:
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    T: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kind = "affine"

    def apply(self, y, t_c=None, o=None):
        return polar_to_vector(vector_to_polar(y) @ np.asarray(self.A).T + self.T)

    def to_dict(self):
        return {"kind": self.kind, "A": np.asarray(self.A).tolist(), "T": np.asarray(self.T).tolist()}


@dataclass
class HomographyModel:
    H: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind = "homography"

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        if self.H[2, 2] == 0:
            raise ProjectiveDegenerate("h33 must be non-zero")
        self.H = self.H / self.H[2, 2]

    def apply(self, y, t_c=None, o=None):
        p = vector_to_polar(y)
        hom = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1) @ self.H.T
        w = hom[..., 2:3]
        if np.any(w < MIN_HOMOGENEOUS):
            raise ProjectiveDegenerate("homogeneous coordinate below 1e-9")
        return polar_to_vector(hom[..., :2] / w)

    def to_dict(self):
        return {"kind": self.kind, "H": self.H.tolist()}


@dataclass
class RigidModel:
    """Rigid re-placement of the gaze target: Euler angles (deg) and offset (cm)."""

    angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kind = "rt"

    def __post_init__(self):
        self.angles = wrap_degrees(np.asarray(self.angles, dtype=float))
        self.T = np.asarray(self.T, dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(*self.angles)

    def transform_targets(self, t_c):
        return np.asarray(t_c, dtype=float) @ self.rotation.T + self.T

    def apply(self, y, t_c=None, o=None):
        if t_c is None or o is None:
            raise ValueError("rt alignment needs gaze targets and origins")
        return gaze_direction(o, self.transform_targets(t_c))

    def to_dict(self):
        return {"kind": self.kind, "angles": self.angles.tolist(), "T": self.T.tolist()}


MODEL_TYPES = {
    "offset": OffsetModel,
    "linear": LinearModel,
    "affine": AffineModel,
    "homography": HomographyModel,
    "rt": RigidModel,
}


def identity_model(kind: str):
    try:
        return MODEL_TYPES[kind]()
    except KeyError:
        raise ValueError(f"unknown alignment function {kind!r}; expected one of {KINDS}") from None


def model_from_dict(d: dict):
    kind = d["kind"]
    args = {k: np.array(v, dtype=float) for k, v in d.items() if k != "kind"}
    return MODEL_TYPES[kind](**args)


def apply_alignment(model, y, t_c=None, o=None) -> np.ndarray:
    return model.apply(y, t_c, o)


def aligned_targets(model, y_aligned, t_c, o) -> np.ndarray:
    """Targets consistent with the aligned labels, for chaining rounds.

    Rigid models move the targets themselves; polar models keep each target's
    distance from the origin and point it along the aligned label.
    """
    if isinstance(model, RigidModel):
        return model.transform_targets(t_c)
    t_c = np.asarray(t_c, dtype=float)
    o = np.asarray(o, dtype=float)
    dist = np.linalg.norm(t_c - o, axis=-1, keepdims=True)
    return o + dist * np.asarray(y_aligned)


# --------------------------------------------------------------------------
# Fitting


@dataclass
class FitReport:
    pre_deg: float
    post_deg: float
    iterations: int = 0
    converged: bool = True
    n_samples: int = 0
    flags: list = field(default_factory=list)
    residual: float = float("nan")  # objective value the fitter minimized

    def to_dict(self):
        return {
            "pre_deg": self.pre_deg,
            "post_deg": self.post_deg,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_samples": self.n_samples,
            "flags": list(self.flags),
            "residual": self.residual,
        }


def _polar_targets(y, y_hat):
    """Polar labels and predictions, predictions unwrapped next to labels."""
    p = vector_to_polar(y)
    q = p + wrap_degrees(vector_to_polar(y_hat) - p)
    return p, q


def polar_residual(model, y, y_hat) -> float:
    """Sum of squared polar residuals (deg^2) of a polar-family model."""
    p, q = _polar_targets(y, y_hat)
    if isinstance(model, OffsetModel):
        pred = p + model.B
    elif isinstance(model, LinearModel):
        pred = model.K * p + model.B
    elif isinstance(model, AffineModel):
        pred = p @ np.asarray(model.A).T + model.T
    else:
        raise TypeError("polar residual is defined for offset/linear/affine only")
    return float(np.sum((q - pred) ** 2))


def _fit_offset(p, q):
    return OffsetModel(np.mean(q - p, axis=0))


def _fit_linear(p, q):
    k, b = np.ones(2), np.zeros(2)
    for c in range(2):
        design = np.column_stack([p[:, c], np.ones(len(p))])
        if np.linalg.cond(design) > MAX_CONDITION:
            return None
        (k[c], b[c]), *_ = np.linalg.lstsq(design, q[:, c], rcond=None)
    return LinearModel(k, b)


def _fit_affine(p, q):
    design = np.column_stack([p, np.ones(len(p))])
    if np.linalg.cond(design) > MAX_CONDITION:
        return None
    coef, *_ = np.linalg.lstsq(design, q, rcond=None)
    return AffineModel(coef[:2].T, coef[2])


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    x0,
    damping: float = 1e-3,
    max_iter: int = 200,
    jac_step: float = 1e-6,
    step_tol: float = 1e-9,
    rel_tol: float = 1e-12,
) -> LMResult:
    """Minimize ``sum(residual_fn(x) ** 2)`` with Marquardt-scaled damping.

    The Jacobian is taken by central differences.  Only steps that lower the
    cost are accepted; on rejection the damping grows tenfold, on acceptance
    it shrinks tenfold.  ``residual_fn`` may return ``None`` for infeasible
    parameters, which counts as a rejected step.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    cost = float(r @ r)
    lam = damping
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jac = np.empty((len(r), len(x)))
        for j in range(len(x)):
            dx = np.zeros_like(x)
            dx[j] = jac_step
            rp, rm = residual_fn(x + dx), residual_fn(x - dx)
            if rp is not None and rm is not None:
                jac[:, j] = (rp - rm) / (2 * jac_step)
            elif rp is not None:
                jac[:, j] = (rp - r) / jac_step
            elif rm is not None:
                jac[:, j] = (r - rm) / jac_step
            else:
                jac[:, j] = 0.0
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            r_new = residual_fn(x + step)
            new_cost = np.inf if r_new is None else float(r_new @ r_new)
            if new_cost < cost:
                accepted = True
                break
            lam *= 10
            if np.linalg.norm(step) < step_tol:
                break
        if not accepted:
            converged = True  # no descent direction left at this damping
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        x = x + step
        r, cost = r_new, new_cost
        lam = max(lam / 10, 1e-12)
        if np.linalg.norm(step) < step_tol or rel < rel_tol or cost == 0.0:
            converged = True
            break
    return LMResult(x, cost, it, converged)


def _fit_rigid(y, y_hat, t_c, o):
    def residuals(x):
        model = RigidModel(x[:3], x[3:])
        d = model.transform_targets(t_c) - o
        n = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(n < 1e-6):
            return None
        return (d / n - y_hat).ravel()

    res = levenberg_marquardt(residuals, np.zeros(6))
    return RigidModel(res.x[:3], res.x[3:]), res


def _fit_homography(y, y_hat):
    p = vector_to_polar(y)
    hp = np.column_stack([p, np.ones(len(p))])

    def residuals(x):
        H = np.append(x, 1.0).reshape(3, 3)
        hom = hp @ H.T
        w = hom[:, 2:3]
        if np.any(w < MIN_HOMOGENEOUS):
            return None
        return (polar_to_vector(hom[:, :2] / w) - y_hat).ravel()

    res = levenberg_marquardt(residuals, np.eye(3).ravel()[:8])
    return HomographyModel(np.append(res.x, 1.0).reshape(3, 3)), res


def fit_unit(kind: str, y, y_hat, t_c=None, o=None) -> tuple:
    """Fit one alignment unit; returns ``(model, FitReport)``.

    Units smaller than :data:`MIN_SAMPLES` for ``kind`` and rank-deficient
    polar designs fall back to an offset model, and a fit that would raise
    the mean angular error is replaced by the identity; each case is
    recorded in ``FitReport.flags``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown alignment function {kind!r}; expected one of {KINDS}")
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    n = len(y)
    if n == 0:
        raise InsufficientSamples("alignment unit has no samples")
    flags = []
    pre = float(np.mean(angular_error(y, y_hat)))
    iterations, converged = 0, True

    fit_kind = kind
    if n < MIN_SAMPLES[kind]:
        flags.append("insufficient_samples")
        fit_kind = "offset"

    model = None
    if fit_kind == "rt":
        model, res = _fit_rigid(y, y_hat, np.asarray(t_c, dtype=float), np.asarray(o, dtype=float))
        iterations, converged = res.iterations, res.converged
    elif fit_kind == "homography":
        model, res = _fit_homography(y, y_hat)
        iterations, converged = res.iterations, res.converged
    else:
        p, q = _polar_targets(y, y_hat)
        if fit_kind == "linear":
            model = _fit_linear(p, q)
        elif fit_kind == "affine":
            model = _fit_affine(p, q)
        if model is None:
            if fit_kind != "offset":
                flags.append("rank_deficient")
            model = _fit_offset(p, q)
    if not converged:
        flags.append("no_convergence")

    aligned = model.apply(y, t_c, o)
    post = float(np.mean(angular_error(aligned, y_hat)))
    if post > pre:
        # Never make a unit worse than leaving its labels alone.
        flags.append("identity_fallback")
        model = _identity_like(model)
        aligned = model.apply(y, t_c, o)
        post = float(np.mean(angular_error(aligned, y_hat)))
    if isinstance(model, (OffsetModel, LinearModel, AffineModel)):
        residual = polar_residual(model, y, y_hat)
    else:
        residual = float(np.sum((aligned - y_hat) ** 2))
    return model, FitReport(pre, post, iterations, converged, n, flags, residual)


def _identity_like(model):
    return type(model)()


# --------------------------------------------------------------------------
# Units and relabeling


@dataclass
class AlignmentUnit:
    kind: str  # "person" or "dataset"
    unit_id: int
    indices: np.ndarray


def make_units(dataset, kind: str) -> list:
    """Partition a dataset's samples into alignment units."""
    if kind == "dataset":
        return [AlignmentUnit("dataset", int(dataset.id), np.arange(len(dataset)))]
    if kind == "person":
        return [
            AlignmentUnit("person", int(pid), np.flatnonzero(dataset.person_id == pid))
            for pid in np.unique(dataset.person_id)
        ]
    raise ValueError(f"unknown alignment unit {kind!r}; expected 'person' or 'dataset'")


def fit_alignment(kind: str, y, y_hat, t_c, o, units, threads: int = 1) -> dict:
    """Fit one model per unit; returns ``{unit_id: (model, FitReport)}``.

    Units are independent, so ``threads > 1`` fits them concurrently without
    changing any result.
    """
    y, y_hat = np.asarray(y), np.asarray(y_hat)
    t_c = None if t_c is None else np.asarray(t_c)
    o = None if o is None else np.asarray(o)

    def one(unit):
        idx = unit.indices
        return unit.unit_id, fit_unit(
            kind, y[idx], y_hat[idx], None if t_c is None else t_c[idx], None if o is None else o[idx]
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(one, units))
    else:
        pairs = [one(u) for u in units]
    return dict(pairs)


def relabel_domain(y, t_c, o, units, models: dict) -> tuple:
    """Aligned labels and targets for every sample, leaving inputs untouched.

    Raises:
        UncoveredSample: if a sample is in no unit or its unit has no model.
    """
    y = np.asarray(y, dtype=float)
    covered = np.zeros(len(y), dtype=bool)
    out_y = np.empty_like(y)
    out_t = np.empty_like(np.asarray(t_c, dtype=float))
    for unit in units:
        if unit.unit_id not in models:
            raise UncoveredSample(f"no alignment model for unit {unit.unit_id}")
        model = models[unit.unit_id]
        if isinstance(model, tuple):
            model = model[0]
        idx = unit.indices
        out_y[idx] = model.apply(y[idx], t_c[idx], o[idx])
        out_t[idx] = aligned_targets(model, out_y[idx], t_c[idx], o[idx])
        covered[idx] = True
    if not covered.all():
        raise UncoveredSample(f"{int((~covered).sum())} samples are not covered by any unit")
    return out_y, out_t
