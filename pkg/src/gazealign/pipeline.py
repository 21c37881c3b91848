"""Gaze label alignment across source domains, plus the ablation harness.

One round of alignment:

1. train extractor and head on all source domains (balanced resampling);
2. freeze the extractor and fit a new head on the anchor domain;
3. predict on every other domain, fit one alignment model per unit and
   relabel those domains;
4. fit a new head on the relabeled non-anchor domains;
5. predict on the anchor domain, fit and relabel it;

and after the last round

6. retrain extractor and head from scratch on all domains with the aligned
   labels.

With ``rounds > 1`` the aligned labels (and their implied targets) replace
the originals before the next round; step 6 runs once at the end.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import seeding
from .alignment import KINDS, fit_alignment, make_units, relabel_domain
from .analysis import fmt
from .errors import NoSamples
from .geometry import angular_error, vector_to_polar
from .regressor import (
    ModelParams,
    TrainConfig,
    mean_error,
    predict,
    resample_balanced,
    train_full,
    train_head,
)
from .simulator import FeatureMap, SyntheticDataset, generate_domain, make_domain_spec

UNIT_KINDS = ("person", "dataset")


@dataclass
class GlaConfig:
    anchor: int = 0
    unit_kind: str = "person"
    function_kind: str = "rt"
    rounds: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 2024
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.unit_kind not in UNIT_KINDS:
            raise ValueError(f"unknown alignment unit {self.unit_kind!r}")
        if self.function_kind not in KINDS:
            raise ValueError(f"unknown alignment function {self.function_kind!r}")
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


@dataclass
class GlaResult:
    domains: list  # datasets whose label columns hold the aligned labels
    params: ModelParams
    reports: dict
    extractor: ModelParams  # step-1 model of the last round

    def aligned_labels(self) -> list:
        return [d.gaze_label for d in self.domains]


def _train_cfg(cfg: GlaConfig, *keys) -> TrainConfig:
    return replace(cfg.train, seed=seeding.child_seed(cfg.seed, seeding.PIPELINE, *keys))


def _pool(domains, labels, indices):
    x = np.concatenate([d.features[i] for d, i in zip(domains, indices)])
    y = np.concatenate([lab[i] for lab, i in zip(labels, indices)])
    return x, y


def split_by_person(dataset: SyntheticDataset, seed: int) -> list:
    """Split one domain into two halves of whole persons."""
    pids = dataset.person_ids()
    if len(pids) < 2:
        raise ValueError("single-domain alignment needs at least two persons")
    perm = seeding.stream(seed, seeding.SPLIT).permutation(pids)
    half = set(perm[: len(pids) // 2].tolist())
    mask = np.isin(dataset.person_id, list(half))
    return [dataset.subset(np.flatnonzero(mask)), dataset.subset(np.flatnonzero(~mask))]


def train_on(domains, labels, cfg: GlaConfig, *keys) -> ModelParams:
    """Balanced-resample ``domains`` and train a full model with stream ``keys``."""
    idx = resample_balanced(domains, seeding.stream(cfg.seed, seeding.RESAMPLE, *keys))
    x, y = _pool(domains, labels, idx)
    return train_full(x, y, _train_cfg(cfg, *keys))


def _align_domains(targets, x_model, labels, tgts, domains, cfg, reports_out, step):
    for i in targets:
        d = domains[i]
        y_hat = predict(x_model, d.features)
        units = make_units(d, cfg.unit_kind)
        fits = fit_alignment(cfg.function_kind, labels[i], y_hat, tgts[i], d.origin, units, cfg.threads)
        labels[i], tgts[i] = relabel_domain(labels[i], tgts[i], d.origin, units, fits)
        reports_out[str(d.id)] = {
            "step": step,
            "pre_deg": float(np.mean([r.pre_deg for _, r in fits.values()])),
            "post_deg": float(np.mean([r.post_deg for _, r in fits.values()])),
            "units": {str(uid): r.to_dict() for uid, (_, r) in sorted(fits.items())},
        }


FINAL_STEP = 6


def run_gla(domains, cfg: GlaConfig) -> GlaResult:
    """Run the full alignment procedure and the final retraining."""
    domains = list(domains)
    if len(domains) == 1:
        domains = split_by_person(domains[0], cfg.seed)
    if not 0 <= cfg.anchor < len(domains):
        raise ValueError(f"anchor index {cfg.anchor} out of range for {len(domains)} domains")
    k = cfg.anchor
    labels = [d.gaze_label.copy() for d in domains]
    tgts = [d.target_label.copy() for d in domains]
    others = [i for i in range(len(domains)) if i != k]
    rounds = []
    extractor = None
    for r in range(cfg.rounds):
        rep = {"round": r + 1}
        # Step 1
        extractor = train_on(domains, labels, cfg, r, 1)
        frozen = (extractor.w1.copy(), extractor.b1.copy())
        rep["step1_train_deg"] = mean_error(
            extractor, np.concatenate([d.features for d in domains]), np.concatenate(labels)
        )
        # Step 2
        head_k = train_head(extractor, domains[k].features, labels[k], _train_cfg(cfg, r, 2))
        rep["step2_anchor_deg"] = mean_error(head_k, domains[k].features, labels[k])
        # Step 3
        fits = {}
        _align_domains(others, head_k, labels, tgts, domains, cfg, fits, 3)
        # Step 4
        x_rest = np.concatenate([domains[i].features for i in others])
        y_rest = np.concatenate([labels[i] for i in others])
        head_rest = train_head(extractor, x_rest, y_rest, _train_cfg(cfg, r, 4))
        rep["step4_rest_deg"] = mean_error(head_rest, x_rest, y_rest)
        # Step 5
        _align_domains([k], head_rest, labels, tgts, domains, cfg, fits, 5)
        rep["alignment"] = fits
        rep["extractor_frozen"] = bool(
            np.array_equal(frozen[0], extractor.w1)
            and np.array_equal(frozen[1], extractor.b1)
            and np.array_equal(head_k.w1, extractor.w1)
            and np.array_equal(head_rest.w1, extractor.w1)
        )
        rep["flags"] = sorted({f for d in fits.values() for u in d["units"].values() for f in u["flags"]})
        rounds.append(rep)
    # Step 6
    params = train_on(domains, labels, cfg, FINAL_STEP)
    aligned = [d.with_labels(lab, t) for d, lab, t in zip(domains, labels, tgts)]
    reports = {
        "rounds": rounds,
        "step6_train_deg": mean_error(
            params, np.concatenate([d.features for d in domains]), np.concatenate(labels)
        ),
        "label_change_deg": {
            str(d.id): float(np.mean(angular_error(d.gaze_label, lab))) for d, lab in zip(domains, labels)
        },
    }
    return GlaResult(aligned, params, reports, extractor)


def run_baseline(domains, cfg: GlaConfig) -> ModelParams:
    """Model trained without alignment, sharing step 6's sampling and seed."""
    domains = list(domains)
    if len(domains) == 1:
        domains = split_by_person(domains[0], cfg.seed)
    return train_on(domains, [d.gaze_label for d in domains], cfg, FINAL_STEP)


def evaluate_cross_domain(params: ModelParams, target: SyntheticDataset, reference: str = "truth") -> float:
    """Mean angular error (deg) of predictions against true gaze or recorded labels."""
    if len(target) == 0:
        raise NoSamples("evaluation dataset is empty")
    if reference == "truth":
        ref = target.gaze_true
    elif reference == "label":
        ref = target.gaze_label
    else:
        raise ValueError(f"unknown reference {reference!r}; expected 'truth' or 'label'")
    return float(np.mean(angular_error(predict(params, target.features), ref)))


def label_gap(a: SyntheticDataset, b: SyntheticDataset, labels_a=None, labels_b=None) -> float:
    """Mean angle between two domains' label conventions.

    Each label is compared to its own true gaze, so the gap is the mean
    angle between the two per-domain deviation vectors in polar space,
    evaluated over ``a``'s samples through a nearest-target match in ``b``.
    """
    la = a.gaze_label if labels_a is None else labels_a
    lb = b.gaze_label if labels_b is None else labels_b
    dev_a = vector_to_polar(la) - vector_to_polar(a.gaze_true)
    dev_b = vector_to_polar(lb) - vector_to_polar(b.gaze_true)
    d2 = ((a.target_screen[:, None, :] - b.target_screen[None, :, :]) ** 2).sum(-1)
    nn = np.argmin(d2, axis=1)
    return float(np.mean(np.linalg.norm(dev_a - dev_b[nn], axis=1)))


# --------------------------------------------------------------------------
# Benchmark and ablations


@dataclass
class BenchmarkSpec:
    """Desk-scale multi-domain benchmark (sources and held-out targets)."""

    n_sources: int = 3
    n_targets: int = 2
    n_persons: int = 20
    samples_per_person: int = 200
    calib_tau: float = 1.0
    axis_std: float = 2.5
    seed: int = 2024
    feature_dim: int = 32
    appearance_dim: int = 8
    style_dim: int = 8
    noise_std: float = 0.05
    gaze_scale: float = 5.0
    appearance_scale: float = 0.03
    style_scale: float = 0.03

    def feature_map(self) -> FeatureMap:
        return FeatureMap.from_seed(
            self.seed, self.feature_dim, self.appearance_dim, self.style_dim, self.noise_std,
            self.gaze_scale, self.appearance_scale, self.style_scale,
        )

    def build(self) -> tuple:
        """``(sources, targets)``; sources have ids ``0..n_sources-1``."""
        fm = self.feature_map()
        domains = []
        for i in range(self.n_sources + self.n_targets):
            spec = make_domain_spec(
                i, self.seed, self.n_persons, self.samples_per_person, self.calib_tau, self.axis_std,
                self.appearance_dim, self.style_dim,
            )
            domains.append(generate_domain(spec, fm, self.seed))
        return domains[: self.n_sources], domains[self.n_sources:]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AblationRow:
    config: str
    errors: list  # one per target domain
    average: float


@dataclass
class AblationTable:
    axis: str
    targets: list
    rows: list = field(default_factory=list)

    def row(self, config: str) -> AblationRow:
        for r in self.rows:
            if r.config == config:
                return r
        raise KeyError(config)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["config"] + [f"target_{t}_deg" for t in self.targets] + ["avg_deg"])
            for r in self.rows:
                w.writerow([r.config] + [fmt(e) for e in r.errors] + [fmt(r.average)])

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "targets": self.targets,
            "rows": [{"config": r.config, "errors_deg": r.errors, "avg_deg": r.average} for r in self.rows],
        }


ABLATION_AXES = ("functions", "units", "anchor", "rounds")


def _row(name, params, targets, reference) -> AblationRow:
    errs = [evaluate_cross_domain(params, t, reference) for t in targets]
    return AblationRow(name, errs, float(np.mean(errs)))


def ablation_configs(axis: str, base: GlaConfig, n_sources: int) -> list:
    if axis == "functions":
        return [(f"gla_{f}", replace(base, function_kind=f)) for f in KINDS]
    if axis == "units":
        return [(f"gla_{u}", replace(base, unit_kind=u)) for u in UNIT_KINDS]
    if axis == "anchor":
        return [(f"anchor_{k}", replace(base, anchor=k)) for k in range(n_sources)]
    if axis == "rounds":
        return [(f"rounds_{r}", replace(base, rounds=r)) for r in (1, 2, 3)]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def ablation_harness(bench: BenchmarkSpec, which: str, base: Optional[GlaConfig] = None,
                     reference: str = "truth", data=None) -> AblationTable:
    """Baseline row plus one GLA row per setting of the requested axis."""
    base = base or GlaConfig(seed=bench.seed)
    sources, targets = data if data is not None else bench.build()
    if len(sources) < 3 or len(targets) < 2:
        raise ValueError("ablations need >= 3 source and >= 2 target domains")
    table = AblationTable(which, [t.id for t in targets])
    configs = ablation_configs(which, base, len(sources))
    table.rows.append(_row("baseline", run_baseline(sources, base), targets, reference))
    for name, cfg in configs:
        table.rows.append(_row(name, run_gla(sources, cfg).params, targets, reference))
    return table


def scatter_rows(params: ModelParams, dataset: SyntheticDataset, person_id: int, reference: str = "truth") -> list:
    """``(theta_pred, theta_ref, phi_pred, phi_ref, person_id)`` for one person."""
    sub = dataset.subset(np.flatnonzero(dataset.person_id == person_id))
    if len(sub) == 0:
        raise NoSamples(f"person {person_id} has no samples")
    pred = vector_to_polar(predict(params, sub.features))
    ref = vector_to_polar(sub.gaze_true if reference == "truth" else sub.gaze_label)
    return [(p[0], r[0], p[1], r[1], int(person_id)) for p, r in zip(pred, ref)]


def write_scatter_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_pred", "theta_ref", "phi_pred", "phi_ref", "person_id"])
        for tp, tr, pp, pr, pid in rows:
            w.writerow([fmt(tp), fmt(tr), fmt(pp), fmt(pr), pid])


def write_report(report: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
