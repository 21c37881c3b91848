"""Synthetic multi-domain gaze data with label deviations.

Each domain is one acquisition system: a screen/camera rig whose extrinsics
were calibrated with some error, so every label it records is computed
through the wrong transform.  Each person additionally has a fixed offset
between the observable (optical) axis and the line of sight, applied as a
rotation of the recorded gaze vector.  Feature vectors stand in for face
images and depend only on the true gaze, the person's appearance and the
domain's style, never on the label deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import seeding
from .geometry import (
    EulerRot,
    Extrinsics,
    euler_to_rotation,
    gaze_direction,
    screen_to_camera,
    vector_to_polar,
)

CALIB_FIELDS = ("pitch", "yaw", "roll", "x", "y", "z")
DEFAULT_SCREEN = (-25.0, 25.0, -15.0, 15.0)
DEFAULT_ORIGIN_MEAN = (0.0, 0.0, 60.0)
DEFAULT_ORIGIN_STD = (2.0, 2.0, 2.0)


@dataclass(frozen=True)
class CalibrationError:
    """Deviation of a calibrated rig: angles in degrees, offsets in cm."""

    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def from_array(cls, values) -> "CalibrationError":
        return cls(*(float(v) for v in values))

    @classmethod
    def sample(cls, rng: np.random.Generator, tau: float, mu: float = 0.0) -> "CalibrationError":
        return cls.from_array(mu + tau * rng.standard_normal(6))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in CALIB_FIELDS], dtype=float)

    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.pitch, self.yaw, self.roll)

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def perturbed_extrinsics(true: Extrinsics, err: CalibrationError) -> Extrinsics:
    """Extrinsics a rig with calibration error ``err`` believes it has.

    The error rotation left-multiplies the true rotation and the error offset
    adds to the true translation.
    """
    return Extrinsics(err.rotation() @ true.rotation, true.translation + err.translation())


@dataclass
class Person:
    id: int
    axis_offset: EulerRot
    appearance: np.ndarray

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "axis_offset": self.axis_offset.as_array().tolist(),
            "appearance": np.asarray(self.appearance).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Person":
        return cls(int(d["id"]), EulerRot(*d["axis_offset"]), np.array(d["appearance"], dtype=float))


def sample_person(rng: np.random.Generator, axis_std: float, appearance_dim: int, person_id: int = 0) -> Person:
    """Draw a person with Gaussian axis offsets and a standard-normal appearance."""
    if axis_std < 0:
        raise ValueError("axis_std must be non-negative")
    offset = axis_std * rng.standard_normal(3)
    appearance = rng.standard_normal(appearance_dim)
    return Person(person_id, EulerRot(*offset.tolist()), appearance)


@dataclass
class DomainSpec:
    id: int
    true_extrinsics: Extrinsics
    calib_error: CalibrationError
    persons: list
    samples_per_person: int
    style: np.ndarray
    screen: tuple = DEFAULT_SCREEN
    origin_mean: tuple = DEFAULT_ORIGIN_MEAN
    origin_std: tuple = DEFAULT_ORIGIN_STD

    def __post_init__(self):
        if self.samples_per_person < 1:
            raise ValueError("samples_per_person must be >= 1")
        u0, u1, v0, v1 = self.screen
        if not (u1 > u0 and v1 > v0):
            raise ValueError(f"degenerate screen rectangle {self.screen}")
        self.style = np.asarray(self.style, dtype=float)

    @property
    def recorded_extrinsics(self) -> Extrinsics:
        return perturbed_extrinsics(self.true_extrinsics, self.calib_error)

    def person(self, person_id: int) -> Person:
        for p in self.persons:
            if p.id == person_id:
                return p
        raise KeyError(person_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "true_extrinsics": self.true_extrinsics.to_dict(),
            "calib_error": dict(zip(CALIB_FIELDS, self.calib_error.as_array().tolist())),
            "persons": [p.to_dict() for p in self.persons],
            "samples_per_person": self.samples_per_person,
            "style": self.style.tolist(),
            "screen": list(self.screen),
            "origin_mean": list(self.origin_mean),
            "origin_std": list(self.origin_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(
            id=int(d["id"]),
            true_extrinsics=Extrinsics.from_dict(d["true_extrinsics"]),
            calib_error=CalibrationError(**d["calib_error"]),
            persons=[Person.from_dict(p) for p in d["persons"]],
            samples_per_person=int(d["samples_per_person"]),
            style=np.array(d["style"], dtype=float),
            screen=tuple(d["screen"]),
            origin_mean=tuple(d["origin_mean"]),
            origin_std=tuple(d["origin_std"]),
        )


def make_domain_spec(
    domain_id: int,
    seed: int,
    n_persons: int = 20,
    samples_per_person: int = 200,
    calib_tau: float = 1.0,
    axis_std: float = 2.5,
    appearance_dim: int = 8,
    style_dim: int = 8,
    calib_error: Optional[CalibrationError] = None,
) -> DomainSpec:
    """Draw a domain: calibration error, persons and style from ``seed``.

    Person ids are offset by ``1000 * domain_id`` so they stay unique when
    domains are pooled.
    """
    rng = seeding.stream(seed, seeding.DOMAIN_SPEC, domain_id)
    drawn = CalibrationError.sample(rng, calib_tau)
    style = rng.standard_normal(style_dim)
    persons = [
        sample_person(seeding.stream(seed, seeding.DOMAIN_SPEC, domain_id, j + 1), axis_std, appearance_dim,
                      person_id=1000 * domain_id + j)
        for j in range(n_persons)
    ]
    return DomainSpec(
        id=domain_id,
        true_extrinsics=Extrinsics.identity(),
        calib_error=drawn if calib_error is None else calib_error,
        persons=persons,
        samples_per_person=samples_per_person,
        style=style,
    )


class LabelRecord(NamedTuple):
    target_cam: np.ndarray
    gaze_true: np.ndarray
    gaze_label: np.ndarray
    # Point whose direction from the origin is exactly the recorded label.
    target_label: np.ndarray


def record_label(target_screen, spec: DomainSpec, person: Person, origin) -> LabelRecord:
    """Simulate what the rig records when ``person`` looks at ``target_screen``.

    ``target_screen`` may be one ``(u, v)`` pair or an ``(N, 2)`` array; the
    origin may be one point or one per target.
    """
    uv = np.asarray(target_screen, dtype=float)
    u0, u1, v0, v1 = spec.screen
    if np.any((uv[..., 0] < u0) | (uv[..., 0] > u1) | (uv[..., 1] < v0) | (uv[..., 1] > v1)):
        raise ValueError("gaze target outside the screen rectangle")
    origin = np.asarray(origin, dtype=float)
    true = spec.true_extrinsics
    target_cam = screen_to_camera(uv, true.rotation, true.translation)
    gaze_true = gaze_direction(origin, target_cam)

    rec = spec.recorded_extrinsics
    target_rec = screen_to_camera(uv, rec.rotation, rec.translation)
    # Axis offset rotates the recorded ray about the eye.
    r_person = person.axis_offset.matrix()
    target_label = origin + (target_rec - origin) @ r_person.T
    gaze_label = gaze_direction(origin, target_label)
    return LabelRecord(target_cam, gaze_true, gaze_label, target_label)


@dataclass
class FeatureMap:
    """Fixed random linear maps from gaze, appearance and style to features."""

    gaze: np.ndarray
    appearance: np.ndarray
    style: np.ndarray
    noise_std: float = 0.05

    @property
    def dim(self) -> int:
        return self.gaze.shape[0]

    @classmethod
    def from_seed(
        cls,
        seed: int,
        feature_dim: int = 32,
        appearance_dim: int = 8,
        style_dim: int = 8,
        noise_std: float = 0.05,
        gaze_scale: float = 1.0,
        appearance_scale: float = 1.0,
        style_scale: float = 1.0,
    ) -> "FeatureMap":
        """Draw the maps with entries ``N(0, scale**2 / n_columns)``."""
        rng = seeding.stream(seed, seeding.FEATURE_MAP)
        m1 = gaze_scale * rng.standard_normal((feature_dim, 5)) / np.sqrt(5)
        m2 = appearance_scale * rng.standard_normal((feature_dim, appearance_dim)) / np.sqrt(appearance_dim)
        m3 = style_scale * rng.standard_normal((feature_dim, style_dim)) / np.sqrt(style_dim)
        return cls(m1, m2, m3, noise_std)

    def to_dict(self) -> dict:
        return {
            "gaze": self.gaze.tolist(),
            "appearance": self.appearance.tolist(),
            "style": self.style.tolist(),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        return cls(np.array(d["gaze"]), np.array(d["appearance"]), np.array(d["style"]), float(d["noise_std"]))


def gaze_basis(gaze) -> np.ndarray:
    """Monomials ``(t, p, t^2, p^2, t*p)`` of polar gaze in units of 100 degrees."""
    tp = vector_to_polar(gaze) / 100.0
    t, p = tp[..., 0], tp[..., 1]
    return np.stack([t, p, t * t, p * p, t * p], axis=-1)


def synthesize_features(gaze_true, appearance, style, feature_map: FeatureMap, rng=None) -> np.ndarray:
    """Features for one or many samples; ``rng=None`` means noiseless."""
    basis = gaze_basis(gaze_true)
    feats = basis @ feature_map.gaze.T + feature_map.appearance @ np.asarray(appearance) + feature_map.style @ np.asarray(style)
    if rng is not None and feature_map.noise_std > 0:
        feats = feats + feature_map.noise_std * rng.standard_normal(feats.shape)
    return feats


@dataclass
class GazeSample:
    domain_id: int
    person_id: int
    target_screen: np.ndarray
    target_cam: np.ndarray
    origin: np.ndarray
    gaze_true: np.ndarray
    gaze_label: np.ndarray
    target_label: np.ndarray
    features: np.ndarray


_ARRAY_KEYS = ("target_cam", "origin", "gaze_true", "gaze_label", "target_label", "features")


@dataclass
class SyntheticDataset:
    """Column-oriented store of :class:`GazeSample` records."""

    spec: Optional[DomainSpec]
    domain_id: np.ndarray
    person_id: np.ndarray
    target_screen: np.ndarray
    target_cam: np.ndarray
    origin: np.ndarray
    gaze_true: np.ndarray
    gaze_label: np.ndarray
    target_label: np.ndarray
    features: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.person_id)

    def __getitem__(self, i: int) -> GazeSample:
        return GazeSample(
            int(self.domain_id[i]), int(self.person_id[i]), self.target_screen[i], self.target_cam[i],
            self.origin[i], self.gaze_true[i], self.gaze_label[i], self.target_label[i], self.features[i],
        )

    @property
    def samples(self) -> list:
        return [self[i] for i in range(len(self))]

    @property
    def id(self) -> int:
        if self.spec is not None:
            return self.spec.id
        return int(self.domain_id[0]) if len(self) else -1

    def person_ids(self) -> np.ndarray:
        return np.unique(self.person_id)

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx)
        return SyntheticDataset(
            self.spec,
            self.domain_id[idx], self.person_id[idx], self.target_screen[idx],
            *(getattr(self, k)[idx] for k in _ARRAY_KEYS),
            extra={k: v[idx] for k, v in self.extra.items()},
        )

    def with_labels(self, labels, targets) -> "SyntheticDataset":
        """Copy with the label columns replaced (e.g. by aligned labels)."""
        out = self.subset(np.arange(len(self)))
        out.gaze_label = np.asarray(labels, dtype=float).copy()
        out.target_label = np.asarray(targets, dtype=float).copy()
        return out

    def to_jsonl(self, path, aligned=None) -> None:
        """Write one JSON object per sample; ``aligned`` adds ``gaze_aligned``."""
        with open(path, "w", newline="\n") as fh:
            for i in range(len(self)):
                rec = {
                    "domain_id": int(self.domain_id[i]),
                    "person_id": int(self.person_id[i]),
                    "u": float(self.target_screen[i, 0]),
                    "v": float(self.target_screen[i, 1]),
                }
                for k in _ARRAY_KEYS:
                    rec[k] = getattr(self, k)[i].tolist()
                if aligned is not None:
                    rec["gaze_aligned"] = np.asarray(aligned[i]).tolist()
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path, spec: Optional[DomainSpec] = None) -> "SyntheticDataset":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if spec is None:
            spec_path = Path(path).with_suffix(".spec.json")
            if spec_path.exists():
                spec = DomainSpec.from_dict(json.loads(spec_path.read_text()))
        cols = {k: np.array([r[k] for r in rows], dtype=float).reshape(len(rows), -1) for k in _ARRAY_KEYS}
        extra = {}
        if rows and "gaze_aligned" in rows[0]:
            extra["gaze_aligned"] = np.array([r["gaze_aligned"] for r in rows], dtype=float)
        return cls(
            spec,
            np.array([r["domain_id"] for r in rows], dtype=int),
            np.array([r["person_id"] for r in rows], dtype=int),
            np.array([[r["u"], r["v"]] for r in rows], dtype=float).reshape(-1, 2),
            **cols,
            extra=extra,
        )


def generate_domain(spec: DomainSpec, feature_map: FeatureMap, seed: int) -> SyntheticDataset:
    """Sample every person's targets, origin and features.

    Each person draws from its own stream ``(seed, DOMAIN_SAMPLES, domain,
    person)``; the origin is fixed per person, targets are uniform on the
    screen rectangle.
    """
    u0, u1, v0, v1 = spec.screen
    n = spec.samples_per_person
    parts = []
    for person in spec.persons:
        rng = seeding.stream(seed, seeding.DOMAIN_SAMPLES, spec.id, person.id)
        origin = np.asarray(spec.origin_mean, dtype=float) + np.asarray(spec.origin_std, dtype=float) * rng.standard_normal(3)
        uv = np.column_stack([rng.uniform(u0, u1, n), rng.uniform(v0, v1, n)])
        origins = np.broadcast_to(origin, (n, 3)).copy()
        rec = record_label(uv, spec, person, origins)
        feats = synthesize_features(rec.gaze_true, person.appearance, spec.style, feature_map, rng)
        parts.append((person.id, uv, origins, rec, feats))

    return SyntheticDataset(
        spec=spec,
        domain_id=np.full(n * len(parts), spec.id, dtype=int),
        person_id=np.concatenate([np.full(n, pid, dtype=int) for pid, *_ in parts]),
        target_screen=np.concatenate([p[1] for p in parts]),
        target_cam=np.concatenate([p[3].target_cam for p in parts]),
        origin=np.concatenate([p[2] for p in parts]),
        gaze_true=np.concatenate([p[3].gaze_true for p in parts]),
        gaze_label=np.concatenate([p[3].gaze_label for p in parts]),
        target_label=np.concatenate([p[3].target_label for p in parts]),
        features=np.concatenate([p[4] for p in parts]),
    )


def save_domain(dataset: SyntheticDataset, directory, stem: Optional[str] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or f"domain_{dataset.id}"
    path = directory / f"{stem}.jsonl"
    dataset.to_jsonl(path)
    if dataset.spec is not None:
        spec_path = directory / f"{stem}.spec.json"
        spec_path.write_text(json.dumps(dataset.spec.to_dict(), indent=1) + "\n")
    return path
