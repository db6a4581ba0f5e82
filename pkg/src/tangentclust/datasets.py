"""Synthetic two-cluster datasets on G(6,2), 3x3 SPD matrices and S^2.

Datasets I/II live on the Grassmannian (parallel / intersecting families),
III/IV on SPD matrices (intersecting / separated) and V/VI on the sphere
(parallel / intersecting arcs). Parameters are drawn on an equidistant grid
``a + k (b - a) / n`` for ``k = 0..n-1``, which contains the interval
midpoint whenever ``n`` is even; the intersecting families meet there.

Noise is ``noise_sigma * eps`` with i.i.d. standard normal ``eps``; for SPD
data ``eps`` is a symmetric matrix with independent entries on and above the
diagonal.

File format
-----------
A JSON document::

    {"format": "tangentclust-dataset", "version": 1,
     "manifold": {"tag": "sphere", "params": [2]},
     "shape": [3], "n_points": 260,
     "spec": {"id": "VI", "points_per_cluster": 130, "noise_sigma": 0.025, "seed": 7}
             | "external",
     "labels": [1, 1, ..., 2] | null,
     "points": [[x0, x1, x2], ...]}

Each entry of ``points`` is one point flattened in row-major order. Floats
are written with ``repr`` so a save/load roundtrip is bit exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import InvalidSpec, ParseError, VersionMismatch
from .manifolds import Grassmannian, Sphere, Spd, _sign_fixed_qr, manifold_from_tag

FORMAT_NAME = "tangentclust-dataset"
FORMAT_VERSION = 1
DATASET_IDS = ("I", "II", "III", "IV", "V", "VI")
SPD_EIG_FLOOR = 1e-3


@dataclass(frozen=True)
class DatasetSpec:
    id: str
    points_per_cluster: int = 130
    noise_sigma: float = 0.025
    seed: int = 0

    def validate(self):
        if self.id not in DATASET_IDS:
            raise InvalidSpec(f"unknown dataset id {self.id!r}; expected one of {DATASET_IDS}")
        if int(self.points_per_cluster) < 2:
            raise InvalidSpec("points_per_cluster must be >= 2")
        if not float(self.noise_sigma) >= 0:
            raise InvalidSpec("noise_sigma must be nonnegative")


@dataclass
class Dataset:
    manifold: object
    points: np.ndarray
    labels: np.ndarray = None
    spec: DatasetSpec = None

    def __len__(self):
        return len(self.points)

    @property
    def n_clusters(self):
        return None if self.labels is None else len(np.unique(self.labels))


def _grid(a, b, n):
    return a + (b - a) * np.arange(n) / n


def _sym_noise(rng, p):
    e = rng.standard_normal((p, p))
    return np.triu(e) + np.triu(e, 1).T


def _spd_repair(a):
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w[0] >= SPD_EIG_FLOOR:
        return a
    w = np.maximum(w, SPD_EIG_FLOOR)
    a = (v * w) @ v.T
    return 0.5 * (a + a.T)


def _grassmann(spec, rng, second):
    n, sig = spec.points_per_cluster, spec.noise_sigma
    t = _grid(-np.pi / 3, np.pi / 3, n)
    pts = []
    for fam in (0, 1):
        for a in t:
            c, s = np.cos(a), np.sin(a)
            if fam == 0:
                v1 = [c, 0, s, 0, 0, 0]
                v2 = [0, c, 0, s, 0, 0]
            else:
                v1, v2 = second(c, s)
            v1 = np.array(v1, float) + sig * rng.standard_normal(6)
            v2 = np.array(v2, float) + sig * rng.standard_normal(6)
            pts.append(_sign_fixed_qr(np.column_stack([v1, v2])))
    return Grassmannian(6, 2), np.array(pts)


def _dataset_1(spec, rng):
    return _grassmann(spec, rng, lambda c, s: ([c, 0, s, 0, 0.5, 0], [0, c, 0, s, 0.5, 0]))


def _dataset_2(spec, rng):
    return _grassmann(spec, rng, lambda c, s: ([c, 0, 0, 0, s, 0], [0, c, 0, 0, 0, s]))


def _dataset_3(spec, rng):
    n, sig = spec.points_per_cluster, spec.noise_sigma
    t = _grid(0.0, np.pi, n)
    pts = []
    for a in t:
        cp, sp = np.cos(a + np.pi / 4), np.sin(a + np.pi / 4)
        m = 4 * np.array([[1, cp, sp], [cp, 1, 0], [sp, 0, 1]])
        pts.append(_spd_repair(m + sig * _sym_noise(rng, 3)))
    for a in t:
        cm, sm, sp = np.cos(a - np.pi / 4), np.sin(a - np.pi / 4), np.sin(a + np.pi / 4)
        m = 4 * np.array([[1, 0, cm], [0, 1, sm], [cm, sp, 1]])
        pts.append(_spd_repair(m + sig * _sym_noise(rng, 3)))
    return Spd(3), np.array(pts)


def _dataset_4(spec, rng):
    n, sig = spec.points_per_cluster, spec.noise_sigma
    t = _grid(0.5, 1.0, n)
    pts = [_spd_repair(10 * a * np.eye(3) + sig * _sym_noise(rng, 3)) for a in t]
    pts += [_spd_repair(np.diag([10 * b, 10 * b**2, 10 * b**3]) + sig * _sym_noise(rng, 3))
            for b in t]
    return Spd(3), np.array(pts)


def _sphere(spec, rng, fam1, fam2):
    n, sig = spec.points_per_cluster, spec.noise_sigma
    t = _grid(0.0, np.pi / 2, n)
    raw = [fam1(a) for a in t] + [fam2(a) for a in t]
    pts = []
    for x in raw:
        x = np.asarray(x, float) + sig * rng.standard_normal(3)
        pts.append(x / np.linalg.norm(x))
    return Sphere(2), np.array(pts)


def _dataset_5(spec, rng):
    h = np.sqrt(0.97)
    return _sphere(spec, rng,
                   lambda a: [np.cos(a), np.sin(a), 0.0],
                   lambda a: [h * np.cos(a), h * np.sin(a), np.sqrt(0.03)])


def _dataset_6(spec, rng):
    return _sphere(spec, rng,
                   lambda a: [np.cos(a + np.pi / 4), np.sin(a + np.pi / 4), 0.0],
                   lambda a: [0.0, np.cos(a - np.pi / 4), np.sin(a - np.pi / 4)])


_GENERATORS = dict(zip(DATASET_IDS, (_dataset_1, _dataset_2, _dataset_3, _dataset_4,
                                     _dataset_5, _dataset_6)))


def generate(spec):
    """Generate one dataset; the same spec always yields identical arrays."""
    spec.validate()
    rng = np.random.default_rng(int(spec.seed))
    manifold, points = _GENERATORS[spec.id](spec, rng)
    n = int(spec.points_per_cluster)
    labels = np.repeat([1, 2], n)
    return Dataset(manifold, points, labels, spec)


def noise_sweep(base, sigmas):
    """One dataset per noise level.

    Every level reuses ``base.seed``, so the sweep applies the same noise
    draw at increasing scale.
    """
    sigmas = [float(s) for s in sigmas]
    if any(s < 0 for s in sigmas) or sigmas != sorted(sigmas):
        raise InvalidSpec("sigmas must be nonnegative and ascending")
    return [generate(replace(base, noise_sigma=s)) for s in sigmas]


def two_great_circles(n_points=200, seed=0):
    """Noiseless points on the great circles z = 0 and x = 0 of S^2.

    Angles are uniform at random; the circles meet at (0, +-1, 0).
    """
    rng = np.random.default_rng(seed)
    half = n_points // 2
    a = rng.uniform(0, 2 * np.pi, half)
    b = rng.uniform(0, 2 * np.pi, n_points - half)
    c1 = np.column_stack([np.cos(a), np.sin(a), np.zeros_like(a)])
    c2 = np.column_stack([np.zeros_like(b), np.cos(b), np.sin(b)])
    labels = np.repeat([1, 2], [half, n_points - half])
    return Dataset(Sphere(2), np.vstack([c1, c2]), labels, None)


# ---------------------------------------------------------------------------
# I/O


def dumps_dataset(ds):
    m = ds.manifold
    spec = "external" if ds.spec is None else asdict(ds.spec)
    labels = None if ds.labels is None else [int(v) for v in ds.labels]
    flat = np.asarray(ds.points, dtype=float).reshape(len(ds.points), -1)
    rows = ",\n  ".join("[" + ", ".join(repr(float(v)) for v in row) + "]" for row in flat)
    head = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "manifold": {"tag": m.tag, "params": list(m.params())},
        "shape": list(m.shape),
        "n_points": len(flat),
        "spec": spec,
        "labels": labels,
    }
    body = json.dumps(head)[:-1]
    return body + ',\n "points": [\n  ' + rows + "\n ]}\n"


def save_dataset(ds, path):
    Path(path).write_text(dumps_dataset(ds))


def loads_dataset(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode())
        raise ParseError(f"malformed dataset file: {exc.msg}", offset) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ParseError("not a tangentclust dataset file", 0)
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {doc.get('version')!r}")
    try:
        tag = doc["manifold"]["tag"]
        params = doc["manifold"]["params"]
        try:
            manifold = manifold_from_tag(tag, params)
        except ValueError:
            raise ParseError(f"unknown manifold tag {tag!r}") from None
        shape = tuple(doc["shape"])
        if shape != manifold.shape:
            raise ParseError(f"shape {shape} does not match manifold {manifold!r}")
        points = np.array(doc["points"], dtype=float)
        n = int(doc["n_points"])
        if points.ndim != 2 or points.shape != (n, manifold.ambient_size):
            raise ParseError(f"expected {n} points of size {manifold.ambient_size}")
        points = points.reshape((n,) + manifold.shape)
        labels = doc["labels"]
        if labels is not None:
            labels = np.array(labels, dtype=int)
            if labels.shape != (n,):
                raise ParseError("label count does not match point count")
        spec = doc["spec"]
        spec = None if spec == "external" else DatasetSpec(**spec)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing or malformed field: {exc}") from None
    return Dataset(manifold, points, labels, spec)


def load_dataset(path):
    return loads_dataset(Path(path).read_text())
