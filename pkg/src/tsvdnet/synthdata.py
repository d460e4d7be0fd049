"""Seeded synthetic multi-source domain adaptation problems.

Every domain shares one set of class centers. A domain applies its own
rigid motion (a rotation by the same angle in each consecutive coordinate
plane, then a translation) and draws isotropic Gaussian clusters around
the moved centers. The last domain of a dataset is the target.

Label noise is class-conditional pair flipping: in every class the same
fraction of samples is relabelled ``c -> (c + 1) mod C``. Unlike uniform
relabelling this biases the decision boundaries learned from the domain,
and it keeps the class counts exactly balanced.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecInvalid


@dataclass(frozen=True)
class DomainSpec:
    centers: np.ndarray  # (C, input_dim)
    rotation: float = 0.0
    translation: np.ndarray | float = 0.0
    std: float = 1.0
    label_noise: float = 0.0
    n_samples: int = 2000

    @property
    def num_classes(self):
        return self.centers.shape[0]

    @property
    def input_dim(self):
        return self.centers.shape[1]

    def validate(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 2:
            raise SpecInvalid("centers must be a (C, input_dim) array with C >= 2")
        if len({tuple(row) for row in c}) != c.shape[0]:
            raise SpecInvalid("class centers must be distinct")
        if not self.std > 0:
            raise SpecInvalid("std must be > 0")
        if not 0 <= self.label_noise < 1:
            raise SpecInvalid("label_noise must lie in [0, 1)")
        if self.n_samples < c.shape[0]:
            raise SpecInvalid("n_samples must be at least the number of classes")
        t = np.asarray(self.translation, dtype=np.float64)
        if t.ndim > 1 or (t.ndim == 1 and t.shape[0] != c.shape[1]):
            raise SpecInvalid("translation must be a scalar or an input_dim vector")


@dataclass
class Domain:
    x: np.ndarray  # (N, input_dim)
    y: np.ndarray  # (N,) int; for the target only used for evaluation


@dataclass
class DomainDataset:
    sources: list
    target: Domain
    num_classes: int = field(default=0)

    @property
    def domains(self):
        return [*self.sources, self.target]

    @property
    def input_dim(self):
        return self.target.x.shape[1]


def plane_rotation(dim, angle):
    """Rotate by ``angle`` in planes (0, 1), (2, 3), ...; an odd last axis is fixed."""
    r = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        r[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return r


def moved_centers(spec):
    centers = np.asarray(spec.centers, dtype=np.float64)
    return centers @ plane_rotation(spec.input_dim, spec.rotation).T + np.asarray(
        spec.translation, dtype=np.float64
    )


def _balanced_labels(n, num_classes):
    per = np.full(num_classes, n // num_classes)
    per[: n % num_classes] += 1
    return np.repeat(np.arange(num_classes), per)


def _draw_domain(spec, rng):
    spec.validate()
    y = _balanced_labels(spec.n_samples, spec.num_classes)
    x = moved_centers(spec)[y] + spec.std * rng.standard_normal((spec.n_samples, spec.input_dim))
    if spec.label_noise > 0:
        clean = y.copy()
        k = int(round(spec.label_noise * (spec.n_samples // spec.num_classes)))
        for c in range(spec.num_classes):
            idx = rng.choice(np.flatnonzero(clean == c), size=k, replace=False)
            y[idx] = (c + 1) % spec.num_classes
    order = rng.permutation(spec.n_samples)
    return Domain(x[order], y[order])


def generate(specs, seed):
    """Draw one domain per spec; the last spec describes the target."""
    if len(specs) < 3:
        raise SpecInvalid("need at least two sources and one target")
    shapes = {(s.num_classes, s.input_dim) for s in specs}
    if len(shapes) != 1:
        raise SpecInvalid("all domains must share num_classes and input_dim")
    children = np.random.SeedSequence(seed).spawn(len(specs))
    domains = [_draw_domain(s, np.random.default_rng(c)) for s, c in zip(specs, children)]
    return DomainDataset(domains[:-1], domains[-1], specs[0].num_classes)


def inject_noise(x, r, seed):
    """``x + r * eps`` with ``eps ~ N(0, I)``."""
    if r < 0:
        raise ValueError("noise intensity r must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if r == 0:
        return x.copy()
    return x + r * np.random.default_rng(seed).standard_normal(x.shape)


def random_centers(num_classes, input_dim, scale, seed):
    return scale * np.random.default_rng(seed).standard_normal((num_classes, input_dim))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Parameters of the default benchmark; per-domain tuples end with the target.

    Sources sit at increasing rotation and shift; the target lies beyond the
    last source, which is also the one carrying label noise.
    """

    num_sources: int = 3
    input_dim: int = 16
    num_classes: int = 5
    samples_per_domain: int = 2000
    center_scale: float = 1.5
    rotations: tuple = (0.0, 0.3, 0.6, 1.0)
    shifts: tuple = (0.0, 0.5, 1.0, 1.5)
    stds: tuple = (1.0, 1.0, 1.0, 1.0)
    label_noise: tuple = (0.0, 0.0, 0.4, 0.0)

    def validate(self):
        n = self.num_sources + 1
        for name in ("rotations", "shifts", "stds", "label_noise"):
            if len(getattr(self, name)) != n:
                raise SpecInvalid(f"{name} needs {n} entries (sources + target)")
        if self.num_sources < 2:
            raise SpecInvalid("need at least two sources")
        return self

    def specs(self, seed):
        self.validate()
        centers = random_centers(
            self.num_classes, self.input_dim, self.center_scale, np.random.SeedSequence([seed, 0])
        )
        u = np.random.default_rng(np.random.SeedSequence([seed, 1])).standard_normal(self.input_dim)
        u /= np.linalg.norm(u)
        return [
            DomainSpec(
                centers,
                rotation=float(rot),
                translation=float(shift) * u,
                std=float(std),
                label_noise=float(noise),
                n_samples=self.samples_per_domain,
            )
            for rot, shift, std, noise in zip(self.rotations, self.shifts, self.stds, self.label_noise)
        ]

    def generate(self, seed):
        return generate(self.specs(seed), [seed, 2])
