"""Procedural multi-domain image data.

Classes are fixed geometric patterns (bars, checkerboard, disk, ...); a domain
is a colour-style transform applied to every image: a hue-like rotation that
mixes the three channels, a per-channel gain and bias, then additive Gaussian
noise. ``shift_level`` scales how far a domain's transform sits from the
identity, so distance-to-base experiments can be dialed in.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError

IMAGE_SIZE = 16
N_CHANNELS = 3
N_TEMPLATES = 8

# foreground / background colours of the canonical (unshifted) domain
FOREGROUND = np.array([0.9, 0.5, 0.1])
BACKGROUND = np.array([0.1, 0.3, 0.6])

# magnitudes per unit of shift_level
GAIN_PER_LEVEL = 0.45      # log-gain norm
BIAS_PER_LEVEL = 0.45      # bias norm
ANGLE_PER_LEVEL = 0.2
NOISE_PER_LEVEL = 0.1


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    channel_gain: tuple[float, ...] = (1.0, 1.0, 1.0)
    channel_bias: tuple[float, ...] = (0.0, 0.0, 0.0)
    channel_mix_angle: float = 0.0
    noise_sigma: float = 0.0
    shift_level: float = 0.0

    def __post_init__(self):
        if any(g <= 0 for g in self.channel_gain):
            raise ConfigError("channel gains must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if len(self.channel_gain) != len(self.channel_bias):
            raise ConfigError("gain and bias lengths differ")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(int(d["domain_id"]), tuple(float(v) for v in d["channel_gain"]),
                   tuple(float(v) for v in d["channel_bias"]), float(d["channel_mix_angle"]),
                   float(d["noise_sigma"]), float(d.get("shift_level", 0.0)))


@dataclass(frozen=True)
class LabeledSample:
    input: np.ndarray
    class_label: int
    domain_id: int


@dataclass
class SyntheticDataset:
    """Column-oriented store: ``inputs[i]`` has label ``labels[i]`` and domain ``domains[i]``."""

    inputs: np.ndarray          # (n, 3, H, W) float32
    labels: np.ndarray          # (n,) int64
    domains: np.ndarray         # (n,) int64
    n_classes: int
    seed: int = 0
    specs: tuple[DomainSpec, ...] = ()

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def domain_ids(self) -> list[int]:
        return sorted(int(d) for d in np.unique(self.domains))

    @property
    def samples(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(self.inputs[i], int(self.labels[i]), int(self.domains[i]))

    def subset(self, mask) -> "SyntheticDataset":
        mask = np.asarray(mask)
        keep = set(int(d) for d in np.unique(self.domains[mask]))
        return SyntheticDataset(self.inputs[mask], self.labels[mask], self.domains[mask],
                                self.n_classes, self.seed, tuple(s for s in self.specs if s.domain_id in keep))

    def select_domains(self, domain_ids: Sequence[int]) -> "SyntheticDataset":
        return self.subset(np.isin(self.domains, list(domain_ids)))


def _grid(size: int):
    coords = np.arange(size) - (size - 1) / 2.0
    return np.meshgrid(coords, coords, indexing="ij")


def template(k: int, size: int = IMAGE_SIZE, phase: float = 0.0) -> np.ndarray:
    """Binary-ish pattern ``k`` in [0, 1]; ``phase`` nudges stripe offsets and radii."""
    yy, xx = _grid(size)
    r = np.hypot(yy, xx)
    if k == 0:    # horizontal bars
        img = np.sin((yy + phase) * np.pi / 4.0) > 0
    elif k == 1:  # vertical bars
        img = np.sin((xx + phase) * np.pi / 4.0) > 0
    elif k == 2:  # checkerboard
        img = (np.floor((yy + 8 + phase) / 3) + np.floor((xx + 8) / 3)) % 2 == 0
    elif k == 3:  # disk
        img = r < 4.5 + 0.5 * phase
    elif k == 4:  # diagonal stripes
        img = np.sin((xx + yy + phase) * np.pi / 4.0) > 0
    elif k == 5:  # cross
        img = (np.abs(xx) < 2.0 + 0.3 * phase) | (np.abs(yy) < 2.0 + 0.3 * phase)
    elif k == 6:  # ring
        img = np.abs(r - 5.0 - 0.3 * phase) < 1.5
    elif k == 7:  # filled lower triangle
        img = yy > xx + phase
    else:
        raise ConfigError(f"no template {k}; only {N_TEMPLATES} exist")
    return img.astype(np.float64)


def mix_matrix(angle: float) -> np.ndarray:
    """Rotation by ``angle`` about the grey axis (1, 1, 1)/sqrt(3)."""
    u = np.ones(3) / np.sqrt(3.0)
    ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.cos(angle) * np.eye(3) + np.sin(angle) * ux + (1 - np.cos(angle)) * np.outer(u, u)


def apply_domain(images: np.ndarray, spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Channel mix, gain, bias, then additive noise, on a batch ``(n, 3, H, W)``."""
    out = np.einsum("ij,njhw->nihw", mix_matrix(spec.channel_mix_angle), images)
    out = out * np.asarray(spec.channel_gain)[:, None, None] + np.asarray(spec.channel_bias)[:, None, None]
    if spec.noise_sigma > 0:
        out = out + spec.noise_sigma * rng.standard_normal(out.shape)
    return out


def canonical_images(k: int, n: int, rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """``n`` jittered canonical-domain images of class ``k``."""
    out = np.empty((n, N_CHANNELS, size, size))
    for i in range(n):
        pat = template(k, size, phase=rng.uniform(-0.5, 0.5))
        pat = np.roll(pat, tuple(rng.integers(-1, 2, size=2)), axis=(0, 1))
        fg = FOREGROUND + rng.uniform(-0.05, 0.05, size=3)
        bg = BACKGROUND + rng.uniform(-0.05, 0.05, size=3)
        out[i] = fg[:, None, None] * pat + bg[:, None, None] * (1.0 - pat)
    return out


def generate_dataset(domains: Sequence[DomainSpec], n_classes: int, per_class_per_domain: int,
                     seed: int = 0, size: int = IMAGE_SIZE) -> SyntheticDataset:
    """Exactly ``per_class_per_domain`` images for every (class, domain) cell.

    Every cell draws from its own child seed, so the result does not depend on
    the order in which cells are produced.
    """
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if n_classes > N_TEMPLATES:
        raise ConfigError(f"at most {N_TEMPLATES} classes are available")
    if per_class_per_domain < 1:
        raise ConfigError("per_class_per_domain must be >= 1")
    domains = list(domains)
    if not domains:
        raise ConfigError("need at least one domain")
    if len({d.domain_id for d in domains}) != len(domains):
        raise ConfigError("duplicate domain ids")
    children = np.random.SeedSequence(seed).spawn(len(domains) * n_classes)
    inputs, labels, dom = [], [], []
    for di, spec in enumerate(domains):
        for k in range(n_classes):
            rng = np.random.default_rng(children[di * n_classes + k])
            imgs = apply_domain(canonical_images(k, per_class_per_domain, rng, size), spec, rng)
            inputs.append(imgs)
            labels.append(np.full(per_class_per_domain, k))
            dom.append(np.full(per_class_per_domain, spec.domain_id))
    return SyntheticDataset(np.concatenate(inputs).astype(np.float32), np.concatenate(labels).astype(np.int64),
                            np.concatenate(dom).astype(np.int64), n_classes, seed, tuple(domains))


def make_domain_family(n_domains: int, shift_levels: Sequence[float], seed: int = 0,
                       shared_direction: bool = False) -> list[DomainSpec]:
    """Domains whose distance from the identity transform grows with ``shift_levels``.

    Each domain gets its own random direction for the log-gains and biases and
    a random sign for the mixing angle; the level multiplies all magnitudes.
    With ``shared_direction`` every domain reuses the first domain's direction,
    so the family lies on a single ray and larger levels are strictly farther
    from every smaller one.
    """
    levels = [float(v) for v in shift_levels]
    if len(levels) != n_domains:
        raise ConfigError("need one shift level per domain")
    if any(v < 0 for v in levels):
        raise ConfigError("shift levels must be nonnegative")
    specs = []
    children = np.random.SeedSequence(seed).spawn(n_domains)
    for k, level in enumerate(levels):
        rng = np.random.default_rng(children[0 if shared_direction else k])
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        specs.append(DomainSpec(
            domain_id=k,
            channel_gain=tuple(float(g) for g in np.exp(level * GAIN_PER_LEVEL * u)),
            channel_bias=tuple(float(b) for b in level * BIAS_PER_LEVEL * v),
            channel_mix_angle=float(sign * level * ANGLE_PER_LEVEL),
            noise_sigma=float(level * NOISE_PER_LEVEL),
            shift_level=level,
        ))
    return specs


DEFAULT_LEVELS = (0.0, 1.0, 2.0, 3.0)


def default_family(seed: int = 0) -> list[DomainSpec]:
    """The standard four-domain family used by the leave-one-out experiments."""
    return make_domain_family(len(DEFAULT_LEVELS), DEFAULT_LEVELS, seed)
