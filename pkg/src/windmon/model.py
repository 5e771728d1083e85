"""Branching heteroscedastic network: shared trunk, mean head, std head.

The network maps a feature vector to a Gaussian predictive density for the
power output. The mean path is linear after the last relu (so the mean is
piecewise linear in the input); the std path ends in a shifted softplus, so
the predicted standard deviation never falls below the configured floor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .nn import DenseLayer, ParameterSet

BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureSpec:
    """Widths of the trunk and of each branch's private hidden layers.

    ``trunk_widths`` are the shared layers (at least one). ``mean_widths``
    and ``std_widths`` list each branch's own hidden layers after the split;
    they may be empty, in which case the width-1 output head attaches
    directly to the trunk. ``std_floor`` is the softplus shift of the std
    head. Both heads always have output width 1.
    """

    input_dim: int
    trunk_widths: tuple[int, ...]
    mean_widths: tuple[int, ...] = ()
    std_widths: tuple[int, ...] = ()
    std_floor: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(self.trunk_widths))
        object.__setattr__(self, "mean_widths", tuple(self.mean_widths))
        object.__setattr__(self, "std_widths", tuple(self.std_widths))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if len(self.trunk_widths) == 0:
            raise ConfigError("trunk must have at least one layer")
        for w in self.trunk_widths + self.mean_widths + self.std_widths:
            if w < 1:
                raise ConfigError(f"layer widths must be positive, got {w}")
        if self.std_floor < 0:
            raise ConfigError("std_floor must be non-negative")

    @property
    def n_params(self) -> int:
        """Closed-form parameter count: sum of d_in*d_out + d_out per layer."""
        total = 0
        prev = self.input_dim
        for w in self.trunk_widths:
            total += prev * w + w
            prev = w
        for widths in (self.mean_widths, self.std_widths):
            b_prev = prev
            for w in widths:
                total += b_prev * w + w
                b_prev = w
            total += b_prev * 1 + 1  # head
        return total

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            trunk_widths=tuple(d["trunk_widths"]),
            mean_widths=tuple(d.get("mean_widths", ())),
            std_widths=tuple(d.get("std_widths", ())),
            std_floor=float(d.get("std_floor", 0.001)),
        )


def preset(name: str, input_dim: int = 41, std_floor: float = 0.001) -> ArchitectureSpec:
    """Named architectures used throughout: A1 (branched) and A2 (wide trunk)."""
    name = name.upper()
    if name == "A1":
        return ArchitectureSpec(input_dim, (100, 80, 40), (20,), (20,), std_floor)
    if name == "A2":
        return ArchitectureSpec(input_dim, (300, 200, 100), (), (), std_floor)
    raise ConfigError(f"unknown architecture preset {name!r}")


# default fine-tune learning rates per preset
PRESET_FINETUNE_LR = {"A1": 1e-3, "A2": 1e-4}


@dataclass(frozen=True)
class GaussianPrediction:
    """Predictive density for one interval: mean and stddev in kW."""

    mean: float
    stddev: float


def _he_uniform(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / d_in)
    return rng.uniform(-limit, limit, size=(d_out, d_in))


def _seed_u64(seed: int) -> int:
    return seed & 0xFFFFFFFFFFFFFFFF


def build(arch: ArchitectureSpec, seed: int) -> ParameterSet:
    """Instantiate parameters for an architecture.

    He-uniform weights (fan-in scaled, suited to relu layers), zero biases,
    deterministic for a given seed. Trunk layers exist once and are shared by
    both branches.
    """
    rng = np.random.default_rng([_seed_u64(seed), 1])

    def make(widths_in: int, widths: tuple[int, ...], with_head: bool) -> list[DenseLayer]:
        layers = []
        prev = widths_in
        for w in widths:
            layers.append(DenseLayer(_he_uniform(rng, w, prev), np.zeros(w)))
            prev = w
        if with_head:
            layers.append(DenseLayer(_he_uniform(rng, 1, prev), np.zeros(1)))
        return layers

    trunk = make(arch.input_dim, arch.trunk_widths, with_head=False)
    trunk_out = arch.trunk_widths[-1]
    mean_branch = make(trunk_out, arch.mean_widths, with_head=True)
    std_branch = make(trunk_out, arch.std_widths, with_head=True)
    params = ParameterSet(trunk, mean_branch, std_branch, arch.std_floor)
    assert params.flat_len == arch.n_params
    return params


def check_compatible(params: ParameterSet, arch: ArchitectureSpec):
    """Raise ConfigError("arch mismatch ...") when shapes disagree."""
    got_trunk = tuple(l.d_out for l in params.trunk)
    got_mean = tuple(l.d_out for l in params.mean_branch[:-1])
    got_std = tuple(l.d_out for l in params.std_branch[:-1])
    ok = (
        params.d_in == arch.input_dim
        and got_trunk == arch.trunk_widths
        and got_mean == arch.mean_widths
        and got_std == arch.std_widths
    )
    if not ok:
        raise ConfigError(
            "arch mismatch: parameters have "
            f"(d0={params.d_in}, trunk={got_trunk}, mean={got_mean}, std={got_std}), "
            f"architecture declares (d0={arch.input_dim}, trunk={arch.trunk_widths}, "
            f"mean={arch.mean_widths}, std={arch.std_widths})"
        )


def predict(params: ParameterSet, arch: ArchitectureSpec, x: np.ndarray) -> GaussianPrediction:
    """Predict the Gaussian density for one (already normalized) feature row."""
    check_compatible(params, arch)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.input_dim,):
        raise ShapeError(f"feature vector has shape {x.shape}, expected ({arch.input_dim},)")
    mu, sigma, _ = nn.forward_batch(params, x[None, :])
    return GaussianPrediction(mean=float(mu[0]), stddev=float(sigma[0]))


def predict_batch(
    params: ParameterSet, arch: ArchitectureSpec, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized prediction: returns (means, stddevs) arrays of shape (n,)."""
    check_compatible(params, arch)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ShapeError(f"feature matrix has shape {X.shape}, expected (n, {arch.input_dim})")
    mu, sigma, _ = nn.forward_batch(params, X)
    return mu, sigma


def batch_nll(params: ParameterSet, arch: ArchitectureSpec, dataset) -> float:
    """Summed Gaussian NLL of a dataset under the current parameters.

    ``dataset`` is anything with ``features`` (n, d0) and ``target_power``
    (n,) attributes, or a plain (X, y) pair.
    """
    if hasattr(dataset, "features"):
        X, y = dataset.features, dataset.target_power
    else:
        X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ShapeError("dataset must be non-empty")
    mu, sigma = predict_batch(params, arch, X)
    return nn.batch_nll_from_arrays(mu, sigma, y)


@dataclass
class ModelBundle:
    """Everything needed to predict on raw ingested features.

    Serialized as one versioned JSON document. Parameters are stored as JSON
    numbers, which round-trip float64 exactly.
    """

    arch: ArchitectureSpec
    params: ParameterSet
    normalization: dict | None = None  # data.NormalizationStats.to_dict()
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "format_version": BUNDLE_FORMAT_VERSION,
            "arch": self.arch.to_dict(),
            "flat_params": self.params.flatten().tolist(),
            "normalization": self.normalization,
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ModelBundle":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != BUNDLE_FORMAT_VERSION:
            raise ConfigError(f"unsupported bundle format_version {version}")
        arch = ArchitectureSpec.from_dict(doc["arch"])
        template = build(arch, seed=0)
        params = template.unflatten(np.asarray(doc["flat_params"], dtype=np.float64))
        return cls(
            arch=arch,
            params=params,
            normalization=doc.get("normalization"),
            metadata=doc.get("metadata", {}),
        )

    def save(self, path):
        from .ioutil import atomic_write_text

        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())
