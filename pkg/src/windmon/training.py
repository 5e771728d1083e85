"""Training loops: chronological splitting, single-unit fitting, fleet
pre-training and per-unit fine-tuning, all with minibatch Adam and early
stopping on a validation set.

Gradients are scaled by batch size before the optimizer step (per-row mean),
so the configured learning rate behaves the same across batch sizes; loss
histories record the mean per-row negative log likelihood for the same
reason. Every source of randomness is derived from the config seed, so a
(seed, config, data) triple reproduces parameters bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, NumericError
from .model import ArchitectureSpec, build, check_compatible
from .nn import AdamState, ParameterSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.max_epochs < 0:
            # zero epochs is allowed so a fine-tune can be a no-op
            raise ConfigError("max_epochs must be non-negative")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be positive")


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    validation_fraction: float = 0.1  # of the remaining train portion

    def __post_init__(self):
        for name, frac in (
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
        ):
            if not 0.0 < frac < 1.0:
                raise ConfigError(f"{name} must be strictly between 0 and 1, got {frac}")


@dataclass
class TrainHistory:
    """Per-epoch mean NLL on train and validation, plus the stopping record."""

    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for e, (tr, va) in enumerate(zip(self.train_nll, self.val_nll)):
            lines.append(f"{e},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainingSet:
    """A bag of (features, target) rows; the shape training actually needs.

    Unlike a TurbineDataset it has no time axis, so pooled fleets and
    shuffled splits are representable.
    """

    features: np.ndarray
    target_power: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.target_power = np.asarray(self.target_power, dtype=np.float64)
        if self.features.shape[0] != self.target_power.shape[0]:
            raise DataError("feature and target row counts differ")

    def __len__(self) -> int:
        return len(self.target_power)


def _u64(seed: int) -> int:
    return seed & 0xFFFFFFFFFFFFFFFF


def _xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.asarray(dataset.features, dtype=np.float64),
        np.asarray(dataset.target_power, dtype=np.float64),
    )


def split_chronological(dataset, spec: SplitSpec, seed: int):
    """Chronological test split, then a seeded random validation carve-out.

    The last ``test_fraction`` of rows (by time) become the test set, so the
    test period is strictly later than everything trained on. The remaining
    rows are shuffled with the seed and ``validation_fraction`` of them form
    the validation set; train and validation are returned re-sorted by time.
    Returns (train, validation, test); the three parts partition the input.
    """
    n = len(dataset)
    n_test = int(round(spec.test_fraction * n))
    if n_test < 1 or n - n_test < 1:
        raise ConfigError(f"{n} rows cannot support a {spec.test_fraction:.0%} test split")
    n_rest = n - n_test
    n_val = int(round(spec.validation_fraction * n_rest))
    if n_rest - n_val < 1:
        raise ConfigError("validation fraction leaves no training rows")

    perm = np.random.default_rng([_u64(seed), 3]).permutation(n_rest)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return (
        dataset.take(train_idx),
        dataset.take(val_idx),
        dataset.slice_rows(n_rest, n),
    )


def pool_fleet(fleet: list, validation_fraction: float = 0.1, seed: int = 0):
    """Concatenate all units' rows and carve a seeded validation subset.

    All units must share the same feature schema; unequal row counts are
    fine — every available row contributes. Returns (train, validation) as
    TrainingSets.
    """
    if not fleet:
        raise ConfigError("fleet must contain at least one unit")
    names = list(fleet[0].feature_names) if hasattr(fleet[0], "feature_names") else None
    for unit in fleet[1:]:
        other = list(unit.feature_names) if hasattr(unit, "feature_names") else None
        if other != names:
            raise ConfigError("fleet units have mismatched feature schemas")
    X = np.concatenate([np.asarray(u.features, dtype=np.float64) for u in fleet])
    y = np.concatenate([np.asarray(u.target_power, dtype=np.float64) for u in fleet])
    n = len(y)
    n_val = int(round(validation_fraction * n))
    if n - n_val < 1:
        raise ConfigError("validation fraction leaves no training rows")
    perm = np.random.default_rng([_u64(seed), 4]).permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (
        TrainingSet(X[train_idx], y[train_idx]),
        TrainingSet(X[val_idx], y[val_idx]),
    )


def _mean_nll(params: ParameterSet, X: np.ndarray, y: np.ndarray) -> float:
    mu, sigma, _ = nn.forward_batch(params, X)
    return nn.batch_nll_from_arrays(mu, sigma, y) / len(y)


def _fit(
    initial: ParameterSet,
    train,
    validation,
    config: TrainConfig,
) -> tuple[ParameterSet, TrainHistory]:
    """Minibatch Adam with per-epoch reshuffling and best-weights restore."""
    X, y = _xy(train)
    if len(y) == 0:
        raise DataError("training set is empty")
    if config.batch_size > len(y):
        raise ConfigError(f"batch_size {config.batch_size} exceeds training size {len(y)}")
    has_val = validation is not None and len(validation.target_power) > 0
    if has_val:
        Xv, yv = _xy(validation)

    params = initial.copy()
    state = AdamState.initial(params.flat_len, learning_rate=config.learning_rate)
    history = TrainHistory()
    best_flat = params.flatten()
    best_val = np.inf
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        order = np.random.default_rng([_u64(config.seed), 5, epoch]).permutation(len(y))
        epoch_nll = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            batch_loss, grad = nn.loss_and_grad(params, (Xb, yb))
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            epoch_nll += batch_loss
            params, state = nn.adam_step(params, grad / len(yb), state)
        if not np.all(np.isfinite(params.flatten())):
            raise NumericError(f"non-finite parameters after epoch {epoch}")

        history.train_nll.append(epoch_nll / len(y))
        if has_val:
            val_nll = _mean_nll(params, Xv, yv)
            history.val_nll.append(val_nll)
            if val_nll < best_val:
                best_val = val_nll
                best_flat = params.flatten()
                history.best_epoch = epoch
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.early_stop_patience:
                    history.stopped_early = True
                    logger.info(
                        "early stop at epoch %d (best %d, val %.4f)",
                        epoch, history.best_epoch, best_val,
                    )
                    break
        else:
            history.val_nll.append(float("nan"))
            history.best_epoch = epoch
            best_flat = params.flatten()

    return initial.unflatten(best_flat), history


def train_pmlp(
    arch: ArchitectureSpec, train, validation, config: TrainConfig
) -> tuple[ParameterSet, TrainHistory]:
    """Fit one unit's model from scratch.

    Minimizes the summed Gaussian NLL by minibatch Adam; validation NLL is
    recorded each epoch, training stops after ``early_stop_patience`` epochs
    without improvement, and the parameters from the best epoch are returned.
    """
    params = build(arch, seed=config.seed)
    return _fit(params, train, validation, config)


def pretrain_farm(
    arch: ArchitectureSpec,
    fleet: list,
    config: TrainConfig,
    validation_fraction: float = 0.1,
) -> tuple[ParameterSet, TrainHistory]:
    """Train one shared model on the pooled rows of every unit.

    The pooled objective is the plain row-wise NLL sum over all units, so a
    single-unit fleet reduces exactly to :func:`train_pmlp` on the same
    pooled split. Unequal per-unit row counts are expected; every row
    contributes one loss term.
    """
    train, validation = pool_fleet(fleet, validation_fraction, config.seed)
    return train_pmlp(arch, train, validation, config)


def finetune(
    pretrained: ParameterSet,
    arch: ArchitectureSpec,
    unit_train,
    unit_validation,
    config: TrainConfig,
) -> tuple[ParameterSet, TrainHistory]:
    """Continue training a pre-trained model on a single unit.

    Starts exactly at the pre-trained parameters and optimizes the one-unit
    NLL, with the same early-stopping rule as from-scratch training. With
    ``max_epochs=0`` the pre-trained parameters come back unchanged.
    """
    check_compatible(pretrained, arch)
    if config.max_epochs == 0:
        return pretrained.copy(), TrainHistory()
    return _fit(pretrained, unit_train, unit_validation, config)
