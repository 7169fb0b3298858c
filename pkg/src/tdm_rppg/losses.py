"""Training objectives: MSE, negative Pearson, max cross-correlation, TALOS.

TALOS weights the MSE against every integer shift of the reference by a
learned per-subject softmax distribution over those shifts.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .dsp import DegenerateSignalError
from .tensor import DimensionError, Tensor


class ShiftRangeError(ValueError):
    pass


class MissingSubjectError(KeyError):
    pass


def max_shift_for(fs: float) -> int:
    return int(np.floor(fs / 2))


def shift_values(fs: float, even_only: bool = False) -> np.ndarray:
    """Candidate offsets -floor(fs/2) .. +floor(fs/2); ``even_only`` keeps k with k/2 integer."""
    m = max_shift_for(fs)
    ks = np.arange(-m, m + 1)
    return ks[ks % 2 == 0] if even_only else ks


def shift_reference(y, k: int, max_shift: int | None = None, fs: float | None = None) -> Tensor:
    """Translate ``y`` by ``k`` frames: out[t] = y[t - k], zeros where undefined."""
    if max_shift is None and fs is not None:
        max_shift = max_shift_for(fs)
    if max_shift is not None and abs(k) > max_shift:
        raise ShiftRangeError(f"|k|={abs(k)} exceeds the allowed bound {max_shift}")
    return tn.shift(y, k)


def shifted_stack(y: np.ndarray, ks) -> np.ndarray:
    """Rows are ``y`` shifted by each k, shape [K, T]."""
    y = np.asarray(y)
    return np.stack([tn._shift_array(y, int(k)) for k in ks])


@dataclass
class ShiftDistribution:
    subject_id: str
    shift_values: np.ndarray
    logits: Tensor = None

    def __post_init__(self):
        self.shift_values = np.asarray(self.shift_values, dtype=int)
        if self.logits is None:
            self.logits = Tensor(np.zeros(len(self.shift_values)), requires_grad=True,
                                 name=f"theta[{self.subject_id}]")
        if self.logits.shape != (len(self.shift_values),):
            raise DimensionError("one logit per candidate shift is required")

    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max()
        e = np.exp(z)
        return e / e.sum()

    def argmax_shift(self) -> int:
        return int(self.shift_values[int(np.argmax(self.logits.data))])


@dataclass
class ShiftRegistry:
    """Per-subject shift distributions sharing one candidate set."""

    fs: float = 30.0
    even_only: bool = False
    dists: dict[str, ShiftDistribution] = field(default_factory=dict)

    @property
    def shift_values(self) -> np.ndarray:
        return shift_values(self.fs, self.even_only)

    def register(self, subject_id: str) -> ShiftDistribution:
        if subject_id not in self.dists:
            self.dists[subject_id] = ShiftDistribution(subject_id, self.shift_values)
        return self.dists[subject_id]

    def __getitem__(self, subject_id: str) -> ShiftDistribution:
        try:
            return self.dists[subject_id]
        except KeyError:
            raise MissingSubjectError(f"subject {subject_id!r} has no shift distribution") from None

    def __contains__(self, subject_id) -> bool:
        return subject_id in self.dists

    def __len__(self) -> int:
        return len(self.dists)

    def parameters(self) -> list[Tensor]:
        return [d.logits for d in self.dists.values()]

    def argmax_shifts(self) -> dict[str, int]:
        return {s: d.argmax_shift() for s, d in self.dists.items()}

    def to_table(self) -> str:
        """Tab-separated rows: subject_id, shift, probability."""
        buf = io.StringIO()
        buf.write("subject_id\tshift\tprobability\n")
        for sid in sorted(self.dists):
            d = self.dists[sid]
            for k, p in zip(d.shift_values, d.probabilities()):
                buf.write(f"{sid}\t{int(k)}\t{p:.12g}\n")
        return buf.getvalue()

    def save_table(self, path) -> None:
        Path(path).write_text(self.to_table())

    @staticmethod
    def read_table(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        rows: dict[str, list[tuple[int, float]]] = {}
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].split("\t") != ["subject_id", "shift", "probability"]:
            raise ValueError(f"{path}: not a shift-probability table")
        for line in lines[1:]:
            sid, k, p = line.split("\t")
            rows.setdefault(sid, []).append((int(k), float(p)))
        return {s: (np.array([k for k, _ in r]), np.array([p for _, p in r])) for s, r in rows.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {f"theta/{sid}": d.logits.data.copy() for sid, d in self.dists.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for key, logits in state.items():
            if key.startswith("theta/"):
                d = self.register(key[len("theta/"):])
                d.logits.data[...] = logits


def _check_pair(y_hat: Tensor, y) -> Tensor:
    y = tn.as_tensor(y, dtype=y_hat.dtype)
    if y_hat.ndim != 1 or y_hat.shape != y.shape:
        raise DimensionError(f"signals must be equal-length 1-d, got {y_hat.shape} and {y.shape}")
    return y


def mse_loss(y_hat, y) -> Tensor:
    y_hat = tn.as_tensor(y_hat)
    return tn.mse_reduce(y_hat, _check_pair(y_hat, y))


def _standardize(x: Tensor, what: str) -> Tensor:
    if np.std(x.data) <= 1e-12:
        raise DegenerateSignalError(f"{what} has zero variance")
    centred = x - tn.mean(x)
    return centred / tn.sqrt(tn.mean(centred * centred))


def pearson(y_hat, y) -> Tensor:
    y_hat = tn.as_tensor(y_hat)
    y = _check_pair(y_hat, y)
    a = _standardize(y_hat, "prediction")
    b = _standardize(y, "reference")
    return tn.mean(a * b)


def npc_loss(y_hat, y) -> Tensor:
    """1 - Pearson correlation (signals are not pre-normalised)."""
    return 1.0 - pearson(y_hat, y)


def mcc_loss(y_hat, y, fs: float = 30.0, max_lag: int | None = None) -> Tensor:
    """Negative maximum normalised cross-correlation over lags |l| <= floor(fs/2).

    Both signals are standardised; for each lag the reference is shifted with
    zero fill and the mean product taken, so lag 0 equals the Pearson correlation.
    """
    y_hat = tn.as_tensor(y_hat)
    y = _check_pair(y_hat, y)
    if max_lag is None:
        max_lag = max_shift_for(fs)
    a = _standardize(y_hat, "prediction")
    b = _standardize(y, "reference")
    lagged = tn.stack([tn.shift(b, lag) for lag in range(-max_lag, max_lag + 1)])
    xcorr = tn.mean(lagged * a, axis=1)
    return -tn.max_(xcorr)


def talos_shift_mses(y_hat, y, ks) -> Tensor:
    """MSE of ``y_hat`` against each shifted reference, shape [K]."""
    y_hat = tn.as_tensor(y_hat)
    y = _check_pair(y_hat, y)
    refs = Tensor(shifted_stack(y.data, ks))
    d = y_hat - refs
    return tn.mean(d * d, axis=1)


def talos_loss(y_hat, y, dist: ShiftDistribution) -> Tensor:
    """sum_k MSE(y_hat, y shifted by k) * softmax(theta)_k."""
    mses = talos_shift_mses(y_hat, y, dist.shift_values)
    p = tn.softmax(dist.logits)
    return tn.sum_(mses * p)


LOSSES = ("mse", "npc", "mcc", "talos")


def clip_loss(name: str, y_hat, y, subject_id: str | None = None,
              registry: ShiftRegistry | None = None, fs: float = 30.0) -> Tensor:
    """Dispatch one of :data:`LOSSES` for a single clip."""
    if name == "mse":
        return mse_loss(y_hat, y)
    if name == "npc":
        return npc_loss(y_hat, y)
    if name == "mcc":
        return mcc_loss(y_hat, y, fs=fs)
    if name == "talos":
        if registry is None:
            raise ValueError("talos needs a shift registry")
        return talos_loss(y_hat, y, registry[subject_id])
    raise ValueError(f"unknown loss {name!r}; choose from {LOSSES}")
