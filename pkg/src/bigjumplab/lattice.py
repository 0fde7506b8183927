"""
Windowed lattice probability mass functions stored in the log domain.

A :class:`LatticePMF` holds the log-probabilities of the integers
``offset, offset + 1, ..., offset + len - 1`` together with the mass that
lies outside that window.  Outside mass is split into a left part and a
right part so that survival probabilities beyond the window stay usable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

NEG_INF = -np.inf


def log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def log_sum(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or not np.any(np.isfinite(values)):
        return NEG_INF
    return float(logsumexp(values))


@dataclass(frozen=True)
class LatticePMF:
    """
    Probability mass function on a contiguous integer window.

    Parameters
    ----------
    offset : int
        Integer carried by ``log_mass[0]``.
    log_mass : np.ndarray
        Log-probabilities over the window; ``-inf`` marks zero mass.
    out_left_log, out_right_log : float
        Log of the mass lying strictly left / right of the window.
    method : str
        Provenance of the numbers: ``"exact"`` for closed-form
        materialisation, ``"direct"`` for direct-summation convolutions and
        ``"fft"`` as soon as any frequency-domain product was involved.
    """

    offset: int
    log_mass: np.ndarray
    out_left_log: float = NEG_INF
    out_right_log: float = NEG_INF
    method: str = "exact"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.log_mass, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("log_mass must be a non-empty 1-D array")
        object.__setattr__(self, "log_mass", arr)
        object.__setattr__(self, "offset", int(self.offset))

    # window geometry
    def __len__(self) -> int:
        return self.log_mass.size

    @property
    def lo(self) -> int:
        return self.offset

    @property
    def hi(self) -> int:
        return self.offset + self.log_mass.size - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def out_mass_log(self) -> float:
        return log_add(self.out_left_log, self.out_right_log)

    # mass queries
    def probs(self) -> np.ndarray:
        return np.exp(self.log_mass)

    def window_mass_log(self) -> float:
        return log_sum(self.log_mass)

    def total_mass_log(self) -> float:
        return log_add(self.window_mass_log(), self.out_mass_log)

    def total_mass(self) -> float:
        return float(np.exp(self.total_mass_log()))

    def log_at(self, k):
        """Log-mass at integer(s) ``k``; ``-inf`` outside the window."""
        k = np.asarray(k)
        idx = k - self.offset
        inside = (idx >= 0) & (idx < self.log_mass.size)
        out = np.full(k.shape, NEG_INF)
        out[inside] = self.log_mass[idx[inside]]
        return float(out) if out.ndim == 0 else out

    def prob(self, k):
        return np.exp(self.log_at(k))

    def mean(self) -> float:
        """Mean over the window, weighting by window mass only."""
        p = self.probs()
        return float(np.dot(self.support.astype(float), p) / p.sum())

    # derived laws
    def shifted(self, by: int) -> "LatticePMF":
        return replace(self, offset=self.offset + int(by))

    def renormalized(self) -> "LatticePMF":
        """The law conditioned on the window (outside mass dropped)."""
        return replace(
            self,
            log_mass=self.log_mass - self.window_mass_log(),
            out_left_log=NEG_INF,
            out_right_log=NEG_INF,
        )

    def restricted(self, lo=None, hi=None) -> "LatticePMF":
        """
        Sub-probability measure ``pmf * 1{lo <= k <= hi}``.

        Mass removed by the restriction is discarded, not moved to the
        outside buckets; the result is a defective measure.
        """
        lo = self.lo if lo is None else int(lo)
        hi = self.hi if hi is None else int(hi)
        if lo > hi:
            raise ValueError("empty restriction")
        log_mass = self.log_mass.copy()
        k = self.support
        log_mass[(k < lo) | (k > hi)] = NEG_INF
        left = self.out_left_log if lo <= self.lo else NEG_INF
        right = self.out_right_log if hi >= self.hi else NEG_INF
        return replace(self, log_mass=log_mass, out_left_log=left, out_right_log=right)

    def trimmed(self) -> "LatticePMF":
        """Drop leading/trailing zero-mass entries of the window."""
        finite = np.flatnonzero(np.isfinite(self.log_mass))
        if finite.size == 0:
            return self
        a, b = finite[0], finite[-1]
        return replace(self, offset=self.offset + a, log_mass=self.log_mass[a : b + 1])

    # I/O
    def to_csv(self, path) -> Path:
        """Write ``k,log_mass`` rows plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "log_mass"])
            for k, v in zip(self.support.tolist(), self.log_mass.tolist()):
                writer.writerow([k, repr(v)])
        sidecar = {
            "offset": self.offset,
            "len": len(self),
            "out_mass_log": self.out_mass_log,
            "out_left_log": self.out_left_log,
            "out_right_log": self.out_right_log,
            "method": self.method,
        }
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2))
        return path

    @classmethod
    def from_csv(cls, path) -> "LatticePMF":
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text())
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["k", "log_mass"]:
                raise ValueError(f"unexpected header {header!r}")
            rows = [(int(k), float(v)) for k, v in reader]
        ks = [k for k, _ in rows]
        if len(rows) != meta["len"] or (rows and ks[0] != meta["offset"]):
            raise ValueError("CSV body does not match its sidecar")
        if ks != list(range(meta["offset"], meta["offset"] + meta["len"])):
            raise ValueError("CSV rows are not a contiguous window")
        left = meta.get("out_left_log")
        right = meta.get("out_right_log")
        if left is None or right is None:
            # only the total is known; keep it on the right
            left, right = NEG_INF, meta["out_mass_log"]
        return cls(
            offset=meta["offset"],
            log_mass=np.array([v for _, v in rows]),
            out_left_log=float(left),
            out_right_log=float(right),
            method=meta.get("method", "exact"),
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def delta(k: int = 0) -> LatticePMF:
    """Point mass at ``k``."""
    return LatticePMF(offset=k, log_mass=np.zeros(1))


def from_probs(offset: int, probs, **kwargs) -> LatticePMF:
    with np.errstate(divide="ignore"):
        return LatticePMF(offset=offset, log_mass=np.log(np.asarray(probs, float)), **kwargs)
