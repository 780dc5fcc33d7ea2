"""Activation-range observation and scale resolution.

A calibration pass runs the FP32 forward over a few hundred batches and
tracks the running abs-max at every quantization site.  ``finalize``
turns the collected amax statistics into the static scales the quantized
kernels consume: amax/127 for signed sites, amax/255 for the softmax
output site (asymmetric u8).  The statistic is a plain running max, so
observation order and batch parallelism cannot change the result.

Site ids follow ``layer<k>.<symbol>`` with symbols:

=========  ============  =======================================
symbol     granularity   tensor observed
=========  ============  =======================================
S_q        scalar        query projection output
S_k        scalar        key projection output
S_v        scalar        value projection output
S_p        scalar        softmax output (u8 site, amax/255)
S_attn     per-feature   attention context (P @ V, concat heads)
S_o        per-feature   attention output projection
S_a        per-feature   GELU output
S_x2       per-feature   second MLP projection output
=========  ============  =======================================

plus an optional scalar ``emb.S_emb_hint`` diagnostic for the embedding
layer-norm output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, InputError, ShapeError
from .tensor import F32, check_finite

SCALAR_SYMBOLS = ("S_q", "S_k", "S_v", "S_p")
FEATURE_SYMBOLS = ("S_attn", "S_o", "S_a", "S_x2")
ALL_SYMBOLS = SCALAR_SYMBOLS + FEATURE_SYMBOLS

EMB_HINT_SITE = "emb.S_emb_hint"

# the softmax-output site quantizes to unsigned 8 bit
_U8_SUFFIX = ".S_p"


def site_id(layer: int, symbol: str) -> str:
    return f"layer{layer}.{symbol}"


def site_census(n_layers: int) -> list[str]:
    """Every per-layer site id a full calibration must cover."""
    return [site_id(k, sym) for k in range(n_layers) for sym in ALL_SYMBOLS]


def is_u8_site(sid: str) -> bool:
    return sid.endswith(_U8_SUFFIX)


class Observer:
    """Running abs-max for one site; scalar or per-feature."""

    def __init__(self, site: str, dim: int | None = None):
        self.site = site
        self.dim = dim  # None: scalar statistic
        if dim is None:
            self.running_amax: np.ndarray = np.zeros((), dtype=F32)
        else:
            self.running_amax = np.zeros(dim, dtype=F32)
        self.batches = 0

    def observe(self, x: np.ndarray) -> "Observer":
        """Fold one batch into the running amax.  Not thread-safe per instance."""
        x = np.asarray(x, dtype=F32)
        check_finite(x, f"observation at {self.site}")
        if self.dim is None:
            self.running_amax = np.maximum(self.running_amax, np.abs(x).max(initial=0.0))
        else:
            if x.shape[-1] != self.dim:
                raise ShapeError(
                    f"{self.site}: expected feature dim {self.dim}, got {x.shape}"
                )
            cols = np.abs(x.reshape(-1, self.dim)).max(axis=0, initial=0.0)
            self.running_amax = np.maximum(self.running_amax, cols).astype(F32)
        self.batches += 1
        return self

    def merge(self, other: "Observer") -> "Observer":
        """Element-wise max merge, so batches may be observed in parallel."""
        if other.site != self.site or other.dim != self.dim:
            raise InputError(f"cannot merge observers {self.site} and {other.site}")
        self.running_amax = np.maximum(self.running_amax, other.running_amax)
        self.batches += other.batches
        return self


class ObserverBank:
    """All observers for one calibration run, keyed by site id."""

    def __init__(self, n_layers: int, d_model: int, d_ff: int):
        self.observers: dict[str, Observer] = {}
        for k in range(n_layers):
            for sym in SCALAR_SYMBOLS:
                self.observers[site_id(k, sym)] = Observer(site_id(k, sym))
            for sym in ("S_attn", "S_o", "S_x2"):
                self.observers[site_id(k, sym)] = Observer(site_id(k, sym), d_model)
            self.observers[site_id(k, "S_a")] = Observer(site_id(k, "S_a"), d_ff)
        self.observers[EMB_HINT_SITE] = Observer(EMB_HINT_SITE)

    def observe(self, site: str, x: np.ndarray) -> None:
        self.observers[site].observe(x)


@dataclass
class CalibrationTable:
    """Resolved scales per site, plus run metadata."""

    sites: dict[str, np.ndarray | float]
    meta: dict = field(default_factory=dict)

    def scalar(self, sid: str) -> np.float32:
        v = self._get(sid)
        if np.ndim(v) != 0:
            raise CalibrationError(f"site {sid} holds a vector, expected a scalar")
        return F32(v)

    def vector(self, sid: str, dim: int) -> np.ndarray:
        v = np.asarray(self._get(sid), dtype=F32)
        if v.shape != (dim,):
            raise CalibrationError(f"site {sid} has shape {v.shape}, expected ({dim},)")
        return v

    def _get(self, sid: str):
        if sid not in self.sites:
            raise CalibrationError(f"missing calibration site: {sid}")
        return self.sites[sid]

    def require(self, site_ids: list[str]) -> None:
        missing = sorted(s for s in site_ids if s not in self.sites)
        if missing:
            raise CalibrationError("missing calibration sites: " + ", ".join(missing))

    def to_json(self) -> str:
        sites = {}
        for sid in sorted(self.sites):
            v = self.sites[sid]
            if np.ndim(v) == 0:
                sites[sid] = float(v)
            else:
                sites[sid] = [float(x) for x in np.asarray(v)]
        doc = {"meta": self.meta, "sites": sites}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationTable":
        doc = json.loads(text)
        sites: dict[str, np.ndarray | float] = {}
        for sid, v in doc.get("sites", {}).items():
            if isinstance(v, list):
                sites[sid] = np.asarray(v, dtype=F32)
            else:
                sites[sid] = float(v)
        table = cls(sites=sites, meta=doc.get("meta", {}))
        for sid, v in table.sites.items():
            if np.any(np.asarray(v) <= 0):
                raise CalibrationError(f"non-positive scale at site {sid}")
        return table


def finalize(
    observers: dict[str, Observer] | ObserverBank,
    required: list[str] | None = None,
    meta: dict | None = None,
) -> CalibrationTable:
    """Resolve observed amax statistics into scales.

    Signed sites map amax -> amax/127, the softmax site amax -> amax/255.
    A site that never saw data falls back to scale 1.0; the softmax site
    falls back to its natural upper bound amax=1.0, i.e. scale 1/255.
    """
    if isinstance(observers, ObserverBank):
        observers = observers.observers
    if required is not None:
        missing = sorted(s for s in required if s not in observers)
        if missing:
            raise CalibrationError("missing required sites: " + ", ".join(missing))

    sites: dict[str, np.ndarray | float] = {}
    for sid, obs in observers.items():
        amax = obs.running_amax
        if is_u8_site(sid):
            a = float(amax) if obs.dim is None else amax
            if obs.batches == 0 or np.all(np.asarray(a) == 0):
                a = 1.0  # softmax upper bound
            sites[sid] = F32(a) / F32(255.0)
        elif obs.dim is None:
            sites[sid] = compute_site_scale(float(amax))
        else:
            sites[sid] = np.where(amax > 0, amax / F32(127.0), F32(1.0)).astype(F32)
    return CalibrationTable(sites=sites, meta=dict(meta or {}))


def compute_site_scale(amax: float) -> np.float32:
    if amax < 0:
        raise InputError(f"negative amax {amax}")
    if amax == 0:
        return F32(1.0)
    return F32(amax) / F32(127.0)
