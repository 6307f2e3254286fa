"""
LPCC front-end.

Turns an 8 kHz mono signal into one cepstral vector per retained frame:
pre-emphasis, Hamming-windowed framing, relative energy gating,
autocorrelation, Levinson-Durbin and the LPC to cepstrum recursion.

The analysis functions take either a single frame (1-D) or a stack of
frames with the frame axis first, so whole utterances are processed
without a Python loop over frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal

from speakerid.errors import DegenerateFrameError, InvalidInputError

logger = logging.getLogger(__name__)

ANALYSIS_SAMPLE_RATE = 8000

# LPCC dimension per classifier: 16 for VQ, 20 for covariance matrices
CLASSIFIER_ORDERS = {"vq": 16, "cm": 20}


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono signal with its sampling rate; samples are finite floats."""

    samples: np.ndarray
    sample_rate_hz: int = ANALYSIS_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"audio must be mono (1-D), got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            bad = int(np.count_nonzero(~np.isfinite(samples)))
            raise InvalidInputError(f"audio contains {bad} non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


class FrontendConfig(BaseModel):
    """Analysis parameters. ``lpc_order`` is P, ``cepstrum_order`` is Q."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    preemphasis: float = Field(0.95, ge=0.0, lt=1.0)
    frame_len: int = Field(240, gt=0)
    frame_shift: int = Field(80, gt=0)
    lpc_order: int = Field(16, ge=1)
    cepstrum_order: int = Field(16, ge=1)
    energy_floor_db: float = Field(30.0, gt=0.0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "FrontendConfig":
        if self.frame_shift > self.frame_len:
            raise ValueError(f"frame_shift ({self.frame_shift}) exceeds frame_len ({self.frame_len})")
        if self.cepstrum_order < self.lpc_order:
            raise ValueError(
                f"cepstrum_order ({self.cepstrum_order}) must be >= lpc_order ({self.lpc_order})"
            )
        if self.lpc_order >= self.frame_len:
            raise ValueError(f"lpc_order ({self.lpc_order}) must be below frame_len ({self.frame_len})")
        return self

    @classmethod
    def for_classifier(cls, kind: Literal["vq", "cm"], **overrides: Any) -> "FrontendConfig":
        """Preset with P = Q = 16 for VQ and P = Q = 20 for covariance models."""
        if kind not in CLASSIFIER_ORDERS:
            raise InvalidInputError(f"unknown classifier kind {kind!r}")
        order = CLASSIFIER_ORDERS[kind]
        values = {"lpc_order": order, "cepstrum_order": order}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """T x Q cepstral vectors of one utterance.

    ``first_index`` is the cepstral index n of column 0 (1 for c_1..c_Q,
    3 once the first two coefficients are dropped). ``lpc`` keeps the
    per-frame predictor coefficients of the same retained frames.
    """

    vectors: np.ndarray
    meta: dict = field(default_factory=dict)
    lpc: np.ndarray | None = None
    first_index: int = 1
    chain: str = "LPCC"
    dropped: int = 0
    gated: int = 0

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise InvalidInputError(f"feature vectors must be a T x Q matrix, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise InvalidInputError("feature vectors contain non-finite values")
        object.__setattr__(self, "vectors", vectors)
        if self.lpc is not None:
            lpc = np.asarray(self.lpc, dtype=np.float64)
            if lpc.ndim != 2 or lpc.shape[0] != vectors.shape[0]:
                raise InvalidInputError(
                    f"lpc matrix shape {lpc.shape} does not match {vectors.shape[0]} frames"
                )
            object.__setattr__(self, "lpc", lpc)

    @property
    def num_frames(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def indices(self) -> np.ndarray:
        """Cepstral index n of every column."""
        return np.arange(self.first_index, self.first_index + self.dim)

    def with_vectors(self, vectors: np.ndarray, **changes: Any) -> "FeatureSequence":
        return replace(self, vectors=vectors, **changes)

    @classmethod
    def concat(cls, sequences: Iterable["FeatureSequence"]) -> "FeatureSequence":
        """Stack the frames of several sequences of the same kind."""
        sequences = list(sequences)
        if not sequences:
            raise InvalidInputError("nothing to concatenate")
        head = sequences[0]
        for seq in sequences[1:]:
            if seq.dim != head.dim or seq.first_index != head.first_index or seq.chain != head.chain:
                raise InvalidInputError("cannot concatenate sequences of different dimension or chain")
        lpc = None
        if all(seq.lpc is not None for seq in sequences):
            lpc = np.vstack([seq.lpc for seq in sequences])
        return replace(
            head,
            vectors=np.vstack([seq.vectors for seq in sequences]),
            lpc=lpc,
            dropped=sum(seq.dropped for seq in sequences),
            gated=sum(seq.gated for seq in sequences),
        )


def as_clip(x: AudioClip | np.ndarray | list, sample_rate_hz: int = ANALYSIS_SAMPLE_RATE) -> AudioClip:
    if isinstance(x, AudioClip):
        return x
    return AudioClip(np.asarray(x, dtype=np.float64), sample_rate_hz)


def preemphasize(x: AudioClip | np.ndarray, coeff: float = 0.95) -> AudioClip:
    """y[0] = x[0], y[n] = x[n] - coeff * x[n-1]."""
    if not 0.0 <= coeff < 1.0:
        raise InvalidInputError(f"pre-emphasis coefficient must lie in [0, 1), got {coeff}")
    clip = as_clip(x)
    emphasized = signal.lfilter([1.0, -coeff], [1.0], clip.samples)
    return AudioClip(emphasized, clip.sample_rate_hz)


def hamming(length: int) -> np.ndarray:
    """Symmetric Hamming window, 0.54 - 0.46 cos(2 pi n / (N - 1))."""
    return signal.get_window("hamming", length, fftbins=False)


def frame_count(length: int, frame_len: int, frame_shift: int) -> int:
    if length < frame_len:
        return 0
    return (length - frame_len) // frame_shift + 1


def frame_and_window(x: AudioClip | np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Split into overlapping frames, each multiplied by the Hamming window.

    Returns an (n_frames, frame_len) array; a signal shorter than one frame
    gives zero frames.
    """
    clip = as_clip(x)
    if len(clip) < cfg.frame_len:
        logger.warning("signal of %d samples is shorter than one frame (%d)", len(clip), cfg.frame_len)
        return np.empty((0, cfg.frame_len))
    frames = sliding_window_view(clip.samples, cfg.frame_len)[:: cfg.frame_shift]
    return frames * hamming(cfg.frame_len)


def frame_energy_db(frames: np.ndarray) -> np.ndarray:
    """10 log10 of each frame's energy; silent frames give -inf."""
    energy = np.sum(np.square(frames), axis=-1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy)


def energy_mask(frames: np.ndarray, floor_db: float = 30.0) -> np.ndarray:
    """Boolean mask of frames within ``floor_db`` of the loudest frame."""
    if floor_db <= 0:
        raise InvalidInputError(f"energy floor must be positive, got {floor_db}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    level = frame_energy_db(frames)
    peak = level.max()
    if not np.isfinite(peak):
        logger.warning("all %d frames are silent, nothing retained", frames.shape[0])
        return np.zeros(frames.shape[0], dtype=bool)
    return level > peak - floor_db


def energy_gate(frames: np.ndarray, floor_db: float = 30.0) -> np.ndarray:
    """Keep frames whose energy is within ``floor_db`` of the loudest, in order."""
    frames = np.asarray(frames, dtype=np.float64)
    return frames[energy_mask(frames, floor_db)]


def autocorrelation(frame: np.ndarray, order: int) -> np.ndarray:
    """Biased autocorrelation r[0..order] (last axis is time)."""
    frame = np.asarray(frame, dtype=np.float64)
    length = frame.shape[-1]
    if order < 0 or length <= order:
        raise InvalidInputError(f"frame of {length} samples is too short for order {order}")
    r = np.stack(
        [np.sum(frame[..., : length - k] * frame[..., k:], axis=-1) for k in range(order + 1)],
        axis=-1,
    )
    if frame.ndim == 1 and r[0] <= 0.0:
        raise DegenerateFrameError("silent frame: r[0] = 0")
    return r


def levinson_frames(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Levinson-Durbin over a stack of autocorrelation rows.

    Returns (a, residual, ok): ``a`` holds a_1..a_P of A(z) = 1 + sum a_k z^-k
    per row, ``ok`` flags rows whose recursion stayed positive definite. Rows
    that fail are frozen at the last valid stage and must be discarded.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    n_rows, width = r.shape
    order = width - 1
    a = np.zeros((n_rows, order + 1))
    a[:, 0] = 1.0
    residual = r[:, 0].copy()
    ok = residual > 0.0
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", a[:, 1:i], r[:, i - 1 : 0 : -1])
        k = -acc / np.where(ok, residual, 1.0)
        ok &= np.abs(k) < 1.0
        k = np.where(ok, k, 0.0)
        previous = a[:, :i].copy()
        a[:, 1 : i + 1] += k[:, None] * previous[:, ::-1]
        residual = residual * (1.0 - k * k)
        ok &= residual > 0.0
    return a[:, 1:], residual, ok


def levinson(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve the normal equations of one frame: (a_1..a_P, residual energy)."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.size < 1:
        raise InvalidInputError("levinson expects a 1-D autocorrelation r[0..P]")
    if r[0] <= 0.0:
        raise DegenerateFrameError(f"r[0] = {r[0]!r}: silent or invalid frame")
    a, residual, ok = levinson_frames(r[None, :])
    if not ok[0]:
        raise DegenerateFrameError("autocorrelation is not positive definite")
    return a[0], float(residual[0])


def lpc_to_lpcc(a: np.ndarray, order: int) -> np.ndarray:
    """Cepstrum c_1..c_Q of 1/A(z) from a_1..a_P (gain term excluded).

    c_n = -a_n - (1/n) sum_{k=max(1,n-P)}^{n-1} k c_k a_{n-k}, with a_n = 0
    for n > P. Accepts one coefficient vector or a stack of them.
    """
    if order < 1:
        raise InvalidInputError(f"cepstrum order must be >= 1, got {order}")
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    a = a.reshape(1, -1) if single else a
    n_rows, lpc_order = a.shape
    c = np.zeros((n_rows, order))
    for n in range(1, order + 1):
        value = -a[:, n - 1] if n <= lpc_order else np.zeros(n_rows)
        # column-wise accumulation keeps each row independent of the batch size
        for k in range(max(1, n - lpc_order), n):
            value = value - k * c[:, k - 1] * a[:, n - k - 1] / n
        c[:, n - 1] = value
    return c[0] if single else c


def extract(
    x: AudioClip | np.ndarray,
    cfg: FrontendConfig | None = None,
    meta: dict | None = None,
) -> FeatureSequence:
    """Full LPCC analysis of one utterance.

    Frames failing the Levinson recursion are dropped and counted; an
    utterance with no surviving frame gives an empty sequence.
    """
    cfg = cfg or FrontendConfig()
    clip = as_clip(x)
    if clip.sample_rate_hz != ANALYSIS_SAMPLE_RATE:
        raise InvalidInputError(
            f"front-end expects {ANALYSIS_SAMPLE_RATE} Hz audio, got {clip.sample_rate_hz} Hz"
        )

    frames = frame_and_window(preemphasize(clip, cfg.preemphasis), cfg)
    kept = energy_gate(frames, cfg.energy_floor_db)
    gated = frames.shape[0] - kept.shape[0]
    if kept.shape[0] == 0:
        return FeatureSequence(
            vectors=np.empty((0, cfg.cepstrum_order)),
            lpc=np.empty((0, cfg.lpc_order)),
            meta=dict(meta or {}),
            gated=gated,
        )

    a, _, ok = levinson_frames(autocorrelation(kept, cfg.lpc_order))
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        logger.warning("dropped %d degenerate frames out of %d", dropped, kept.shape[0])
    lpc = a[ok]
    logger.debug(
        "extracted %d frames (%d gated, %d degenerate) from %.2f s",
        lpc.shape[0], gated, dropped, clip.duration_s,
    )
    return FeatureSequence(
        vectors=lpc_to_lpcc(lpc, cfg.cepstrum_order).reshape(lpc.shape[0], cfg.cepstrum_order),
        lpc=lpc,
        meta=dict(meta or {}),
        dropped=dropped,
        gated=gated,
    )
