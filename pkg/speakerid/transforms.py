"""
Cepstral parameterizations and their combinations.

Every transform maps a FeatureSequence to a FeatureSequence with the same
frames. Weightings use the true cepstral index n of each column, so they
stay correct after the first two coefficients are dropped.

Combined names ("CMS+ACW+SIGMA", "CMS-LW") are read as sequential
composition in the listed order, except that ACW is always computed
first: it is re-derived from the LPC polynomial of each frame, not from
cepstra.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from speakerid.errors import ChainError, InsufficientDataError, InvalidInputError
from speakerid.frontend import FeatureSequence, lpc_to_lpcc

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8

# Rows of the standard comparison tables, in table order
TABLE_CHAINS = (
    "LPCC",
    "LPCC3P",
    "SIGMA",
    "ACW",
    "CMS",
    "CMS+ACW",
    "CMS+ACW+SIGMA",
    "CMS+SIGMA",
    "CMS-LW",
    "ACW+SIGMA",
    "PF",
    "CMS+PF",
    "CMS+PF+SIGMA",
)


class StepKind(str, Enum):
    DROP_LOW2 = "LPCC3P"
    CMS = "CMS"
    ACW = "ACW"
    LW = "LW"
    BPL = "BPL"
    SIGMA = "SIGMA"
    PF = "PF"


class PostfilterParams(BaseModel):
    """Postfilter weights alpha^n - beta^n, 0 < beta < alpha <= 1."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(1.0, gt=0.0, le=1.0)
    beta: float = Field(0.9, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _alpha_above_beta(self) -> "PostfilterParams":
        if not self.alpha > self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be greater than beta ({self.beta})")
        return self


@dataclass(frozen=True, eq=False)
class SigmaWeights:
    """Inverse per-coefficient standard deviations w_n = 1 / sigma_n."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise InvalidInputError("sigma weights must be a vector of finite positive values")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class Step:
    kind: StepKind
    lifter_length: int | None = None
    lifter_height: float | None = None
    postfilter: PostfilterParams | None = None
    sigma: SigmaWeights | None = None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value}
        if self.lifter_length is not None:
            data["lifter_length"] = self.lifter_length
        if self.lifter_height is not None:
            data["lifter_height"] = self.lifter_height
        if self.postfilter is not None:
            data["postfilter"] = self.postfilter.model_dump()
        if self.sigma is not None:
            data["sigma"] = self.sigma.w.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Step":
        try:
            kind = StepKind(data["kind"])
        except (KeyError, ValueError) as exc:
            raise ChainError(f"invalid transform step {data!r}") from exc
        postfilter = data.get("postfilter")
        sigma = data.get("sigma")
        return cls(
            kind=kind,
            lifter_length=data.get("lifter_length"),
            lifter_height=data.get("lifter_height"),
            postfilter=PostfilterParams(**postfilter) if postfilter is not None else None,
            sigma=SigmaWeights(np.asarray(sigma, dtype=np.float64)) if sigma is not None else None,
        )


_TOKENS = {
    "LPCC3P": StepKind.DROP_LOW2,
    "CMS": StepKind.CMS,
    "ACW": StepKind.ACW,
    "LW": StepKind.LW,
    "BPL": StepKind.BPL,
    "SIGMA": StepKind.SIGMA,
    "PF": StepKind.PF,
}


@dataclass(frozen=True, eq=False)
class TransformChain:
    """Ordered parameterization steps, labelled with the name they came from."""

    steps: tuple[Step, ...] = ()
    name: str = "LPCC"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        acw_positions = [i for i, step in enumerate(self.steps) if step.kind is StepKind.ACW]
        if len(acw_positions) > 1:
            raise ChainError(f"{self.name}: ACW may appear only once")
        if acw_positions and acw_positions[0] != 0:
            raise ChainError(f"{self.name}: ACW must be the first step")

    @classmethod
    def parse(cls, name: str) -> "TransformChain":
        """Build a chain from a parameterization name such as ``CMS+ACW+SIGMA``."""
        label = name.strip()
        text = re.sub(r"\s+", "", label).replace("σ", "SIGMA").replace("Σ", "SIGMA").upper()
        text = re.sub(r"LPCC_?\{?3(\.\.|,)?P\}?", "LPCC3P", text)
        tokens = [token for token in re.split(r"[+-]", text) if token]
        if not tokens:
            raise ChainError(f"empty parameterization name {name!r}")

        steps = []
        for token in tokens:
            if token == "LPCC":
                continue
            if token not in _TOKENS:
                raise ChainError(f"unknown parameterization {token!r} in {name!r}")
            steps.append(Step(_TOKENS[token]))

        acw = [step for step in steps if step.kind is StepKind.ACW]
        rest = [step for step in steps if step.kind is not StepKind.ACW]
        if len(acw) > 1:
            raise ChainError(f"{name}: ACW may appear only once")
        return cls(steps=tuple(acw + rest), name=label)

    @property
    def needs_lpc(self) -> bool:
        return bool(self.steps) and self.steps[0].kind is StepKind.ACW

    @property
    def is_fitted(self) -> bool:
        return all(step.sigma is not None for step in self.steps if step.kind is StepKind.SIGMA)

    def fit(self, training: Sequence[FeatureSequence]) -> "TransformChain":
        """Fit every sigma step on the output of the steps before it."""
        current = list(training)
        fitted = []
        for step in self.steps:
            if step.kind is StepKind.SIGMA and step.sigma is None:
                step = replace(step, sigma=sigma_fit(current))
            fitted.append(step)
            current = [_apply_step(step, seq) for seq in current]
        return replace(self, steps=tuple(fitted))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "steps": [step.to_dict() for step in self.steps]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TransformChain":
        return cls(
            steps=tuple(Step.from_dict(step) for step in data.get("steps", [])),
            name=data.get("name", "LPCC"),
        )


def drop_low2(seq: FeatureSequence) -> FeatureSequence:
    """Remove the first two cepstral coefficients (LPCC_3..P)."""
    if seq.dim < 3:
        raise InvalidInputError(f"need at least 3 coefficients to drop two, got {seq.dim}")
    return seq.with_vectors(seq.vectors[:, 2:], first_index=seq.first_index + 2)


def cms(seq: FeatureSequence) -> FeatureSequence:
    """Cepstral mean subtraction over the utterance."""
    if seq.num_frames == 0:
        logger.warning("cepstral mean subtraction on an empty sequence")
        return seq
    return seq.with_vectors(seq.vectors - seq.vectors.mean(axis=0))


def _companion_roots(lpc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Roots of A(z) for every row, with a per-row success flag."""
    n_rows, order = lpc.shape
    companion = np.zeros((n_rows, order, order))
    companion[:, 0, :] = -lpc
    below = np.arange(order - 1)
    companion[:, below + 1, below] = 1.0
    try:
        poles = np.linalg.eigvals(companion)
        ok = np.ones(n_rows, dtype=bool)
    except np.linalg.LinAlgError:
        poles = np.zeros((n_rows, order), dtype=complex)
        ok = np.zeros(n_rows, dtype=bool)
        for row in range(n_rows):
            try:
                poles[row] = np.linalg.eigvals(companion[row])
                ok[row] = True
            except np.linalg.LinAlgError:
                pass
    ok &= np.all(np.isfinite(poles), axis=1) & np.all(np.abs(poles) < 1.0, axis=1)
    return poles, ok


def acw_cepstra(lpc: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """ACW cepstra of a stack of LPC vectors, plus the rows that succeeded.

    H(z) = N(z)/A(z) with N(z) = sum_i A(z)/(1 - p_i z^-1); the cepstrum of
    1/A comes from the LPCC recursion and the cepstrum of the monic N/P is
    subtracted as that of an all-zero polynomial.
    """
    lpc = np.atleast_2d(np.asarray(lpc, dtype=np.float64))
    n_rows, lpc_order = lpc.shape
    if n_rows == 0:
        return np.empty((0, order)), np.zeros(0, dtype=bool)

    poles, ok = _companion_roots(lpc)
    poles = np.where(ok[:, None], poles, 0.0)
    full = np.concatenate([np.ones((n_rows, 1)), lpc], axis=1)

    # Synthetic division of A(z) by (1 - p_i z^-1) for every pole at once
    quotients = np.empty((n_rows, lpc_order, lpc_order), dtype=complex)
    quotients[:, :, 0] = 1.0
    for k in range(1, lpc_order):
        quotients[:, :, k] = full[:, k, None] + poles * quotients[:, :, k - 1]
    numerator = quotients.mean(axis=1)[:, 1:]

    leak = np.max(np.abs(numerator.imag), axis=1, initial=0.0)
    ok &= leak < 1e-8
    cepstra = lpc_to_lpcc(lpc, order) - lpc_to_lpcc(numerator.real, order)
    cepstra = cepstra.reshape(n_rows, order)
    return cepstra, ok


def acw(lpc_per_frame: np.ndarray | Iterable[np.ndarray], order: int, meta: dict | None = None) -> FeatureSequence:
    """Adaptive component weighted cepstrum from per-frame LPC vectors."""
    lpc = np.asarray(list(lpc_per_frame) if not isinstance(lpc_per_frame, np.ndarray) else lpc_per_frame,
                     dtype=np.float64)
    if lpc.ndim == 1:
        lpc = lpc.reshape(1, -1) if lpc.size else np.empty((0, 0))
    cepstra, ok = acw_cepstra(lpc, order)
    failed = int(np.count_nonzero(~ok))
    if failed:
        logger.warning("ACW: dropped %d frames whose poles could not be found", failed)
    return FeatureSequence(
        vectors=cepstra[ok].reshape(-1, order),
        lpc=lpc[ok] if lpc.shape[0] else None,
        meta=dict(meta or {}),
        dropped=failed,
    )


def linear_weight(seq: FeatureSequence) -> FeatureSequence:
    """c'_n = n c_n."""
    return seq.with_vectors(seq.vectors * seq.indices)


def bandpass_lifter(seq: FeatureSequence, L: int | None = None, h: float | None = None) -> FeatureSequence:
    """c'_n = (1 + (h/2) sin(pi n / L)) c_n, with L = h = Q by default."""
    indices = seq.indices
    length = int(L) if L is not None else int(indices[-1]) if indices.size else seq.dim
    height = float(h) if h is not None else float(length)
    if length < 1:
        raise InvalidInputError(f"lifter length must be positive, got {length}")
    if indices.size and indices[-1] > length:
        raise InvalidInputError(f"lifter length {length} is shorter than the cepstral index {indices[-1]}")
    weights = 1.0 + 0.5 * height * np.sin(np.pi * indices / length)
    return seq.with_vectors(seq.vectors * weights)


def sigma_fit(corpus: Sequence[FeatureSequence]) -> SigmaWeights:
    """Inverse pooled standard deviation of every coefficient over a corpus."""
    corpus = list(corpus)
    if not corpus:
        raise InvalidInputError("cannot fit sigma weights on an empty corpus")
    dims = {seq.dim for seq in corpus}
    if len(dims) != 1:
        raise InvalidInputError(f"corpus mixes feature dimensions {sorted(dims)}")
    pooled = np.vstack([seq.vectors for seq in corpus])
    if pooled.shape[0] < 2:
        raise InsufficientDataError("sigma fit frames", 2, pooled.shape[0])
    sigma = pooled.std(axis=0)
    return SigmaWeights(1.0 / np.maximum(sigma, SIGMA_FLOOR))


def sigma_apply(seq: FeatureSequence, weights: SigmaWeights) -> FeatureSequence:
    if weights.w.size != seq.dim:
        raise InvalidInputError(f"sigma weights have {weights.w.size} entries, features have {seq.dim}")
    return seq.with_vectors(seq.vectors * weights.w)


def postfilter_weight(seq: FeatureSequence, params: PostfilterParams | None = None) -> FeatureSequence:
    """c'_n = (alpha^n - beta^n) c_n."""
    params = params or PostfilterParams()
    n = seq.indices
    return seq.with_vectors(seq.vectors * (params.alpha ** n - params.beta ** n))


def _apply_step(step: Step, seq: FeatureSequence) -> FeatureSequence:
    kind = step.kind
    if kind is StepKind.ACW:
        if seq.chain == "ACW":
            return seq
        if seq.lpc is None:
            raise ChainError("ACW needs the per-frame LPC coefficients of the utterance")
        if seq.first_index != 1:
            raise ChainError("ACW must be applied to raw LPCC sequences")
        out = acw(seq.lpc, seq.dim, meta=seq.meta)
        return replace(seq, vectors=out.vectors, lpc=out.lpc, dropped=seq.dropped + out.dropped)
    if kind is StepKind.DROP_LOW2:
        return drop_low2(seq)
    if kind is StepKind.CMS:
        return cms(seq)
    if kind is StepKind.LW:
        return linear_weight(seq)
    if kind is StepKind.BPL:
        return bandpass_lifter(seq, step.lifter_length, step.lifter_height)
    if kind is StepKind.PF:
        return postfilter_weight(seq, step.postfilter)
    if kind is StepKind.SIGMA:
        if step.sigma is None:
            raise ChainError("sigma step has no fitted weights; fit the chain on training data first")
        return sigma_apply(seq, step.sigma)
    raise ChainError(f"unsupported step {kind}")


def apply_chain(
    chain: TransformChain,
    data: FeatureSequence | np.ndarray | Sequence[np.ndarray],
    order: int | None = None,
) -> FeatureSequence:
    """Apply every step of ``chain`` in order.

    ``data`` is an LPCC FeatureSequence (ACW chains need its ``lpc``) or,
    for ACW chains, the per-frame LPC vectors themselves together with the
    cepstral ``order``. ACW chains also accept the output of the bare
    ``ACW`` chain, so the pole analysis of an utterance can be shared.
    """
    if isinstance(data, FeatureSequence):
        seq = data
        shared_acw = seq.chain == "ACW" and chain.needs_lpc
        if not shared_acw and (seq.chain != "LPCC" or seq.first_index != 1):
            raise ChainError(f"sequence was already transformed by {seq.chain!r}")
    else:
        if not chain.needs_lpc or order is None:
            raise ChainError("raw LPC input is only accepted by ACW chains with an explicit order")
        seq = acw(data, order)
        chain = replace(chain, steps=chain.steps[1:])
        for step in chain.steps:
            seq = _apply_step(step, seq)
        return replace(seq, chain=chain.name)

    for step in chain.steps:
        seq = _apply_step(step, seq)
    return replace(seq, chain=chain.name)
