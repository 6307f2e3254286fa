"""
Speaker models and scoring.

Two classifiers are available: a VQ codebook built with the random method
(codewords are training frames drawn without replacement) scored by the
average nearest-codeword distortion, and a covariance matrix per speaker
compared with the arithmetic-harmonic sphericity measure. Lower scores
mean better matches for both.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Literal, Sequence

import faiss
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from speakerid.errors import (
    DimensionMismatchError,
    InsufficientDataError,
    InvalidInputError,
    SingularCovarianceError,
)
from speakerid.frontend import CLASSIFIER_ORDERS, FeatureSequence, FrontendConfig
from speakerid.transforms import TransformChain

logger = logging.getLogger(__name__)

ModelKind = Literal["vq", "cm"]
SphericityForm = Literal["halved", "product", "standard"]

RELATIVE_RIDGE = 1e-6
# Nearest neighbours re-scored in float64 after the float32 index search
RERANK_CANDIDATES = 4
FLOAT32_SEARCH_SLACK = 16 * float(np.finfo(np.float32).eps)


class ClassifierConfig(BaseModel):
    """Classifier choice plus the front-end settings it implies."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ModelKind = "vq"
    bits: int = Field(6, ge=0, le=12)
    order: int | None = Field(None, ge=1)
    ridge: float | None = Field(None, ge=0.0)
    preemphasis: float | None = Field(None, ge=0.0, lt=1.0)
    frame_len: int | None = Field(None, gt=0)
    frame_shift: int | None = Field(None, gt=0)
    energy_floor_db: float | None = Field(None, gt=0.0)

    @property
    def effective_order(self) -> int:
        return self.order if self.order is not None else CLASSIFIER_ORDERS[self.kind]

    def frontend_config(self) -> FrontendConfig:
        return FrontendConfig.for_classifier(
            self.kind,
            lpc_order=self.effective_order,
            cepstrum_order=self.effective_order,
            preemphasis=self.preemphasis,
            frame_len=self.frame_len,
            frame_shift=self.frame_shift,
            energy_floor_db=self.energy_floor_db,
        )


def _vectors(features: FeatureSequence | np.ndarray) -> np.ndarray:
    if isinstance(features, FeatureSequence):
        return features.vectors
    vectors = np.asarray(features, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidInputError(f"expected a T x Q feature matrix, got shape {vectors.shape}")
    return vectors


@dataclass(frozen=True, eq=False)
class VqCodebook:
    codewords: np.ndarray
    bits: int
    seed: int

    def __post_init__(self):
        codewords = np.asarray(self.codewords, dtype=np.float64)
        if codewords.ndim != 2 or codewords.shape[0] != 2 ** self.bits:
            raise InvalidInputError(
                f"codebook of {self.bits} bits needs {2 ** self.bits} codewords, got shape {codewords.shape}"
            )
        object.__setattr__(self, "codewords", codewords)

    @property
    def size(self) -> int:
        return int(self.codewords.shape[0])

    @property
    def dim(self) -> int:
        return int(self.codewords.shape[1])

    @cached_property
    def centre(self) -> np.ndarray:
        return self.codewords.mean(axis=0)

    @cached_property
    def spread(self) -> float:
        """Largest squared norm of a centred codeword."""
        centred = self.codewords - self.centre
        return float(np.einsum("kq,kq->k", centred, centred).max())

    @cached_property
    def index(self) -> faiss.IndexFlatL2:
        """Search index over the codewords, centred so float32 keeps their differences."""
        index = faiss.IndexFlatL2(self.dim)
        index.add(np.ascontiguousarray(self.codewords - self.centre, dtype="float32"))
        return index

    def to_dict(self) -> dict[str, Any]:
        return {"bits": self.bits, "seed": self.seed, "codewords": self.codewords.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VqCodebook":
        return cls(np.asarray(data["codewords"], dtype=np.float64), int(data["bits"]), int(data["seed"]))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    C: np.ndarray
    mean: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise InvalidInputError(f"covariance must be square, got shape {C.shape}")
        if np.max(np.abs(C - C.T), initial=0.0) >= 1e-12:
            raise InvalidInputError("covariance matrix is not symmetric")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.C.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {"ridge": self.ridge, "mean": self.mean.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CovarianceModel":
        return cls(np.asarray(data["C"], dtype=np.float64), np.asarray(data["mean"], dtype=np.float64),
                   float(data["ridge"]))


@dataclass(frozen=True, eq=False)
class SpeakerModel:
    """An enrolled speaker: label, classifier payload and the chain used."""

    id: str
    kind: ModelKind
    payload: VqCodebook | CovarianceModel
    chain: TransformChain = field(default_factory=TransformChain)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    test_ridge: float | None = None

    @property
    def dim(self) -> int:
        return self.payload.dim


def train_vq_random(features: FeatureSequence | np.ndarray, bits: int, seed: int) -> VqCodebook:
    """Codebook of 2**bits training frames drawn uniformly without replacement."""
    if bits < 0:
        raise InvalidInputError(f"codebook bits must be >= 0, got {bits}")
    vectors = _vectors(features)
    size = 2 ** bits
    if vectors.shape[0] < size:
        raise InsufficientDataError(f"{bits}-bit codebook training frames", size, vectors.shape[0])
    rng = np.random.default_rng(seed)
    rows = rng.choice(vectors.shape[0], size=size, replace=False)
    return VqCodebook(vectors[rows].copy(), bits, seed)


def vq_score(cb: VqCodebook, seq: FeatureSequence | np.ndarray) -> float:
    """Average squared Euclidean distance of every frame to its nearest codeword."""
    vectors = _vectors(seq)
    if vectors.shape[1] != cb.dim:
        raise DimensionMismatchError(f"features have {vectors.shape[1]} dims, codebook has {cb.dim}")
    if vectors.shape[0] == 0:
        raise InsufficientDataError("test frames", 1, 0)

    k = min(RERANK_CANDIDATES, cb.size)
    centred = vectors - cb.centre
    approx, candidates = cb.index.search(np.ascontiguousarray(centred, dtype="float32"), k)
    diffs = vectors[:, None, :] - cb.codewords[candidates]
    distortion = np.einsum("tkq,tkq->tk", diffs, diffs).min(axis=1)

    # float32 cannot order candidates closer than its rounding error; scan those rows exactly
    if k < cb.size:
        scale = np.einsum("tq,tq->t", centred, centred) + cb.spread
        ambiguous = np.flatnonzero(
            (candidates[:, -1] < 0) | (approx[:, -1] - approx[:, 0] <= FLOAT32_SEARCH_SLACK * scale)
        )
        if ambiguous.size:
            full = vectors[ambiguous, None, :] - cb.codewords[None, :, :]
            distortion[ambiguous] = np.einsum("tkq,tkq->tk", full, full).min(axis=1)
    return float(distortion.mean())


def train_cov(features: FeatureSequence | np.ndarray, ridge: float | None = None) -> CovarianceModel:
    """Mean-removed covariance (1/T normalization) plus ridge * I.

    ``ridge=None`` uses 1e-6 * tr(C) / Q.
    """
    vectors = _vectors(features)
    frames, dim = vectors.shape
    if frames < 2:
        raise InsufficientDataError("covariance frames", 2, frames)
    if frames < dim + 1:
        logger.warning("covariance from %d frames in %d dimensions is poorly conditioned", frames, dim)

    mean = vectors.mean(axis=0)
    centered = vectors - mean
    C = centered.T @ centered / frames
    C = 0.5 * (C + C.T)
    if ridge is None:
        ridge = RELATIVE_RIDGE * float(np.trace(C)) / dim
    if ridge < 0:
        raise InvalidInputError(f"ridge must be non-negative, got {ridge}")
    C = C + ridge * np.eye(dim)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance of {frames} frames x {dim} dims is singular with ridge {ridge:g}; "
            "use a larger ridge or more data"
        ) from exc
    return CovarianceModel(C, mean, float(ridge))


def _matrix(model: CovarianceModel | np.ndarray) -> np.ndarray:
    return model.C if isinstance(model, CovarianceModel) else np.asarray(model, dtype=np.float64)


def sphericity(
    model: CovarianceModel | np.ndarray,
    test: CovarianceModel | np.ndarray,
    form: SphericityForm = "halved",
) -> float:
    """Arithmetic-harmonic sphericity distance between two covariances.

    halved:   log(tr(C_test C_j^-1) tr(C_j C_test^-1) / 2) - 2 log P
    product:  tr(C_test C_j^-1) tr(C_j C_test^-1)
    standard: log(tr(C_test C_j^-1) tr(C_j C_test^-1) / P^2)
    All three rank candidates identically.
    """
    reference, other = _matrix(model), _matrix(test)
    if reference.shape != other.shape:
        raise DimensionMismatchError(f"covariance shapes differ: {reference.shape} vs {other.shape}")
    dim = reference.shape[0]
    try:
        forward = float(np.trace(np.linalg.solve(reference, other)))
        backward = float(np.trace(np.linalg.solve(other, reference)))
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance inversion failed") from exc

    product = forward * backward
    if form == "product":
        return product
    if form == "standard":
        return float(np.log(product / dim ** 2))
    if form == "halved":
        return float(np.log(product / 2.0) - 2.0 * np.log(dim))
    raise InvalidInputError(f"unknown sphericity form {form!r}")


def enroll(
    speaker: str,
    features: FeatureSequence,
    classifier: ClassifierConfig,
    chain: TransformChain | None = None,
    seed: int = 0,
) -> SpeakerModel:
    """Train one speaker model on features already passed through ``chain``."""
    chain = chain or TransformChain()
    if features.chain != chain.name:
        raise DimensionMismatchError(
            f"training features come from chain {features.chain!r}, expected {chain.name!r}"
        )
    if classifier.kind == "vq":
        payload: VqCodebook | CovarianceModel = train_vq_random(features, classifier.bits, seed)
    else:
        payload = train_cov(features, classifier.ridge)
    logger.debug("enrolled %s (%s, %s) on %d frames", speaker, classifier.kind, chain.name, features.num_frames)
    return SpeakerModel(
        id=speaker,
        kind=classifier.kind,
        payload=payload,
        chain=chain,
        frontend=classifier.frontend_config(),
        test_ridge=classifier.ridge,
    )


def _check_features(model: SpeakerModel, seq: FeatureSequence) -> None:
    if seq.chain != model.chain.name:
        raise DimensionMismatchError(
            f"test features come from chain {seq.chain!r}, model {model.id} expects {model.chain.name!r}"
        )
    if seq.dim != model.dim:
        raise DimensionMismatchError(f"test features have {seq.dim} dims, model {model.id} has {model.dim}")


def score_all(
    models: Sequence[SpeakerModel],
    seq: FeatureSequence,
    form: SphericityForm = "halved",
) -> np.ndarray:
    """Raw scores of one test utterance against every model (lower is better)."""
    if not models:
        raise InvalidInputError("no speaker models to score against")
    kinds = {model.kind for model in models}
    if len(kinds) != 1:
        raise InvalidInputError(f"models mix classifier kinds {sorted(kinds)}")
    for model in models:
        _check_features(model, seq)

    if models[0].kind == "vq":
        return np.array([vq_score(model.payload, seq) for model in models])
    test = train_cov(seq, models[0].test_ridge)
    return np.array([sphericity(model.payload, test, form) for model in models])


def verify_score(model: SpeakerModel, seq: FeatureSequence, form: SphericityForm = "halved") -> float:
    """Raw verification score of ``seq`` against the claimed ``model``."""
    return float(score_all([model], seq, form)[0])


def rank(labels: Sequence[str], scores: Sequence[float]) -> list[tuple[str, float]]:
    """Labels ordered by score, ties broken by label."""
    return sorted(zip(labels, (float(s) for s in scores)), key=lambda pair: (pair[1], pair[0]))


def identify(
    models: Sequence[SpeakerModel],
    seq: FeatureSequence,
    form: SphericityForm = "halved",
) -> str:
    """Closed-set identification: label of the lowest-scoring model."""
    scores = score_all(models, seq, form)
    return rank([model.id for model in models], scores)[0][0]


def model_distance(
    claimant: SpeakerModel,
    other: SpeakerModel,
    claimant_features: FeatureSequence | np.ndarray | None = None,
) -> float:
    """Distance from a claimant's model to another model, used for cohorts.

    Covariance models use the sphericity measure between the two matrices;
    VQ models score the other codebook on the claimant's training features
    (or on the claimant's codewords when no features are given).
    """
    if claimant.kind != other.kind:
        raise InvalidInputError("cannot compare models of different kinds")
    if claimant.kind == "cm":
        return sphericity(other.payload, claimant.payload)
    features = claimant_features if claimant_features is not None else claimant.payload.codewords
    return vq_score(other.payload, features)
