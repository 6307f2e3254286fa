"""
Identification and verification experiments.

A scenario selects training and test utterances from a manifest with two
pandas query expressions; ``run_experiment`` fills one cell per
(parameterization, scenario) pair with the identification rate and the
equal error rates without and with cohort normalization.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from speakerid.corpus import UtteranceRecord, decode_audio, records_frame
from speakerid.errors import ConfigError, InsufficientDataError, InvalidInputError, SpeakerIdError
from speakerid.frontend import FeatureSequence, extract
from speakerid.models import (
    ClassifierConfig,
    SpeakerModel,
    SphericityForm,
    enroll,
    model_distance,
    rank,
    score_all,
)
from speakerid.transforms import TransformChain, apply_chain

logger = logging.getLogger(__name__)

FeatureLoader = Callable[[UtteranceRecord], FeatureSequence]


@dataclass(frozen=True)
class TrialScore:
    """One verification trial: a test utterance of ``true_id`` claiming ``claimed``."""

    claimed: str
    true_id: str
    raw: float
    normalized: float | None = None

    @property
    def genuine(self) -> bool:
        return self.claimed == self.true_id


class Scenario(BaseModel):
    """Train/test selection, e.g. train on M1 and test on M3.

    ``train`` and ``test`` are pandas query expressions over the manifest
    columns; training rows are further limited to role 'train' and test
    rows to role 'test'.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    train: str = Field(min_length=1)
    test: str = Field(min_length=1)

    def _select(self, frame: pd.DataFrame, expression: str, role: str) -> pd.DataFrame:
        try:
            selected = frame.query(expression)
        except Exception as exc:
            raise ConfigError(f"scenario {self.name}: bad filter {expression!r} ({exc})") from exc
        return selected[selected["role"] == role]

    def train_rows(self, frame: pd.DataFrame) -> pd.DataFrame:
        return self._select(frame, self.train, "train")

    def test_rows(self, frame: pd.DataFrame) -> pd.DataFrame:
        return self._select(frame, self.test, "test")


def condition_scenario(train: tuple[str, str, str], test: tuple[str, str, str], name: str | None = None) -> Scenario:
    """Scenario from (session, language, microphone) triples, named like S4cM1S2cM2."""

    def query(session: str, language: str, microphone: str) -> str:
        return f"session == {session!r} and language == {language!r} and microphone == {microphone!r}"

    return Scenario(name=name or "".join(train) + "".join(test), train=query(*train), test=query(*test))


def microphone_scenarios(
    session: str = "S4",
    language: str = "c",
    microphones: Sequence[str] = ("M1", "M3"),
) -> list[Scenario]:
    """Every train/test microphone pair at a fixed session and language.

    Two microphones give the columns M1M1, M1M3, M3M3, M3M1.
    """
    mics = list(microphones)
    if len(mics) == 2:
        pairs = [(mics[0], mics[0]), (mics[0], mics[1]), (mics[1], mics[1]), (mics[1], mics[0])]
    else:
        pairs = [(a, b) for a in mics for b in mics]
    return [
        condition_scenario((session, language, a), (session, language, b), name=f"{a}{b}") for a, b in pairs
    ]


def session_scenarios(
    sessions: Sequence[str] = ("S4", "S3", "S2"),
    language: str = "c",
    microphones: Sequence[str] = ("M1", "M2", "M3"),
) -> list[Scenario]:
    """Cross-session tests, alone and combined with a microphone change."""
    if len(sessions) != 3 or len(microphones) != 3:
        raise InvalidInputError("session scenarios need three sessions and three microphones")
    ref, near, far = sessions
    m1, m2, m3 = microphones
    return [
        condition_scenario((ref, language, m1), (near, language, m1)),
        condition_scenario((ref, language, m1), (far, language, m1)),
        condition_scenario((ref, language, m1), (far, language, m2)),
        condition_scenario((far, language, m1), (ref, language, m3)),
    ]


def language_scenarios(
    sessions: Sequence[str] = ("S4", "S2"),
    languages: Sequence[str] = ("c", "s"),
    microphones: Sequence[str] | None = None,
    layout: Literal["two-mic", "three-mic"] = "two-mic",
) -> list[Scenario]:
    """Cross-language tests, alone and combined with microphone and session changes.

    ``two-mic`` trains on the first language except in its second column;
    ``three-mic`` starts from the second language and adds a column trained
    on the second microphone. The defaults give S4cM1S4sM1, S4sM1S4cM1,
    S4cM1S4sM3, S2cM1S4sM3 and S4sM1S4cM1, S4cM1S4sM1, S2sM1S4cM3,
    S2cM2S4sM3 respectively.
    """
    if microphones is None:
        microphones = ("M1", "M3") if layout == "two-mic" else ("M1", "M2", "M3")
    if len(sessions) != 2 or len(languages) != 2:
        raise InvalidInputError("language scenarios need two sessions and two languages")
    ref, other = sessions
    first, second = languages
    if layout == "two-mic":
        if len(microphones) != 2:
            raise InvalidInputError("the two-mic language layout needs two microphones")
        m1, m3 = microphones
        return [
            condition_scenario((ref, first, m1), (ref, second, m1)),
            condition_scenario((ref, second, m1), (ref, first, m1)),
            condition_scenario((ref, first, m1), (ref, second, m3)),
            condition_scenario((other, first, m1), (ref, second, m3)),
        ]
    if layout == "three-mic":
        if len(microphones) != 3:
            raise InvalidInputError("the three-mic language layout needs three microphones")
        m1, m2, m3 = microphones
        return [
            condition_scenario((ref, second, m1), (ref, first, m1)),
            condition_scenario((ref, first, m1), (ref, second, m1)),
            condition_scenario((other, second, m1), (ref, first, m3)),
            condition_scenario((other, first, m2), (ref, second, m3)),
        ]
    raise InvalidInputError(f"unknown language layout {layout!r}")


SCENARIO_PRESETS: dict[str, Callable[..., list[Scenario]]] = {
    "microphone": microphone_scenarios,
    "session": session_scenarios,
    "language": language_scenarios,
}


def scenario_preset(name: str, **options) -> list[Scenario]:
    if name not in SCENARIO_PRESETS:
        raise InvalidInputError(f"unknown scenario preset {name!r}; known: {', '.join(SCENARIO_PRESETS)}")
    return SCENARIO_PRESETS[name](**options)


def identification_rate(decisions: Iterable[tuple[str, str]], decimals: int | None = 1) -> float:
    """Percentage of (predicted, true) pairs that agree."""
    decisions = list(decisions)
    if not decisions:
        raise InvalidInputError("no identification decisions")
    correct = sum(1 for predicted, true in decisions if predicted == true)
    rate = 100.0 * correct / len(decisions)
    return rate if decimals is None else round(rate, decimals)


def select_cohort(
    models: Sequence[SpeakerModel],
    claimant: SpeakerModel | str,
    size: int,
    features: Mapping[str, FeatureSequence] | None = None,
) -> list[str]:
    """Labels of the ``size`` models closest to the claimant's model."""
    by_id = {model.id: model for model in models}
    claimed = claimant if isinstance(claimant, SpeakerModel) else by_id.get(claimant)
    if claimed is None:
        raise InvalidInputError(f"claimant {claimant!r} is not among the models")
    if size < 1:
        raise InvalidInputError(f"cohort size must be >= 1, got {size}")
    others = [model for model in models if model.id != claimed.id]
    if size > len(others):
        raise InsufficientDataError(f"cohort models for {claimed.id}", size, len(others))

    own = features.get(claimed.id) if features is not None else None
    distances = [model_distance(claimed, other, own) for other in others]
    return [label for label, _ in rank([model.id for model in others], distances)[:size]]


def normalize_score(raw: float, cohort_scores: Sequence[float]) -> float:
    """Raw score minus the mean cohort score."""
    cohort_scores = np.asarray(cohort_scores, dtype=np.float64)
    if cohort_scores.size == 0:
        raise InvalidInputError("cohort normalization needs at least one cohort score")
    return float(raw - cohort_scores.mean())


def error_rates(client: Sequence[float], impostor: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, FAR, FRR) at -inf and at every distinct score.

    A trial is accepted when its score is <= the threshold.
    """
    client = np.sort(np.asarray(client, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if client.size == 0 or impostor.size == 0:
        raise InvalidInputError("EER needs at least one client and one impostor score")
    thresholds = np.unique(np.concatenate([client, impostor]))
    far = np.searchsorted(impostor, thresholds, side="right") / impostor.size
    frr = 1.0 - np.searchsorted(client, thresholds, side="right") / client.size
    return (
        np.concatenate([[-np.inf], thresholds]),
        np.concatenate([[0.0], far]),
        np.concatenate([[1.0], frr]),
    )


def compute_eer(client: Sequence[float], impostor: Sequence[float]) -> float:
    """Equal error rate in percent (lower scores are more client-like).

    Linear interpolation between the two operating points where FAR - FRR
    changes sign.
    """
    _, far, frr = error_rates(client, impostor)
    gap = far - frr
    crossing = int(np.argmax(gap >= 0.0))
    if gap[crossing] == 0.0:
        return float(100.0 * far[crossing])
    before = crossing - 1
    t = gap[before] / (gap[before] - gap[crossing])
    return float(100.0 * (far[before] + t * (far[crossing] - far[before])))


def trials_eer(trials: Sequence[TrialScore], normalized: bool = False) -> float | None:
    """EER over pooled trials, or None without both genuine and impostor trials."""
    scores = [(t.normalized if normalized else t.raw, t.genuine) for t in trials]
    if normalized and any(score is None for score, _ in scores):
        return None
    client = [score for score, genuine in scores if genuine]
    impostor = [score for score, genuine in scores if not genuine]
    if not client or not impostor:
        return None
    return compute_eer(client, impostor)


def verification_trials(
    models: Sequence[SpeakerModel],
    tests: Sequence[tuple[str, FeatureSequence]],
    cohorts: Mapping[str, Sequence[str]] | None = None,
    form: SphericityForm = "halved",
) -> list[TrialScore]:
    """Every test utterance claims every enrolled identity."""
    labels = [model.id for model in models]
    position = {label: i for i, label in enumerate(labels)}
    trials = []
    for true_id, seq in tests:
        scores = score_all(models, seq, form)
        for claimed in labels:
            raw = float(scores[position[claimed]])
            normalized = None
            if cohorts is not None:
                normalized = normalize_score(raw, [scores[position[c]] for c in cohorts[claimed]])
            trials.append(TrialScore(claimed, true_id, raw, normalized))
    return trials


@dataclass
class CellResult:
    chain: str
    scenario: str
    rate: float | None = None
    eer: float | None = None
    eer_cohort: float | None = None
    trials: int = 0
    skipped: int = 0
    failure: str | None = None
    scores: list[TrialScore] = field(default_factory=list, repr=False)

    @property
    def failed(self) -> bool:
        return self.failure is not None


def _fmt(value: float | None, decimals: int, decimal: str) -> str:
    if value is None or not np.isfinite(value):
        return "-"
    text = f"{value:.{decimals}f}"
    return text.replace(".", decimal) if decimal != "." else text


@dataclass
class ResultTable:
    """Cells indexed by (chain, scenario); rows and columns keep their order."""

    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], CellResult]

    def cell(self, chain: str, scenario: str) -> CellResult:
        return self.cells[(chain, scenario)]

    @property
    def failed(self) -> list[CellResult]:
        return [self.cells[(r, c)] for r in self.rows for c in self.cols if self.cells[(r, c)].failed]

    def _matrix(self, attribute: str) -> pd.DataFrame:
        data = [
            [np.nan if getattr(self.cells[(r, c)], attribute) is None else getattr(self.cells[(r, c)], attribute)
             for c in self.cols]
            for r in self.rows
        ]
        return pd.DataFrame(data, index=pd.Index(self.rows, name="chain"), columns=self.cols, dtype=float)

    def rates(self) -> pd.DataFrame:
        """Identification rates (%), NaN where a cell failed."""
        return self._matrix("rate")

    def eers(self, cohorts: bool = False) -> pd.DataFrame:
        return self._matrix("eer_cohort" if cohorts else "eer")

    def delta(self, baseline: str = "LPCC") -> pd.DataFrame:
        """Rate improvement in percentage points over the baseline row."""
        rates = self.rates()
        if baseline not in rates.index:
            raise InvalidInputError(f"baseline {baseline!r} is not a row of the table")
        return rates - rates.loc[baseline]

    def to_frame(self) -> pd.DataFrame:
        """Long format, one row per cell."""
        rows = []
        for r in self.rows:
            for c in self.cols:
                cell = self.cells[(r, c)]
                rows.append({
                    "chain": r,
                    "scenario": c,
                    "status": "failed" if cell.failed else "ok",
                    "identification_rate": cell.rate,
                    "eer": cell.eer,
                    "eer_cohort": cell.eer_cohort,
                    "trials": cell.trials,
                    "skipped": cell.skipped,
                    "failure": cell.failure or "",
                })
        return pd.DataFrame(rows)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
        return path

    def _render(self, values: pd.DataFrame, text: Callable[[str, str], str], lower_is_better: bool,
                mark_best: bool, decimals: int) -> str:
        grid = pd.DataFrame("", index=pd.Index(self.rows, name="PARAMETERIZ."), columns=self.cols)
        for c in self.cols:
            column = values[c].round(decimals)
            best = column.min() if lower_is_better else column.max()
            for r in self.rows:
                cell = self.cells[(r, c)]
                label = "FAILED" if cell.failed else text(r, c)
                if mark_best and not cell.failed and np.isfinite(best) and column[r] == best:
                    label += "*"
                grid.loc[r, c] = label
        return grid.to_string()

    def render_rates(self, decimals: int = 1, decimal: str = ".", mark_best: bool = True) -> str:
        """Aligned identification-rate table, best value per column marked with '*'."""
        rates = self.rates()
        return self._render(rates, lambda r, c: _fmt(rates.loc[r, c], decimals, decimal), False, mark_best, decimals)

    def render_eers(self, decimals: int = 2, decimal: str = ".", mark_best: bool = True) -> str:
        """'with cohorts / without' EER pairs; the best EER without cohorts is marked."""
        plain, normed = self.eers(), self.eers(cohorts=True)

        def text(r: str, c: str) -> str:
            return f"{_fmt(normed.loc[r, c], decimals, decimal)} / {_fmt(plain.loc[r, c], decimals, decimal)}"

        return self._render(plain, text, True, mark_best, decimals)

    def render_delta(self, baseline: str = "LPCC", decimals: int = 1, decimal: str = ".") -> str:
        """Per-cell rate change against ``baseline`` in signed percentage points."""
        delta = self.delta(baseline)

        def text(r: str, c: str) -> str:
            value = delta.loc[r, c]
            if not np.isfinite(value):
                return "-"
            signed = f"{value:+.{decimals}f}"
            return signed.replace(".", decimal)

        return self._render(delta, text, False, False, decimals)


def derive_seed(master_seed: int, *labels: str) -> int:
    """Seed for one cell, stable under reordering of chains or scenarios."""
    parts = [int(master_seed)] + [zlib.crc32(label.encode("utf-8")) for label in labels]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


class FeatureStore:
    """Per-utterance raw and shared-ACW features, computed once per run."""

    def __init__(self, classifier: ClassifierConfig, loader: FeatureLoader | None = None):
        self.frontend = classifier.frontend_config()
        self.loader = loader or self._extract
        self._raw: dict[Path, FeatureSequence] = {}
        self._acw: dict[Path, FeatureSequence] = {}
        self._acw_chain = TransformChain.parse("ACW")

    def _extract(self, record: UtteranceRecord) -> FeatureSequence:
        return extract(decode_audio(record.path), self.frontend, meta=record.key.model_dump())

    def preload(self, records: Sequence[UtteranceRecord], workers: int | None = None) -> None:
        pending = [record for record in records if record.path not in self._raw]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for record, seq in zip(pending, pool.map(self.loader, pending)):
                self._raw[record.path] = seq

    def raw(self, record: UtteranceRecord) -> FeatureSequence:
        if record.path not in self._raw:
            self._raw[record.path] = self.loader(record)
        return self._raw[record.path]

    def base(self, record: UtteranceRecord, chain: TransformChain) -> FeatureSequence:
        """Input for ``apply_chain``: raw LPCC, or the shared ACW cepstra."""
        if not chain.needs_lpc:
            return self.raw(record)
        if record.path not in self._acw:
            self._acw[record.path] = apply_chain(self._acw_chain, self.raw(record))
        return self._acw[record.path]


def _by_path(records: Sequence[UtteranceRecord]) -> dict[str, UtteranceRecord]:
    return {str(record.path): record for record in records}


def run_cell(
    chain_name: str,
    scenario: Scenario,
    frame: pd.DataFrame,
    records: Mapping[str, UtteranceRecord],
    store: FeatureStore,
    classifier: ClassifierConfig,
    cohort_size: int = 5,
    master_seed: int = 0,
    form: SphericityForm = "halved",
) -> CellResult:
    """Enroll every training speaker of a scenario, then score its test utterances."""
    cell = CellResult(chain=chain_name, scenario=scenario.name)
    try:
        chain = TransformChain.parse(chain_name)
        train = scenario.train_rows(frame)
        test = scenario.test_rows(frame)
        if train.empty:
            cell.failure = "no training utterances"
            return cell
        if test.empty:
            cell.failure = "no test utterances"
            return cell
        speakers = sorted(train["speaker"].unique())
        unknown = sorted(set(test["speaker"]) - set(speakers))
        if unknown:
            cell.failure = f"test speakers without training data: {', '.join(unknown)}"
            return cell

        train_records = [records[path] for path in train["path"]]
        base = [store.base(record, chain) for record in train_records]
        fitted = chain.fit(base)
        per_speaker: dict[str, list[FeatureSequence]] = {speaker: [] for speaker in speakers}
        for record, seq in zip(train_records, base):
            per_speaker[record.key.speaker].append(apply_chain(fitted, seq))
        training = {speaker: FeatureSequence.concat(seqs) for speaker, seqs in per_speaker.items()}
        models = [
            enroll(speaker, training[speaker], classifier, fitted, derive_seed(master_seed, chain_name, scenario.name, speaker))
            for speaker in speakers
        ]

        cohorts = None
        if cohort_size < len(models):
            cohorts = {m.id: select_cohort(models, m, cohort_size, training) for m in models}
        else:
            logger.warning(
                "%s / %s: %d models leave no cohort of %d, EER with cohorts not computed",
                chain_name, scenario.name, len(models), cohort_size,
            )

        tests: list[tuple[str, FeatureSequence]] = []
        for path in test["path"]:
            record = records[path]
            seq = apply_chain(fitted, store.base(record, chain))
            if seq.num_frames < (2 if classifier.kind == "cm" else 1):
                cell.skipped += 1
                logger.warning("%s: no usable frames after %s, trial skipped", record.key.label(), chain_name)
                continue
            tests.append((record.key.speaker, seq))
        if not tests:
            cell.failure = "no test utterance has usable frames"
            return cell

        cell.scores = verification_trials(models, tests, cohorts, form)
        decisions = []
        labels = [model.id for model in models]
        for (true_id, _), start in zip(tests, range(0, len(cell.scores), len(labels))):
            block = cell.scores[start:start + len(labels)]
            decisions.append((rank(labels, [t.raw for t in block])[0][0], true_id))
        cell.rate = identification_rate(decisions, decimals=None)
        cell.trials = len(decisions)
        cell.eer = trials_eer(cell.scores)
        cell.eer_cohort = trials_eer(cell.scores, normalized=True) if cohorts is not None else None
    except SpeakerIdError as exc:
        logger.warning("cell %s / %s failed: %s", chain_name, scenario.name, exc)
        cell.failure = str(exc)
    return cell


def run_experiment(
    manifest: Sequence[UtteranceRecord],
    scenarios: Sequence[Scenario],
    chains: Sequence[str],
    classifier: ClassifierConfig,
    cohort_size: int = 5,
    master_seed: int = 0,
    workers: int | None = None,
    form: SphericityForm = "halved",
    loader: FeatureLoader | None = None,
) -> ResultTable:
    """Fill a chains x scenarios table; failing cells are recorded, not raised."""
    if not chains or not scenarios:
        raise InvalidInputError("an experiment needs at least one chain and one scenario")
    for name in chains:
        TransformChain.parse(name)
    names = [scenario.name for scenario in scenarios]
    if len(set(names)) != len(names) or len(set(chains)) != len(chains):
        raise InvalidInputError("chain and scenario names must be unique")

    workers = workers or os.cpu_count() or 1
    frame = records_frame(manifest).assign(path=[str(record.path) for record in manifest])
    records = _by_path(manifest)
    store = FeatureStore(classifier, loader)

    used = set()
    for scenario in scenarios:
        used.update(scenario.train_rows(frame)["path"])
        used.update(scenario.test_rows(frame)["path"])
    store.preload([records[path] for path in sorted(used)], workers)
    logger.info("extracted features of %d utterances", len(used))

    # ACW cepstra are shared by every ACW chain, so compute them before the cells fan out
    if any(TransformChain.parse(name).needs_lpc for name in chains):
        acw_chain = TransformChain.parse("ACW")
        for path in sorted(used):
            store.base(records[path], acw_chain)

    jobs = [(chain, scenario) for chain in chains for scenario in scenarios]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda job: run_cell(job[0], job[1], frame, records, store, classifier, cohort_size, master_seed, form),
            jobs,
        ))

    table = ResultTable(
        rows=list(chains),
        cols=names,
        cells={(cell.chain, cell.scenario): cell for cell in results},
    )
    for cell in table.failed:
        logger.warning("cell %s / %s failed: %s", cell.chain, cell.scenario, cell.failure)
    return table
