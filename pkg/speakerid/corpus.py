"""
Corpus ingestion and the synthetic corpus generator.

A manifest is a UTF-8 CSV file with a header row and the columns
speaker, session, microphone, language, role, index, path, duration.
Relative audio paths are resolved against the manifest's directory.

Synthetic speakers are AR(10) sources built from five formant pole pairs.
Utterances cycle through a shared inventory of phone states, each a
speaker-specific displacement of the first three formants, so the
cepstral mean of an utterance carries the speaker while the frames
spread around it. Microphones are short fixed FIR channels, which add a
constant offset to every frame's cepstrum.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import signal
from scipy.io import wavfile

from speakerid.errors import AudioFormatError, DataError, InvalidInputError, ManifestError
from speakerid.frontend import ANALYSIS_SAMPLE_RATE, AudioClip, as_clip, lpc_to_lpcc

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["speaker", "session", "microphone", "language", "role", "index", "path", "duration"]
KEY_FIELDS = ["speaker", "session", "microphone", "language", "index"]

PCM16_SCALE = 32768.0
SUPPORTED_RATES = (8000, 16000)

AR_ORDER = 10
MAX_POLE_RADIUS = 0.95
SESSION_JITTER = 0.02
MIN_SPEAKER_DISTANCE = 1e-3
MAX_CHANNEL_TAPS = 32
PEAK_LEVEL = 0.5
CYCLE_S = 1.0
PAUSE_LEVEL = 1e-3

# Neutral formants (Hz) and bandwidths; bandwidths keep every pole radius <= 0.95
NEUTRAL_FORMANTS_HZ = np.array([500.0, 1450.0, 2400.0, 3250.0, 3650.0])
FORMANT_BANDWIDTHS_HZ = np.array([140.0, 160.0, 190.0, 230.0, 280.0])

# Log displacement of F1..F3 for each phone state, roughly schwa, i, e, a, o, u, ae, r
PHONE_STATES = np.array([
    [0.00, 0.00, 0.00],
    [-0.45, 0.35, 0.12],
    [-0.30, 0.25, 0.06],
    [0.40, 0.05, -0.02],
    [0.10, -0.35, -0.04],
    [-0.35, -0.40, 0.00],
    [0.20, 0.15, 0.04],
    [-0.15, -0.15, 0.08],
])


class ConditionKey(BaseModel):
    """Recording condition of one utterance."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    speaker: str = Field(min_length=1)
    session: str = Field(min_length=1)
    microphone: str = Field(min_length=1)
    language: str = Field(min_length=1)
    role: Literal["train", "test"]
    index: int = Field(0, ge=0)

    @property
    def unique_key(self) -> tuple[str, str, str, str, int]:
        return (self.speaker, self.session, self.microphone, self.language, self.index)

    def label(self) -> str:
        return f"{self.speaker}/{self.session}{self.language}{self.microphone}/{self.role}{self.index}"


class UtteranceRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    key: ConditionKey
    path: Path
    duration_s: float = Field(gt=0.0)

    def to_row(self, root: Path | None = None) -> dict[str, object]:
        path = self.path
        if root is not None:
            try:
                path = path.relative_to(root)
            except ValueError:
                pass
        return {**self.key.model_dump(), "path": path.as_posix(), "duration": self.duration_s}


def records_frame(records: Sequence[UtteranceRecord]) -> pd.DataFrame:
    """Manifest records as a DataFrame, one row per record in order."""
    rows = [record.to_row() for record in records]
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    return frame.astype({"index": int, "duration": float})


def _format_validation(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors()
    )


def load_manifest(path: str | Path, check_files: bool = True) -> list[UtteranceRecord]:
    """Read and validate a manifest.

    Rows are checked one by one; errors name the file line (the header is
    line 1). Duplicate condition keys and missing audio files are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as exc:
        raise ManifestError(f"{path}: {exc}") from exc

    table.columns = [str(column).strip().lower() for column in table.columns]
    missing = [column for column in MANIFEST_COLUMNS if column not in table.columns]
    if missing:
        raise ManifestError(f"{path}: missing columns {', '.join(missing)}", line=1)

    root = path.parent.absolute()
    records: list[UtteranceRecord] = []
    seen: dict[tuple, int] = {}
    for offset, row in enumerate(table.itertuples(index=False)):
        line = offset + 2
        values = row._asdict()
        try:
            key = ConditionKey(
                speaker=values["speaker"].strip(),
                session=values["session"].strip(),
                microphone=values["microphone"].strip(),
                language=values["language"].strip(),
                role=values["role"].strip(),
                index=values["index"].strip() or "0",
            )
            if not values["path"].strip():
                raise ManifestError("empty audio path", line=line)
            audio = Path(values["path"].strip())
            record = UtteranceRecord(
                key=key,
                path=audio if audio.is_absolute() else (root / audio),
                duration_s=values["duration"].strip(),
            )
        except ValidationError as exc:
            raise ManifestError(_format_validation(exc), line=line) from exc

        if key.unique_key in seen:
            raise ManifestError(
                f"duplicate key {key.label()} (first seen on line {seen[key.unique_key]})", line=line
            )
        seen[key.unique_key] = line
        if check_files and not record.path.is_file():
            raise ManifestError(f"audio file not found: {record.path}", line=line)
        records.append(record)

    logger.info("loaded %d manifest records from %s", len(records), path)
    return records


def write_manifest(records: Sequence[UtteranceRecord], path: str | Path) -> Path:
    """Write records so that ``load_manifest`` gives them back unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.absolute()
    rows = [record.to_row(root) for record in records]
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(path, index=False, lineterminator="\n")
    return path


def decimate_2x(samples: np.ndarray) -> np.ndarray:
    """Anti-alias low-pass at 4 kHz then keep every second sample."""
    return signal.decimate(samples, 2, ftype="fir", zero_phase=True)


def decode_audio(path: str | Path) -> AudioClip:
    """Read a mono PCM16 WAV at 8 or 16 kHz as an 8 kHz clip in [-1, 1)."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise DataError(f"audio file not found: {path}") from exc
    except ValueError as exc:
        raise AudioFormatError(f"{path}: unreadable WAV file ({exc})") from exc

    if data.ndim != 1:
        raise AudioFormatError(f"{path}: {data.shape[1]} channels, only mono is supported")
    if data.dtype != np.int16:
        raise AudioFormatError(f"{path}: sample format {data.dtype}, only 16-bit PCM is supported")
    if rate not in SUPPORTED_RATES:
        raise AudioFormatError(f"{path}: sampling rate {rate} Hz, expected 8000 or 16000")

    samples = data.astype(np.float64) / PCM16_SCALE
    if rate == 2 * ANALYSIS_SAMPLE_RATE:
        samples = decimate_2x(samples) if samples.size else samples[:0]
    return AudioClip(samples, ANALYSIS_SAMPLE_RATE)


def write_wav(clip: AudioClip | np.ndarray, path: str | Path, sample_rate_hz: int = ANALYSIS_SAMPLE_RATE) -> Path:
    """Write PCM16 mono; samples outside [-1, 1) are clipped."""
    clip = as_clip(clip, sample_rate_hz)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(clip.samples * PCM16_SCALE), -PCM16_SCALE, PCM16_SCALE - 1).astype(np.int16)
    wavfile.write(path, clip.sample_rate_hz, pcm)
    return path


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(part) for part in parts]).generate_state(1)[0])


def _poles(formants_hz: np.ndarray, radii: np.ndarray, sample_rate_hz: int = ANALYSIS_SAMPLE_RATE) -> np.ndarray:
    """Upper half-plane poles from formant frequencies and radii."""
    return radii * np.exp(2j * np.pi * formants_hz / sample_rate_hz)


def poles_to_ar(upper_poles: np.ndarray) -> np.ndarray:
    """a_1..a_P of A(z) whose roots are the poles and their conjugates."""
    upper_poles = np.asarray(upper_poles)
    roots = np.concatenate([upper_poles, upper_poles.conj()], axis=-1)
    if roots.ndim == 1:
        return np.poly(roots).real[1:]
    return np.stack([np.poly(row).real[1:] for row in roots])


def _unit_gain(a: np.ndarray, length: int = 1024) -> float:
    """Excitation gain giving unit output power through 1/A(z)."""
    impulse = np.zeros(length)
    impulse[0] = 1.0
    response = signal.lfilter([1.0], np.concatenate([[1.0], a]), impulse)
    return float(1.0 / np.sqrt(np.sum(response ** 2)))


@dataclass(frozen=True, eq=False)
class SynthSpeaker:
    """AR(10) synthetic speaker.

    ``ar_coeffs`` is the neutral filter; ``state_coeffs`` holds one filter
    per phone state. A speaker without phone states is a stationary source.
    """

    id: str
    ar_coeffs: np.ndarray
    seed: int
    state_coeffs: np.ndarray | None = None
    poles: np.ndarray | None = field(default=None, repr=False)
    state_poles: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        a = np.asarray(self.ar_coeffs, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise InvalidInputError("ar_coeffs must be a non-empty vector")
        filters = [a] if self.state_coeffs is None else [a, *np.atleast_2d(self.state_coeffs)]
        for coeffs in filters:
            radius = np.max(np.abs(np.roots(np.concatenate([[1.0], coeffs]))), initial=0.0)
            if radius > MAX_POLE_RADIUS + 1e-9:
                raise InvalidInputError(f"speaker {self.id}: pole radius {radius:.4f} exceeds {MAX_POLE_RADIUS}")
        object.__setattr__(self, "ar_coeffs", a)
        if self.state_coeffs is not None:
            object.__setattr__(self, "state_coeffs", np.atleast_2d(np.asarray(self.state_coeffs, dtype=np.float64)))

    @classmethod
    def from_poles(
        cls,
        id: str,
        poles: np.ndarray,
        seed: int,
        state_poles: np.ndarray | None = None,
    ) -> "SynthSpeaker":
        """Speaker from upper half-plane poles (conjugates are implied)."""
        poles = np.asarray(poles, dtype=complex)
        states = None if state_poles is None else np.asarray(state_poles, dtype=complex)
        return cls(
            id=id,
            ar_coeffs=poles_to_ar(poles),
            seed=seed,
            state_coeffs=None if states is None else poles_to_ar(states),
            poles=poles,
            state_poles=states,
        )

    @property
    def num_states(self) -> int:
        return 0 if self.state_coeffs is None else int(self.state_coeffs.shape[0])

    def cepstrum(self, order: int = 20) -> np.ndarray:
        """Cepstrum c_1..c_order of the neutral filter."""
        return lpc_to_lpcc(self.ar_coeffs, order)

    def for_session(self, session_seed: int, jitter: float = SESSION_JITTER) -> "SynthSpeaker":
        """Same speaker with every pole radius moved by at most ``jitter``.

        The offset is drawn once per formant and shared by all phone states.
        """
        if self.poles is None:
            raise InvalidInputError(f"speaker {self.id} was not built from poles")
        rng = np.random.default_rng(session_seed)
        offsets = rng.uniform(-jitter, jitter, self.poles.shape[-1])

        def moved(poles: np.ndarray) -> np.ndarray:
            radii = np.clip(np.abs(poles) + offsets, 0.05, MAX_POLE_RADIUS)
            return radii * np.exp(1j * np.angle(poles))

        return SynthSpeaker.from_poles(
            self.id,
            moved(self.poles),
            self.seed,
            None if self.state_poles is None else moved(self.state_poles),
        )


@dataclass(frozen=True)
class LanguageProfile:
    """Share of each phone state in a speech cycle and the pause fraction."""

    weights: tuple[float, ...]
    pause: float


LANGUAGE_PROFILES = {
    "c": LanguageProfile((1.0, 1.1, 1.2, 1.3, 0.9, 0.8, 1.0, 0.7), 0.10),
    "s": LanguageProfile((0.8, 1.2, 1.4, 1.5, 1.2, 0.7, 0.6, 0.6), 0.20),
}


def language_profile(language: str | None, num_states: int = len(PHONE_STATES)) -> LanguageProfile:
    """Duration profile of a language label; unknown labels get a stable derived one."""
    if language in LANGUAGE_PROFILES and len(LANGUAGE_PROFILES[language].weights) == num_states:
        return LANGUAGE_PROFILES[language]
    rng = np.random.default_rng(zlib.crc32((language or "").encode("utf-8")))
    return LanguageProfile(tuple(rng.uniform(0.6, 1.4, num_states)), float(rng.uniform(0.05, 0.25)))


def _cycle_plan(profile: LanguageProfile, cycle_len: int) -> np.ndarray:
    """Sample count of every phone state in one cycle; the rest is pause."""
    weights = np.asarray(profile.weights, dtype=np.float64)
    speech = int(round(cycle_len * (1.0 - profile.pause)))
    edges = np.round(np.cumsum(weights) / weights.sum() * speech).astype(int)
    return np.diff(np.concatenate([[0], edges]))


def synth_utterance(
    spk: SynthSpeaker,
    duration_s: float,
    utt_seed: int,
    language: str | None = None,
    sample_rate_hz: int = ANALYSIS_SAMPLE_RATE,
) -> AudioClip:
    """Seeded white Gaussian noise through the speaker's filter(s).

    Phone-state speakers go through whole cycles of all states in shuffled
    order, followed by a low-level pause; the filter memory is carried over
    every state change.
    """
    if duration_s <= 0:
        raise InvalidInputError(f"duration must be positive, got {duration_s}")
    length = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng([spk.seed, int(utt_seed)])
    excitation = rng.standard_normal(length)

    if spk.state_coeffs is None:
        out = signal.lfilter([1.0], np.concatenate([[1.0], spk.ar_coeffs]), excitation)
        return AudioClip(_peak_normalize(out), sample_rate_hz)

    states = spk.state_coeffs
    plan = _cycle_plan(language_profile(language, spk.num_states), int(round(CYCLE_S * sample_rate_hz)))
    gains = [_unit_gain(a) for a in states]
    out = np.zeros(length)
    order = states.shape[1]
    start = 0
    previous = 0
    while start < length:
        for state in rng.permutation(spk.num_states):
            stop = min(start + int(plan[state]), length)
            if stop > start:
                out[start:stop] = _filter_segment(states[state], excitation[start:stop] * gains[state], out, start, order)
                previous = state
                start = stop
        stop = min(start + int(round(CYCLE_S * sample_rate_hz)) - int(plan.sum()), length)
        if stop > start:
            out[start:stop] = _filter_segment(
                states[previous], excitation[start:stop] * (gains[previous] * PAUSE_LEVEL), out, start, order
            )
            start = stop
    return AudioClip(_peak_normalize(out), sample_rate_hz)


def _filter_segment(a: np.ndarray, x: np.ndarray, history: np.ndarray, start: int, order: int) -> np.ndarray:
    den = np.concatenate([[1.0], a])
    past = history[max(0, start - order):start][::-1]
    zi = signal.lfiltic([1.0], den, past)
    y, _ = signal.lfilter([1.0], den, x, zi=zi)
    return y


def _peak_normalize(samples: np.ndarray, level: float = PEAK_LEVEL) -> np.ndarray:
    peak = float(np.max(np.abs(samples), initial=0.0))
    return samples if peak == 0.0 else samples * (level / peak)


def _truncated_response(den: np.ndarray, taps: int = MAX_CHANNEL_TAPS) -> np.ndarray:
    impulse = np.zeros(taps)
    impulse[0] = 1.0
    return signal.lfilter([1.0], den, impulse)


# M2: mild low-pass tilt. M3: strong tilt with a broad 1 kHz resonance.
CHANNELS: dict[str, np.ndarray] = {
    "M1": np.array([1.0]),
    "M2": _truncated_response(np.array([1.0, -0.5])),
    "M3": _truncated_response(
        np.convolve([1.0, -0.7], [1.0, -2 * 0.75 * np.cos(2 * np.pi * 1000 / ANALYSIS_SAMPLE_RATE), 0.75 ** 2])
    ),
}


def channel_response(channel_id: str) -> np.ndarray:
    """FIR taps of a simulated microphone channel."""
    try:
        return CHANNELS[channel_id].copy()
    except KeyError:
        raise InvalidInputError(f"unknown channel {channel_id!r}; known: {', '.join(CHANNELS)}") from None


def apply_channel(clip: AudioClip | np.ndarray, channel: str | np.ndarray) -> AudioClip:
    """Convolve with a channel's FIR, keeping the clip length. M1 is the identity."""
    clip = as_clip(clip)
    if isinstance(channel, str):
        if channel == "M1":
            return clip
        taps = channel_response(channel)
    else:
        taps = np.asarray(channel, dtype=np.float64)
        if taps.ndim != 1 or not 1 <= taps.size <= MAX_CHANNEL_TAPS:
            raise InvalidInputError(f"channel must have 1 to {MAX_CHANNEL_TAPS} taps, got shape {taps.shape}")
    return AudioClip(signal.lfilter(taps, [1.0], clip.samples), clip.sample_rate_hz)


def make_speaker(speaker_id: str, seed: int, scale: float = 1.0) -> SynthSpeaker:
    """Phone-state speaker with vocal tract ``scale`` and seeded idiosyncrasies."""
    rng = np.random.default_rng(seed)
    formants = NEUTRAL_FORMANTS_HZ.copy()
    formants[:4] *= scale * (1.0 + rng.uniform(-0.03, 0.03, 4))
    formants[4] *= 1.0 + rng.uniform(-0.02, 0.02)
    bandwidths = FORMANT_BANDWIDTHS_HZ * (1.0 + rng.uniform(0.0, 0.15, formants.size))
    radii = np.minimum(np.exp(-np.pi * bandwidths / ANALYSIS_SAMPLE_RATE), MAX_POLE_RADIUS)

    articulation = rng.uniform(0.7, 1.3)
    quirks = rng.uniform(-0.06, 0.06, PHONE_STATES.shape)
    state_formants = np.tile(formants, (len(PHONE_STATES), 1))
    state_formants[:, :3] *= np.exp(articulation * PHONE_STATES + quirks)
    state_formants = np.clip(state_formants, 120.0, ANALYSIS_SAMPLE_RATE / 2 - 120.0)

    return SynthSpeaker.from_poles(
        speaker_id,
        _poles(formants, radii),
        seed,
        _poles(state_formants, np.tile(radii, (len(PHONE_STATES), 1))),
    )


def make_speakers(n_speakers: int, master_seed: int = 0) -> list[SynthSpeaker]:
    """Speakers spread over vocal tract scales 0.88..1.12, pairwise distinct."""
    if n_speakers < 1:
        raise InvalidInputError(f"need at least one speaker, got {n_speakers}")
    rng = np.random.default_rng(master_seed)
    scales = rng.permutation(np.linspace(0.88, 1.12, n_speakers)) if n_speakers > 1 else np.ones(1)
    width = max(2, len(str(n_speakers)))
    speakers: list[SynthSpeaker] = []
    for i in range(n_speakers):
        for attempt in range(100):
            candidate = make_speaker(f"spk{i + 1:0{width}d}", _derive_seed(master_seed, i, attempt), scales[i])
            distances = [np.linalg.norm(candidate.cepstrum() - other.cepstrum()) for other in speakers]
            if min(distances, default=np.inf) > MIN_SPEAKER_DISTANCE:
                break
            logger.debug("speaker %s collides with an earlier speaker, regenerating", candidate.id)
        else:
            raise DataError(f"could not generate a distinct speaker {i + 1}")
        speakers.append(candidate)
    return speakers


@dataclass
class SynthCorpus:
    manifest_path: Path
    records: list[UtteranceRecord]
    speakers: list[SynthSpeaker]


def _labels(value: int | Iterable[str], prefix: str) -> list[str]:
    if isinstance(value, int):
        if value < 1:
            raise InvalidInputError(f"need at least one {prefix} label, got {value}")
        return [f"{prefix}{i + 1}" for i in range(value)]
    labels = [str(label) for label in value]
    if not labels or len(set(labels)) != len(labels):
        raise InvalidInputError(f"{prefix} labels must be non-empty and distinct: {labels}")
    return labels


def build_synth_corpus(
    out_dir: str | Path,
    n_speakers: int = 8,
    sessions: int | Sequence[str] = 1,
    channels: Sequence[str] = ("M1",),
    master_seed: int = 0,
    languages: Sequence[str] = ("c",),
    train_duration_s: float = 60.0,
    test_duration_s: float = 2.0,
    n_test: int = 5,
) -> SynthCorpus:
    """Write a synthetic corpus (WAV files plus ``manifest.csv``) to ``out_dir``.

    Every speaker x session x language source utterance (one training
    utterance of index 0, test utterances 1..n_test) is recorded through
    every channel.
    """
    session_labels = _labels(sessions, "S")
    channel_labels = list(channels)
    language_labels = _labels(languages, "L")
    for channel in channel_labels:
        channel_response(channel)
    if n_test < 0:
        raise InvalidInputError(f"number of test utterances must be >= 0, got {n_test}")

    out_dir = Path(out_dir)
    speakers = make_speakers(n_speakers, master_seed)
    records: list[UtteranceRecord] = []
    for speaker in speakers:
        for s, session in enumerate(session_labels):
            voice = speaker.for_session(_derive_seed(speaker.seed, s))
            for l, language in enumerate(language_labels):
                plan = [("train", 0, train_duration_s)]
                plan += [("test", i, test_duration_s) for i in range(1, n_test + 1)]
                for role, index, duration in plan:
                    source = synth_utterance(voice, duration, _derive_seed(s, l, index), language)
                    for channel in channel_labels:
                        key = ConditionKey(
                            speaker=speaker.id, session=session, microphone=channel,
                            language=language, role=role, index=index,
                        )
                        path = out_dir / "audio" / speaker.id / f"{session}{language}{channel}_{role}{index}.wav"
                        recorded = apply_channel(source, channel)
                        write_wav(_peak_normalize(recorded.samples), path)
                        records.append(UtteranceRecord(key=key, path=path.absolute(), duration_s=duration))

    manifest_path = write_manifest(records, out_dir / "manifest.csv")
    logger.info("synthetic corpus: %d utterances of %d speakers in %s", len(records), len(speakers), out_dir)
    return SynthCorpus(manifest_path=manifest_path, records=records, speakers=speakers)
