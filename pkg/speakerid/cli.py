"""
Command line interface.

    speakerid simulate   --output-dir DIR [--speakers N ...]
    speakerid extract    AUDIO --output FILE [--classifier vq|cm]
    speakerid train      --manifest CSV --output-dir DIR [--query EXPR --chain NAME ...]
    speakerid identify   --models DIR AUDIO
    speakerid verify     --model FILE AUDIO [--threshold T]
    speakerid experiment CONFIG [--seed N --workers N --output-dir DIR]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 experiment finished with failed cells.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from speakerid import __version__
from speakerid.config import load_config
from speakerid.corpus import build_synth_corpus, decode_audio, load_manifest, records_frame
from speakerid.errors import ConfigError, DataError, SpeakerIdError
from speakerid.evaluation import FeatureStore, run_experiment
from speakerid.frontend import FeatureSequence, extract
from speakerid.logs import setup_logging
from speakerid.models import ClassifierConfig, SpeakerModel, enroll, rank, score_all, verify_score
from speakerid.storage import load_model, load_models, save_features, save_model
from speakerid.transforms import TransformChain, apply_chain

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _classifier_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--classifier", choices=["vq", "cm"], default="vq", help="classifier preset (P=16 vq, P=20 cm)")
    parser.add_argument("--order", type=int, help="LPC/cepstrum order overriding the preset")
    parser.add_argument("--bits", type=int, default=6, help="VQ codebook size in bits")
    parser.add_argument("--ridge", type=float, help="covariance ridge (default relative 1e-6 tr(C)/Q)")


def _classifier(args: argparse.Namespace) -> ClassifierConfig:
    try:
        return ClassifierConfig(kind=args.classifier, bits=args.bits, order=args.order, ridge=args.ridge)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="speakerid", description="LPCC speaker identification and verification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides SPEAKERID_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="write a synthetic corpus and its manifest")
    simulate.add_argument("--output-dir", type=Path, required=True)
    simulate.add_argument("--speakers", type=int, default=8)
    simulate.add_argument("--sessions", nargs="+", default=["S1"])
    simulate.add_argument("--channels", nargs="+", default=["M1"])
    simulate.add_argument("--languages", nargs="+", default=["c"])
    simulate.add_argument("--train-seconds", type=float, default=60.0)
    simulate.add_argument("--test-seconds", type=float, default=2.0)
    simulate.add_argument("--tests", type=int, default=5, help="test utterances per condition")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.set_defaults(handler=cmd_simulate)

    extract_cmd = commands.add_parser("extract", help="LPCC features of one WAV file")
    extract_cmd.add_argument("audio", type=Path)
    extract_cmd.add_argument("--output", type=Path, required=True)
    _classifier_args(extract_cmd)
    extract_cmd.set_defaults(handler=cmd_extract)

    train = commands.add_parser("train", help="enroll every speaker selected from a manifest")
    train.add_argument("--manifest", type=Path, required=True)
    train.add_argument("--query", default="role == 'train'", help="pandas query selecting training rows")
    train.add_argument("--chain", default="LPCC", help="parameterization, e.g. CMS+ACW+SIGMA")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--output-dir", type=Path, required=True)
    _classifier_args(train)
    train.set_defaults(handler=cmd_train)

    identify = commands.add_parser("identify", help="closest enrolled speaker for a WAV file")
    identify.add_argument("--models", type=Path, required=True, help="directory of model files")
    identify.add_argument("audio", type=Path)
    identify.set_defaults(handler=cmd_identify)

    verify = commands.add_parser("verify", help="score a WAV file against one claimed speaker")
    verify.add_argument("--model", type=Path, required=True)
    verify.add_argument("audio", type=Path)
    verify.add_argument("--threshold", type=float, help="accept when score <= threshold")
    verify.set_defaults(handler=cmd_verify)

    experiment = commands.add_parser("experiment", help="run an experiment file and write its tables")
    experiment.add_argument("config", type=Path)
    experiment.add_argument("--seed", type=int)
    experiment.add_argument("--workers", type=int)
    experiment.add_argument("--output-dir", type=Path)
    experiment.set_defaults(handler=cmd_experiment)
    return parser


def cmd_simulate(args: argparse.Namespace) -> int:
    corpus = build_synth_corpus(
        args.output_dir,
        n_speakers=args.speakers,
        sessions=args.sessions,
        channels=args.channels,
        master_seed=args.seed,
        languages=args.languages,
        train_duration_s=args.train_seconds,
        test_duration_s=args.test_seconds,
        n_test=args.tests,
    )
    frame = records_frame(corpus.records)
    print(f"✅ Manifest: {corpus.manifest_path}")
    print(f"speakers: {len(corpus.speakers)}")
    print(f"utterances: {len(frame)} ({(frame['role'] == 'train').sum()} train, {(frame['role'] == 'test').sum()} test)")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    frontend = _classifier(args).frontend_config()
    seq = extract(decode_audio(args.audio), frontend, meta={"source": args.audio.name})
    if seq.num_frames == 0:
        logger.warning("%s: no frame survived the energy gate", args.audio)
    save_features(seq, args.output)
    print(f"✅ Features: {args.output}")
    print(f"T: {seq.num_frames}")
    print(f"Q: {seq.dim}")
    print(f"gated: {seq.gated}")
    print(f"dropped: {seq.dropped}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    classifier = _classifier(args)
    chain = TransformChain.parse(args.chain)
    records = load_manifest(args.manifest)
    frame = records_frame(records).assign(path=[str(record.path) for record in records])
    try:
        selected = frame.query(args.query)
    except Exception as exc:
        raise ConfigError(f"bad --query {args.query!r}: {exc}") from exc
    if selected.empty:
        raise DataError(f"--query {args.query!r} selects no utterances")

    by_path = {str(record.path): record for record in records}
    chosen = [by_path[path] for path in selected["path"]]
    store = FeatureStore(classifier)
    base = [store.base(record, chain) for record in chosen]
    fitted = chain.fit(base)

    per_speaker: dict[str, list[FeatureSequence]] = {}
    for record, seq in zip(chosen, base):
        per_speaker.setdefault(record.key.speaker, []).append(apply_chain(fitted, seq))

    args.output_dir.mkdir(parents=True, exist_ok=True)
    for speaker in sorted(per_speaker):
        model = enroll(speaker, FeatureSequence.concat(per_speaker[speaker]), classifier, fitted, args.seed)
        save_model(model, args.output_dir / f"{speaker}.json")
    print(f"✅ Models: {args.output_dir}")
    print(f"speakers: {len(per_speaker)}")
    print(f"chain: {fitted.name}")
    return EXIT_OK


def _test_features(model: SpeakerModel, audio: Path) -> FeatureSequence:
    seq = extract(decode_audio(audio), model.frontend, meta={"source": audio.name})
    return apply_chain(model.chain, seq)


def cmd_identify(args: argparse.Namespace) -> int:
    models = load_models(args.models)
    seq = _test_features(models[0], args.audio)
    scores = score_all(models, seq)
    ranking = rank([model.id for model in models], scores)
    print(f"speaker: {ranking[0][0]}")
    for label, score in ranking:
        print(f"  {label}\t{score:.6f}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    score = verify_score(model, _test_features(model, args.audio))
    print(f"speaker: {model.id}")
    print(f"score: {score:.6f}")
    if args.threshold is not None:
        print(f"decision: {'accept' if score <= args.threshold else 'reject'}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        overrides={
            "master_seed": args.seed,
            "workers": args.workers,
            "output.directory": str(args.output_dir.absolute()) if args.output_dir else None,
        },
    )
    records = load_manifest(config.manifest)
    if not records:
        raise DataError(f"manifest {config.manifest} has no records")

    table = run_experiment(
        records,
        config.resolved_scenarios(),
        config.chains,
        config.classifier,
        cohort_size=config.cohort_size,
        master_seed=config.master_seed,
        workers=config.workers,
        form=config.sphericity,
    )

    out = config.output
    out.directory.mkdir(parents=True, exist_ok=True)
    csv_path = table.to_csv(out.directory / f"{out.stem}.csv")
    sections = [
        "Identification rate (%)",
        table.render_rates(out.rate_decimals, out.decimal),
        "",
        "EER (%) (with cohorts / without)",
        table.render_eers(out.eer_decimals, out.decimal),
    ]
    if out.baseline and out.baseline in table.rows:
        sections += ["", f"Change against {out.baseline} (points)", table.render_delta(out.baseline, out.rate_decimals, out.decimal)]
    text_path = out.directory / f"{out.stem}.txt"
    text_path.write_text("\n".join(sections) + "\n", encoding="utf-8")

    print(table.render_rates(out.rate_decimals, out.decimal))
    print(f"✅ Results: {csv_path}")
    print(f"✅ Tables: {text_path}")
    if table.failed:
        print(f"⚠️  {len(table.failed)} of {len(table.rows) * len(table.cols)} cells failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        setup_logging(args.log_level)
        return args.handler(args)
    except SpeakerIdError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
