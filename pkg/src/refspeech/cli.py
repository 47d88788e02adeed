"""Command-line interface.

Verbs: ``extract``, ``reference``, ``detect``, ``synth``, ``radar``,
``explain``. Exit codes: 0 success, 2 validation error, 3 data error,
4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import load_feature_table
from .errors import DataError, NumericError, RefSpeechError, ValidationError
from .glassbox import NamConfig, load_ensemble
from .glassbox.nam import ACTIVATIONS, ARCHS
from .pipeline import (RunManifest, build_reference, detect, exclusions_csv,
                       explain_table, extract_directory, group_overlays, partition_tests_csv,
                       reference_radar, save_table_atomic, write_atomic, write_detection)
from .refstats import ReferenceModel
from .synth import write_profile
from .text import read_transcripts

log = logging.getLogger("refspeech")

_NAM = NamConfig()

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def resolve_threads(flag):
    env = os.environ.get("REFSPEECH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"REFSPEECH_THREADS must be an integer, got {env!r}") from None
    return max(1, flag)


def _load_reference(path):
    return ReferenceModel.from_json(Path(path).read_text(encoding="utf-8"))


def cmd_extract(args):
    transcripts = read_transcripts(args.transcripts) if args.transcripts else None
    table, exclusions = extract_directory(args.audio_dir, args.task, transcripts, args.metadata,
                                          threads=resolve_threads(args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_table_atomic(table, out / "features.csv")
    write_atomic(out / "exclusions.csv", exclusions_csv(exclusions))
    log.info("%d samples extracted, %d excluded", len(table), len(exclusions))
    inputs = [args.audio_dir] + ([args.transcripts] if args.transcripts else [])
    return ["features.csv", "exclusions.csv"], inputs


def cmd_reference(args):
    table = load_feature_table(args.table)
    model, tests = build_reference(table, tuple(args.ct), seed=args.seed, method=args.norm,
                                   n_boot=args.n_boot)
    out = Path(args.out)
    write_atomic(out / "reference_model.json", model.to_json() + "\n")
    write_atomic(out / "partition_tests.csv", partition_tests_csv(tests))
    write_atomic(out / "radar.svg", reference_radar(model))
    return ["reference_model.json", "partition_tests.csv", "radar.svg"], [args.table]


def _nam_config(args):
    return NamConfig(subnet_arch=args.arch, activation=args.activation,
                     learning_rate=args.learning_rate, dropout_p=args.dropout,
                     feature_dropout_p=args.feature_dropout, weight_decay=args.weight_decay,
                     output_penalty=args.output_penalty, batch_size=args.batch_size,
                     epochs=args.epochs, patience=args.patience,
                     ensemble_size=args.ensemble_size, seed=args.seed)


def cmd_detect(args):
    model = _load_reference(args.reference)
    table = load_feature_table(args.table)
    test_table = load_feature_table(args.test_table) if args.test_table else None
    mode = "cv_for_tuning_plus_heldout_test" if test_table is not None else "cv_with_dev_fold"
    report = detect(model, table, score=args.score, norm=args.norm, ct=args.ct,
                    classifier=args.model, n_folds=args.folds, seed=args.seed,
                    config=_nam_config(args), mode=mode, test_table=test_table, l2=args.l2,
                    tune_budget=args.tune_budget, tune_strategy=args.tune_strategy,
                    figure_compat=args.figure_compat)
    artifacts = write_detection(report, args.out)
    sys.stdout.write(report["metrics_csv"])
    inputs = [args.reference, args.table] + ([args.test_table] if args.test_table else [])
    return artifacts, inputs


def cmd_synth(args):
    artifacts = write_profile(args.profile, Path(args.out), seed=args.seed, n=args.n,
                              jitter=args.jitter, shimmer=args.shimmer, snr_db=args.snr,
                              f0=args.f0, formants=tuple(args.formants))
    return artifacts, []


def cmd_radar(args):
    model = _load_reference(args.reference)
    overlays = group_overlays(model, load_feature_table(args.table)) if args.table else None
    write_atomic(Path(args.out) / "radar.svg", reference_radar(model, overlays))
    return ["radar.svg"], [args.reference] + ([args.table] if args.table else [])


def cmd_explain(args):
    detect_dir = Path(args.detect_dir)
    info = json.loads((detect_dir / "pipeline.json").read_text(encoding="utf-8"))
    if info["classifier"] != "nam":
        raise ValidationError("explain needs a detection run with the nam classifier")
    ensemble = load_ensemble(detect_dir / "model.nam")
    model = _load_reference(args.reference)
    table = load_feature_table(args.table)
    train = load_feature_table(args.train_table) if args.train_table else table
    rows = explain_table(model, ensemble, table, info, train)
    write_atomic(Path(args.out) / "explanations.jsonl",
                 "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return ["explanations.jsonl"], [args.reference, args.table, str(detect_dir / "model.nam")]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (REFSPEECH_THREADS overrides)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="refspeech", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="acoustic and text features from audio")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--task", choices=("sustained_vowel", "picture_description"), required=True)
    p.add_argument("--transcripts", help="transcript JSON-lines file")
    p.add_argument("--metadata", help="CSV with file,speaker_id,dataset_id,gender,age,label")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("reference", parents=[common], help="reference intervals and clusters")
    p.add_argument("--table", required=True)
    p.add_argument("--ct", type=float, nargs="+", default=[1.0],
                   help="correlation thresholds for feature clustering")
    p.add_argument("--norm", choices=("zscore", "minmax", "none"), default="zscore")
    p.add_argument("--n-boot", type=int, default=1000)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("detect", parents=[common], help="cross-validated disease detection")
    p.add_argument("--reference", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--test-table", help="held-out test table (fold models vote on it)")
    p.add_argument("--score", choices=("raw", "mstd", "mstd_nocap", "q123", "ri", "mahalanobis"),
                   default="ri")
    p.add_argument("--norm", choices=("zscore", "minmax", "none"), default="zscore")
    p.add_argument("--ct", type=float, default=1.0)
    p.add_argument("--model", choices=("nam", "logreg"), default="nam")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--arch", choices=tuple(ARCHS), default=_NAM.subnet_arch)
    p.add_argument("--activation", choices=ACTIVATIONS, default=_NAM.activation)
    p.add_argument("--learning-rate", type=float, default=_NAM.learning_rate)
    p.add_argument("--dropout", type=float, default=_NAM.dropout_p)
    p.add_argument("--feature-dropout", type=float, default=_NAM.feature_dropout_p)
    p.add_argument("--weight-decay", type=float, default=_NAM.weight_decay)
    p.add_argument("--output-penalty", type=float, default=_NAM.output_penalty)
    p.add_argument("--batch-size", type=int, default=_NAM.batch_size)
    p.add_argument("--epochs", type=int, default=_NAM.epochs)
    p.add_argument("--patience", type=int, default=_NAM.patience)
    p.add_argument("--ensemble-size", type=int, default=_NAM.ensemble_size)
    p.add_argument("--l2", type=float, default=1e-3, help="logistic-regression penalty")
    p.add_argument("--tune-budget", type=int, default=0)
    p.add_argument("--tune-strategy", choices=("random", "gp_ei"), default="random")
    p.add_argument("--figure-compat", action="store_true",
                   help="normalize with every control of the table instead of training-fold controls")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", parents=[common], help="synthetic audio and feature corpora")
    p.add_argument("--profile", choices=("vowel", "silence", "speech", "two_class", "transcripts"),
                   default="vowel")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--jitter", type=float, default=1.0, help="local jitter in percent")
    p.add_argument("--shimmer", type=float, default=3.0, help="local shimmer in percent")
    p.add_argument("--snr", type=float, default=None, help="additive noise SNR in dB")
    p.add_argument("--f0", type=float, default=120.0)
    p.add_argument("--formants", type=float, nargs="*", default=[],
                   help="formant frequencies in Hz (none gives an unfiltered pulse train)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("radar", parents=[common], help="radar chart of a reference model")
    p.add_argument("--reference", required=True)
    p.add_argument("--table", help="table whose label groups are overlaid")
    p.set_defaults(func=cmd_radar)

    p = sub.add_parser("explain", parents=[common], help="per-sample contributions of a model")
    p.add_argument("--reference", required=True)
    p.add_argument("--detect-dir", required=True, help="output directory of a detect run")
    p.add_argument("--table", required=True)
    p.add_argument("--train-table", help="table providing control strata for normalization")
    p.set_defaults(func=cmd_explain)
    return parser


def _manifest_config(args):
    skip = {"func", "out", "threads", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, _manifest_config(args), [], args.seed)
        artifacts, inputs = args.func(args)
        manifest.artifacts, manifest.inputs = list(artifacts), [str(p) for p in inputs]
        manifest.write(out)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except RefSpeechError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
