"""Command-line interface.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure (missing, unreadable
or malformed files), 4 validation failure (frame or configuration invalid).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import evaluation
from .bow import Vocabulary
from .database import ConfigMismatch, DescriptorConfig, TrajectoryDatabase, build_database, train_vocabulary_from_trajectory
from .localization import localize
from .model import MissingModalityError, Modality, QueryParams, ValidationError, load_trajectory, write_trajectory
from .synth import SynthSpec, perturb_trajectory, synth_trajectory

log = logging.getLogger("keypos")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4
OUTPUT_VERSION = 1


class UsageError(Exception):
    pass


class FileFormatError(OSError):
    pass


def _load_vocab(path: str) -> Vocabulary:
    try:
        return Vocabulary.load(path)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def _load_db(path: str) -> TrajectoryDatabase:
    try:
        return TrajectoryDatabase.load(path)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_query_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("query parameters")
    g.add_argument("--k-gist", type=int, default=5)
    g.add_argument("--k-ldb", type=int, default=5)
    g.add_argument("--k-bow", type=int, default=5)
    g.add_argument("--radius-m", type=float, default=30.0, help="GNSS radius in metres")
    g.add_argument("--legacy-r-deg", type=float, default=None, metavar="DEG",
                   help="radius in raw lat/lon degrees; overrides --radius-m")
    g.add_argument("--vote-n", type=int, default=5, help="key-position vote threshold")
    g.add_argument("--modalities", choices=[m.value for m in Modality], default=None,
                   help="LDB modalities expected of the database (default: as built)")


def _params(args) -> QueryParams:
    legacy = args.legacy_r_deg is not None
    try:
        return QueryParams(
            k_gist=args.k_gist, k_ldb=args.k_ldb, k_bow=args.k_bow,
            radius=args.legacy_r_deg if legacy else args.radius_m,
            legacy_degree_radius=legacy,
            vote_threshold=args.vote_n,
            modalities=Modality(args.modalities) if args.modalities else None,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be positive")
    if args.perturb_from:
        base = load_trajectory(args.perturb_from)
        traj = perturb_trajectory(base, args.noise_sigma, args.gain, args.seed, args.reverse)
    else:
        traj = synth_trajectory(SynthSpec.default(args.frames, args.seed, args.keys))
    index = write_trajectory(traj, args.out)
    print(f"wrote {len(traj)} frames to {index}")
    return EXIT_OK


def cmd_train_vocab(args) -> int:
    traj = load_trajectory(args.index)
    config = DescriptorConfig(ldb_modalities=Modality(args.modalities or "rgb-ir-d"))
    t0 = time.perf_counter()
    vocab = train_vocabulary_from_trajectory(traj, config, args.branching, args.depth, args.seed)
    vocab.save(args.out)
    print(f"vocabulary: {vocab.n_words} words from {vocab.n_images} images "
          f"in {time.perf_counter() - t0:.1f} s -> {args.out}")
    return EXIT_OK


def cmd_build_db(args) -> int:
    traj = load_trajectory(args.index)
    config = DescriptorConfig(ldb_modalities=Modality(args.modalities))
    t0 = time.perf_counter()
    if args.train_vocab_inline:
        vocab = train_vocabulary_from_trajectory(traj, config, args.branching, args.depth, args.seed)
    elif args.vocab:
        vocab = _load_vocab(args.vocab)
    else:
        raise UsageError("build-db needs --vocab or --train-vocab-inline")
    t_vocab = time.perf_counter() - t0
    timings: dict = {}
    db = build_database(traj, vocab, config, timings=timings)
    db.save(args.out)
    print(f"frames: {len(db)}")
    print(f"vocabulary_s: {t_vocab:.2f}")
    print(f"extract_ms_per_frame: {timings['extract_ms'] / len(db):.1f}")
    print(f"index_ms: {timings['index_ms']:.1f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_query(args) -> int:
    db = _load_db(args.db)
    params = _params(args)
    traj = load_trajectory(args.index)
    frames = traj.frames
    if args.frame is not None:
        by_index = {f.index: f for f in frames}
        missing = [i for i in args.frame if i not in by_index]
        if missing:
            raise UsageError(f"frames {missing} not in {args.index}")
        frames = [by_index[i] for i in args.frame]
    for f in frames:
        res = localize(db, f, params)
        row = {
            "queryId": f.index,
            "matched": res.matched,
            "isKey": res.is_key_position,
            "votes": res.votes,
            "nearestIndex": res.nearest_index,
            "elapsedMs": round(res.timings["total_ms"], 3),
        }
        if args.json:
            print(json.dumps(row, sort_keys=False))
        else:
            print(" ".join(f"{k}={_plain(v)}" for k, v in row.items()))
    return EXIT_OK


def _plain(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if v is None:
        return "-"
    return str(v)


def _metric(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def cmd_evaluate(args) -> int:
    db = _load_db(args.db)
    params = _params(args)
    queries = load_trajectory(args.queries)
    records = evaluation.evaluate(db, queries, params, args.alignment)
    m = evaluation.summarize(records)
    header = ["queries", "error", "sensitivity", "precision", "recall", "f1", "key_position_error", "tp", "fp", "fn", "tn"]
    values = [str(m[h]) if isinstance(m[h], int) else _metric(m[h]) for h in header]
    text = ",".join(header) + "\n" + ",".join(values) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_grid_search(args) -> int:
    db = _load_db(args.db)
    queries = load_trajectory(args.queries)
    legacy = args.legacy_r_deg is not None
    radii = args.legacy_r_deg if legacy else args.radius_m
    try:
        rows, best = evaluation.grid_search(
            db, queries, args.k_gist, args.k_ldb, args.k_bow, radii, args.vote_n,
            legacy_degree_radius=legacy, alignment=args.alignment,
        )
    except ValueError as exc:
        if isinstance(exc, (ValidationError, ConfigMismatch, MissingModalityError)):
            raise
        raise UsageError(str(exc)) from exc
    csv_path, svg_path = evaluation.emit_results(rows, args.out)
    p = best.params
    best_json = {
        "k_gist": p.k_gist, "k_ldb": p.k_ldb, "k_bow": p.k_bow,
        "radius": p.radius, "legacy_degree_radius": p.legacy_degree_radius, "n": p.vote_threshold,
        "precision": best.precision, "recall": best.recall, "f1": best.f1,
    }
    best_path = csv_path.with_name(csv_path.stem + "_best.json")
    best_path.write_text(json.dumps(best_json, indent=2) + "\n", encoding="utf-8")
    print(f"{len(rows)} cells -> {csv_path}, {svg_path}, {best_path}")
    print(f"best: {json.dumps(best_json)}")
    return EXIT_OK


def cmd_export_json(args) -> int:
    db = _load_db(args.db)
    text = json.dumps(db.to_json(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="keypos", description="Key-position localization toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"keypos output format {OUTPUT_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trajectory, or perturb an existing one")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--keys", type=int, default=3, help="number of key-position spans")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb-from", metavar="INDEX", help="perturb this trajectory instead of generating")
    p.add_argument("--noise-sigma", type=float, default=5 / 255)
    p.add_argument("--gain", type=float, default=1.3)
    p.add_argument("--reverse", action="store_true")
    p.set_defaults(func=cmd_synth)

    def vocab_flags(q):
        q.add_argument("--branching", type=int, default=9)
        q.add_argument("--depth", type=int, default=3)
        q.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-vocab", help="train a vocabulary tree on a trajectory")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modalities", choices=[m.value for m in Modality], default=None)
    vocab_flags(p)
    p.set_defaults(func=cmd_train_vocab)

    p = sub.add_parser("build-db", help="build a KPDB database file")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab")
    p.add_argument("--train-vocab-inline", action="store_true")
    p.add_argument("--modalities", choices=[m.value for m in Modality], default=Modality.RGB_IR_D.value)
    vocab_flags(p)
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("query", help="localize frames against a database")
    p.add_argument("--db", required=True)
    p.add_argument("--index", required=True, help="trajectory index holding the query frames")
    p.add_argument("--frame", type=int, action="append", help="only this frame index (repeatable)")
    p.add_argument("--json", action="store_true", help="one JSON object per line")
    _add_query_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="run a query trajectory and write a metrics CSV")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--alignment", choices=["aligned", "reverse"], default="aligned")
    p.add_argument("--out")
    _add_query_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid-search", help="sweep query parameters")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--alignment", choices=["aligned", "reverse"], default="aligned")
    p.add_argument("--out", required=True, help="results CSV path; .svg and _best.json written alongside")
    p.add_argument("--k-gist", type=_int_list, default=[5])
    p.add_argument("--k-ldb", type=_int_list, default=[5])
    p.add_argument("--k-bow", type=_int_list, default=[5])
    p.add_argument("--radius-m", type=_float_list, default=[30.0])
    p.add_argument("--legacy-r-deg", type=_float_list, default=None)
    p.add_argument("--vote-n", type=_int_list, default=[5])
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("export-json", help="dump a database as JSON for inspection")
    p.add_argument("--db", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_json)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"keypos {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (ValidationError, MissingModalityError, ConfigMismatch) as exc:
        print(f"keypos {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"keypos {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
