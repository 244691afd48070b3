"""``bench`` command line: synthesize datasets, run the benchmark, analyze scores.

Exit codes: 0 success, 1 usage error, 2 data error (or every cell failed),
3 finished with some cells missing.  ``BENCH_LOG`` sets the console log
level (default WARNING); ``run.log`` always records INFO and above.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__, dataio, kernels, metastats
from .errors import BenchError, InvalidSpec, TooFewPipelines
from .evaluate import (
    ScoreRow,
    aggregate_sessions,
    evaluate_subject,
    read_scores_csv,
    scores_csv_text,
)
from .pipelines import PipelineSpec, load_pipelines
from .preprocess import ParadigmConfig, load_paradigm, prepare

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3
CHANCE_LEVEL = 0.5
STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))

log = logging.getLogger("mibench.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(logfile=None):
    level_name = os.environ.get("BENCH_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    root = logging.getLogger("mibench")
    root.handlers.clear()
    root.setLevel(logging.DEBUG)
    root.propagate = False
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        fh.setLevel(min(level, logging.INFO))
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)
    if not isinstance(logging.getLevelName(level_name), int):
        log.warning("unknown BENCH_LOG level %r, using WARNING", level_name)


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(float(f"{x:.9g}"))
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    specs = dataio.load_synth_specs(args.spec)
    out = Path(args.out)
    for spec in specs:
        descriptor, recordings = dataio.generate_synthetic(spec)
        path = dataio.write_dataset(descriptor, recordings, out / spec.dataset_id)
        n_sessions = sum(len(s) for s in descriptor.subjects.values())
        print(f"{descriptor.dataset_id}: {len(descriptor.subjects)} subjects, {n_sessions} sessions, "
              f"{len(descriptor.channel_names)} channels at {descriptor.sampling_rate_hz:g} Hz, "
              f"snr={spec.snr:g} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

class _Capture(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.records = []

    def emit(self, record):
        self.records.append((record.levelno, record.name, record.getMessage()))


def run_subject(task):
    """Evaluate every pipeline on every session of one subject.

    ``task`` is (data path, subject id, paradigm dict, pipeline dicts,
    run seed).  Returns (rows, captured log records).
    """
    path, subject, paradigm_d, pipeline_ds, run_seed = task
    logger = logging.getLogger("mibench")
    capture = _Capture()
    saved = logger.handlers[:], logger.propagate, logger.level
    logger.handlers, logger.propagate = [capture], False
    logger.setLevel(logging.DEBUG)
    try:
        paradigm = _paradigm_from_dict(paradigm_d)
        pipes = [_pipeline_from_dict(d).resolve(paradigm.bands) for d in pipeline_ds]
        descriptor, recordings = dataio.read_dataset(path, subjects=[subject])
        window = paradigm.window_for(descriptor)
        rows = []
        for session, rec in recordings[subject].items():
            views = {}
            try:
                for p in pipes:
                    if p.view not in views:
                        views[p.view] = prepare(rec, p.view, paradigm.resample_hz, window, descriptor.classes)
            except BenchError as exc:
                logger.getChild("cli").warning(
                    "%s/%s/%s preprocessing failed: %s", descriptor.dataset_id, subject, session, exc)
                rows.extend(ScoreRow(descriptor.dataset_id, subject, session, p.name, None, 0) for p in pipes)
                continue
            rows.extend(evaluate_subject(
                {session: views}, pipes, run_seed=run_seed,
                dataset_id=descriptor.dataset_id, subject_id=subject,
            ))
        return rows, capture.records
    finally:
        logger.handlers, logger.propagate = saved[0], saved[1]
        logger.setLevel(saved[2])


def _paradigm_from_dict(d) -> ParadigmConfig:
    return ParadigmConfig(tuple(tuple(b) for b in d["bands"]), d["resample_hz"], d.get("epoch_window_s") or {})


def _pipeline_from_dict(d) -> PipelineSpec:
    return PipelineSpec(d["name"], d["feature"], d["classifier"], d.get("bands"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_manifest(data, paradigm, pipes, seed, jobs) -> dict:
    return {
        "mibench_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": kernels.BACKEND,
        "seed": seed,
        "jobs": jobs,
        "data": data,
        "paradigm": paradigm.to_dict(),
        "pipelines": [p.to_dict() for p in pipes],
    }


def _load_run_config(args):
    """Return (data entries, paradigm, pipelines, seed) from flags or a manifest."""
    if args.manifest:
        try:
            m = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            data = m["data"]
            paradigm = _paradigm_from_dict(m["paradigm"])
            pipes = [_pipeline_from_dict(d) for d in m["pipelines"]]
            seed = int(m["seed"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot use run manifest {args.manifest}: {exc}") from None
        for entry in data:
            manifest = Path(entry["path"]) / dataio.MANIFEST_NAME
            if not manifest.is_file():
                raise UsageError(f"dataset {entry['path']} from the run manifest does not exist")
            if _sha256(manifest) != entry["manifest_sha256"]:
                raise InvalidSpec(f"dataset {entry['path']} changed since the recorded run")
        return data, paradigm, pipes, seed
    missing = [o for o in ("data", "pipelines", "paradigm") if not getattr(args, o)]
    if missing:
        raise UsageError("run needs --" + ", --".join(missing) + " (or --manifest)")
    for p in [*args.data, args.pipelines, args.paradigm]:
        if not Path(p).exists():
            raise UsageError(f"path does not exist: {p}")
    paradigm = load_paradigm(args.paradigm)
    pipes = load_pipelines(args.pipelines)
    data = []
    for d in args.data:
        root = Path(d).resolve()
        descriptor, _ = dataio.read_dataset(root, subjects=[])
        data.append({"path": str(root), "dataset_id": descriptor.dataset_id,
                     "manifest_sha256": _sha256(root / dataio.MANIFEST_NAME)})
    ids = [e["dataset_id"] for e in data]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("dataset ids must be unique within a run")
    seed = args.seed
    if not 0 <= seed < 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return data, paradigm, pipes, seed


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup_logging(out / "run.log")
    data, paradigm, pipes, seed = _load_run_config(args)
    for p in pipes:
        p.resolve(paradigm.bands)  # compatibility check up front
    jobs = max(1, int(args.jobs))
    manifest = _run_manifest(data, paradigm, pipes, seed, jobs)
    _write_text(out / "run-manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    paradigm_d = paradigm.to_dict()
    pipeline_ds = [p.to_dict() for p in pipes]
    tasks = []
    for entry in data:
        descriptor, _ = dataio.read_dataset(entry["path"], subjects=[])
        tasks.extend((entry["path"], sid, paradigm_d, pipeline_ds, seed) for sid in descriptor.subjects)
    log.info("run: %d subject tasks, %d pipelines, seed %d, %d job(s)", len(tasks), len(pipes), seed, jobs)

    start = time.perf_counter()
    if jobs == 1:
        results = map(run_subject, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(run_subject, tasks)
    rows = []
    try:
        for task_rows, records in results:
            rows.extend(task_rows)
            for level, name, msg in records:
                logging.getLogger(name).log(level, msg)
    finally:
        if jobs > 1:
            pool.shutdown()
    _write_text(out / "scores.csv", scores_csv_text(rows))
    missing = sum(r.score is None for r in rows)
    log.info("run finished: %d cells, %d missing, %.1fs", len(rows), missing, time.perf_counter() - start)
    print(f"{len(rows)} cells scored ({missing} missing) -> {out / 'scores.csv'}")
    if rows and missing == len(rows):
        return EXIT_DATA
    return EXIT_PARTIAL if missing else EXIT_OK


# ---------------------------------------------------------------------------
# stats

def stars(p: float) -> str:
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _summary_rows(subject_rows, pipelines):
    out = []
    for ds in sorted({r[0] for r in subject_rows}):
        for p in pipelines:
            vals = np.array([r[3] for r in subject_rows if r[0] == ds and r[2] == p and r[3] is not None])
            if vals.size == 0:
                out.append((ds, p, 0, None, None, None, None, None, CHANCE_LEVEL))
                continue
            out.append((ds, p, int(vals.size), float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                        float(vals.min()), float(np.median(vals)), float(vals.max()), CHANCE_LEVEL))
    return out


def _matrix_markdown(report: metastats.MetaReport) -> str:
    names = report.pipelines
    lines = [
        f"Pairwise meta-analysis (row > column), alpha = {report.alpha:g}, Bonferroni m = {len(names) - 1}.",
        "Cells show the combined SMD with stars for the corrected p-value "
        "(*** p < 0.001, ** p < 0.01, * p < 0.05); cells without a positive effect are left blank.",
        "",
        "| a \\ b | " + " | ".join(names) + " |",
        "|---|" + "---|" * len(names),
    ]
    for a in names:
        cells = []
        for b in names:
            res = report.combined.get(metastats.hypothesis_key(a, b))
            if a == b or res is None or res.suppressed or not res.smd > 0:
                cells.append("")
            else:
                cells.append(f"{res.smd:.2f}{stars(res.p_corrected)}")
        lines.append(f"| {a} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_stats(args) -> int:
    out = Path(args.out)
    if not Path(args.scores).is_file():
        raise UsageError(f"scores file does not exist: {args.scores}")
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    out.mkdir(parents=True, exist_ok=True)
    setup_logging()
    rows = read_scores_csv(args.scores)
    subject_rows = aggregate_sessions(rows)
    pipelines = sorted({r.pipeline for r in rows})
    if len(pipelines) < 2:
        raise TooFewPipelines(f"need at least two pipelines, found {pipelines}")
    report = metastats.meta_analyze([r[:4] for r in subject_rows], pipelines, args.alpha)

    _write_text(out / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_text(out / "subject_scores.csv",
                _csv_text(("dataset", "subject", "pipeline", "score", "flagged"), subject_rows))
    summary = _summary_rows(subject_rows, pipelines)
    _write_text(out / "score_summary.csv", _csv_text(
        ("dataset", "pipeline", "n_subjects", "mean", "std", "min", "median", "max", "chance_level"), summary))
    effects = []
    for ds, hyps in sorted(report.per_dataset.items()):
        for key, r in sorted(hyps.items()):
            a, b = key.split(" > ")
            effects.append((ds, a, b, r.n, r.test, r.p, r.smd, r.ci_low, r.ci_high, ";".join(r.flags)))
    _write_text(out / "dataset_effects.csv", _csv_text(
        ("dataset", "pipeline_a", "pipeline_b", "n", "test", "p", "smd", "ci_low", "ci_high", "flags"), effects))
    matrix = [
        (r.pipeline_a, r.pipeline_b, r.n_datasets, r.p, r.p_corrected, r.smd, stars(r.p_corrected),
         r.significant, r.suppressed)
        for _, r in sorted(report.combined.items())
    ]
    _write_text(out / "meta_matrix.csv", _csv_text(
        ("pipeline_a", "pipeline_b", "n_datasets", "p", "p_corrected", "smd", "stars", "significant", "suppressed"),
        matrix))

    table = ["| dataset | pipeline | n | mean AUC | std |", "|---|---|---|---|---|"]
    for ds, p, n, mean, sd, *_ in summary:
        table.append(f"| {ds} | {p} | {n} | {'' if mean is None else f'{mean:.3f}'} | "
                     f"{'' if sd is None else f'{sd:.3f}'} |")
    text = (
        "# Benchmark summary\n\n"
        f"Chance level AUC = {CHANCE_LEVEL}.\n\n" + "\n".join(table) + "\n\n" + _matrix_markdown(report)
    )
    _write_text(out / "summary.md", text)
    n_sig = sum(r.significant for r in report.combined.values())
    print(f"{len(report.combined)} hypotheses, {n_sig} significant at alpha={args.alpha:g} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description="Motor-imagery pipeline benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic dataset containers")
    p.add_argument("--spec", required=True, help="YAML/JSON synthetic spec (one or a 'datasets' list)")
    p.add_argument("--out", required=True, help="output directory; one container per dataset id")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="cross-validate pipelines over datasets")
    p.add_argument("--data", nargs="+", help="dataset container directories")
    p.add_argument("--pipelines", help="pipeline spec file or directory of *.yaml")
    p.add_argument("--paradigm", help="paradigm YAML file")
    p.add_argument("--seed", type=int, default=0, help="run seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", help="replay a previous run-manifest.json instead of the flags above")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", help="meta-analyze a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BenchError as exc:
        print(f"bench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
