"""Command-line front end: scenario synthesis, calibration runs, evaluation
against reference data, and report consolidation.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure of a full (non-subset) calibration. Per-subset failures are recorded
in the report without aborting the remaining subsets.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import datafiles
from .dataset import Dataset
from .exceptions import CalibrationError, DataError, ScenarioError
from .metrics import MappingErrorConfig, mapping_error, test_error, training_rmse
from .solver import ConvergenceStatus, SolverConfig, calibrate
from .synth import generate_rig_scenario, generate_scenario, sample_subsets
from .target import DeformationModel, TargetSpec

_MODEL_BY_NAME = {
    "standard": DeformationModel.STANDARD,
    "static": DeformationModel.STATIC,
    "dynamic": DeformationModel.DYNAMIC,
    "full": DeformationModel.FULL,
}

_WORKERS_ENV = "DEFORMCAL_WORKERS"


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    value = os.environ.get(_WORKERS_ENV)
    if value is None:
        return 1
    try:
        workers = int(value)
    except ValueError:
        raise DataError(f"{_WORKERS_ENV} must be an integer, got {value!r}")
    if workers < 1:
        raise DataError(f"{_WORKERS_ENV} must be positive, got {workers}")
    return workers


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deformcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset from a scenario file")
    p_synth.add_argument("config", help="scenario config file (JSON)")
    p_synth.add_argument("--output", "-o", required=True, help="dataset file to write")
    p_synth.add_argument("--truth", help="ground-truth file to write "
                         "(default: dataset path with a .truth.json suffix)")
    p_synth.set_defaults(func=cmd_synth)

    p_cal = sub.add_parser("calibrate", help="calibrate a dataset and write a report")
    p_cal.add_argument("dataset", help="dataset file (JSON)")
    p_cal.add_argument("--method", required=True, choices=sorted(_MODEL_BY_NAME),
                       help="deformation model to fit")
    p_cal.add_argument("--output", "-o", required=True, help="report file to write")
    p_cal.add_argument("--subsets", type=int, help="number of random frame subsets to calibrate")
    p_cal.add_argument("--subset-size", type=int, help="frames per subset")
    p_cal.add_argument("--seed", type=int, default=0, help="subset sampling seed")
    p_cal.add_argument("--kernel", choices=["none", "cauchy"], default="none",
                       help="robust kernel for the refinement")
    p_cal.add_argument("--kernel-scale", type=float, default=1.0,
                       help="kernel scale in pixels")
    p_cal.add_argument("--max-iters", type=int, default=200,
                       help="iteration cap for the refinement")
    p_cal.add_argument("--workers", type=int,
                       help=f"parallel subset workers (default 1, or ${_WORKERS_ENV})")
    p_cal.set_defaults(func=cmd_calibrate)

    p_eval = sub.add_parser("evaluate", help="add test-error and mapping-error columns")
    p_eval.add_argument("input", help="report file, or ground-truth file for its intrinsics")
    p_eval.add_argument("--output", "-o", required=True, help="report file to write")
    p_eval.add_argument("--reference", help="reference dataset file for test error")
    p_eval.add_argument("--reference-intrinsics",
                        help="ground-truth file whose intrinsics anchor the mapping error")
    p_eval.add_argument("--grid-res", type=int, default=50,
                        help="mapping-error grid resolution per axis")
    p_eval.add_argument("--depth", type=float, default=1.0,
                        help="mapping-error evaluation depth in meters")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="consolidate reports into a CSV table")
    p_cmp.add_argument("reports", nargs="+", help="report files to consolidate")
    p_cmp.add_argument("--output", "-o", help="CSV file to write (default: stdout)")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def cmd_synth(args) -> int:
    config, relative_poses = datafiles.load_scenario(args.config)
    truth_path = args.truth
    if truth_path is None:
        out = Path(args.output)
        truth_path = out.with_suffix(".truth.json") if out.suffix else out.with_name(
            out.name + ".truth.json")
    if relative_poses is None:
        dataset, truth = generate_scenario(config)
        datafiles.save_dataset(args.output, dataset, config.spec)
        written = [str(args.output)]
    else:
        datasets, truth = generate_rig_scenario(config, relative_poses)
        out = Path(args.output)
        written = []
        for k, dataset in enumerate(datasets):
            path = out.with_name(f"{out.stem}.cam{k}{out.suffix or '.json'}")
            datafiles.save_dataset(path, dataset, config.spec)
            written.append(str(path))
    datafiles.save_ground_truth(truth_path, truth, config.spec)
    for path in written:
        print(f"wrote {path}")
    print(f"wrote {truth_path}")
    return 0


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(
            max_iterations=args.max_iters,
            kernel=args.kernel,
            kernel_scale=args.kernel_scale,
        )
    except ValueError as exc:
        raise DataError(str(exc))


def _run_row(run: int, dataset: Dataset, spec: TargetSpec, model: DeformationModel,
             config: SolverConfig, subset) -> dict:
    try:
        result = calibrate(dataset, spec, model, config)
    except CalibrationError as exc:
        return datafiles.make_run_row(
            run, subset=subset, status="failed", error=str(exc))
    max_dz = None
    if result.paraboloids is not None:
        max_dz = [p.max_offset(spec) for p in result.paraboloids]
    return datafiles.make_run_row(
        run,
        subset=subset,
        status=result.status.name.lower(),
        rmse_train=training_rmse(result),
        intrinsics=result.intrinsics,
        max_abs_deformation=max_dz,
    )


def _subset_job(payload) -> dict:
    run, dataset, spec, model, config, subset = payload
    return _run_row(run, dataset, spec, model, config, subset)


def cmd_calibrate(args) -> int:
    if (args.subsets is None) != (args.subset_size is None):
        raise DataError("--subsets and --subset-size must be given together")
    dataset, spec = datafiles.load_dataset(args.dataset)
    model = _MODEL_BY_NAME[args.method]
    config = _solver_config(args)
    label = Path(args.dataset).name
    if args.subsets is None:
        row = _run_row(0, dataset, spec, model, config, subset=None)
        report = datafiles.make_report(args.method, label, [row])
        datafiles.save_report(args.output, report)
        print(f"wrote {args.output}")
        if row["error"] is not None or row["status"] in ("diverged", "rank_deficient"):
            print(f"calibration failed: {row['error'] or row['status']}", file=sys.stderr)
            return 3
        return 0
    workers = args.workers if args.workers is not None else _default_workers()
    if workers < 1:
        raise DataError("--workers must be positive")
    try:
        subsets = sample_subsets(dataset, args.subsets, args.subset_size, args.seed)
    except ValueError as exc:
        raise DataError(str(exc))
    jobs = [
        (run, dataset.subset(idx), spec, model, config, [int(i) for i in idx])
        for run, idx in enumerate(subsets)
    ]
    if workers == 1:
        rows = [_subset_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_subset_job, jobs))
    report = datafiles.make_report(args.method, label, rows)
    datafiles.save_report(args.output, report)
    print(f"wrote {args.output}")
    return 0


def _evaluation_rows(path) -> tuple[str, str, list[dict]]:
    obj = datafiles._read(path)
    schema = obj.get("schema")
    if schema == datafiles.REPORT_SCHEMA:
        report = datafiles.load_report(path)
        return report["method"], report["dataset"], report["runs"]
    if schema == datafiles.GROUNDTRUTH_SCHEMA:
        truth, _ = datafiles.load_ground_truth(path)
        row = datafiles.make_run_row(0, status="reference", intrinsics=truth.intrinsics)
        return "reference", Path(path).name, [row]
    raise DataError(f"{path}: expected a report or ground-truth file, found {schema!r}")


def cmd_evaluate(args) -> int:
    if args.reference is None and args.reference_intrinsics is None:
        raise DataError("nothing to evaluate: pass --reference and/or --reference-intrinsics")
    method, label, rows = _evaluation_rows(args.input)
    reference = spec = None
    if args.reference is not None:
        reference, spec = datafiles.load_dataset(args.reference)
    anchor = map_config = None
    if args.reference_intrinsics is not None:
        anchor_truth, _ = datafiles.load_ground_truth(args.reference_intrinsics)
        anchor = anchor_truth.intrinsics
        width, height = anchor_truth.image_size
        try:
            map_config = MappingErrorConfig(width, height, args.grid_res, args.depth)
        except ValueError as exc:
            raise DataError(str(exc))
    out_rows = []
    for row in rows:
        row = dict(row)
        if row.get("intrinsics") is not None:
            intr = datafiles._intrinsics_from_json(row["intrinsics"], "intrinsics")
            if reference is not None:
                try:
                    row["rmse_test"] = test_error(intr, reference, spec)
                except CalibrationError as exc:
                    row["error"] = f"test error failed: {exc}"
            if anchor is not None:
                row["mapping_error"] = mapping_error(anchor, intr, map_config).rmse
        out_rows.append(row)
    report = datafiles.make_report(method, label, out_rows)
    datafiles.save_report(args.output, report)
    print(f"wrote {args.output}")
    return 0


def cmd_compare(args) -> int:
    reports = [datafiles.load_report(path) for path in args.reports]
    table = datafiles.consolidate_reports(reports)
    if args.output is None:
        sys.stdout.write(table)
    else:
        Path(args.output).write_text(table, encoding="utf-8")
        print(f"wrote {args.output}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
