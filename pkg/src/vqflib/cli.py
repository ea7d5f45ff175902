"""Command-line interface: ``vqflib run | synth | eval``.

Exit codes: 0 success, 1 runtime error, 2 usage or input parsing error.
"""

import argparse
import csv
import dataclasses
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import BasicVQF
from .metrics import error_report
from .offline import offline_vqf
from .synth import bundled_spec_path, generate, load_spec, write_imu_csv, write_truth_csv
from .vqf import RECORD_DTYPE, VQF, VqfParams, parse_value

log = logging.getLogger("vqflib")

GYR = ["gyr_x", "gyr_y", "gyr_z"]
ACC = ["acc_x", "acc_y", "acc_z"]
MAG = ["mag_x", "mag_y", "mag_z"]
OUT_COLUMNS = (["q6_w", "q6_x", "q6_y", "q6_z", "q9_w", "q9_x", "q9_y", "q9_z", "delta",
                "bias_x", "bias_y", "bias_z", "bias_sigma", "rest", "mag_dist", "skipped"])
MAX_IRREGULARITY = 0.01


class UsageError(Exception):
    pass


def read_csv(path, required=(), numeric=True):
    """Read a headered numeric CSV into ``{column: array}``; errors carry line numbers."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise UsageError(f"{path}:1: missing column(s) {', '.join(missing)}")
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise UsageError(f"{path}:{lineno}: cannot parse {bad!r} as a number") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def sampling_time(cols, rate, path="input"):
    if "t" in cols and len(cols["t"]) >= 2:
        dt = np.diff(cols["t"])
        Ts = float(np.median(dt))
        if not Ts > 0:
            raise UsageError(f"{path}: time column is not increasing")
        irregular = float(np.max(np.abs(dt - Ts)) / Ts)
        if irregular > MAX_IRREGULARITY:
            raise UsageError(f"{path}: sampling is irregular ({irregular:.1%} deviation from the median interval)")
        if rate is not None and abs(1.0 / rate - Ts) > MAX_IRREGULARITY * Ts:
            log.warning("%s: --rate %g Hz ignored, time column gives %g Hz", path, rate, 1.0 / Ts)
        return Ts
    if rate is None:
        raise UsageError(f"{path}: no time column; pass --rate")
    return 1.0 / rate


def _stack(cols, names):
    return np.column_stack([cols[n] for n in names])


def run_filter(mode, gyr, acc, mag, Ts, params):
    """Run one recording through the chosen filter; returns a structured record array."""
    n = gyr.shape[0]
    if mode == "full":
        return VQF(Ts, params).update_batch(gyr, acc, mag)
    out = np.zeros(n, RECORD_DTYPE)
    if mode == "basic":
        res = BasicVQF(Ts, params.tau_acc, params.tau_mag).update_batch(gyr, acc, mag)
        out["q6"] = res["quat6"]
        out["q9"] = res["quat9"]
        out["delta"] = res["delta"]
        out["skipped"] = res["skipped"]
        return out
    # offline: non-finite samples cannot be skipped in a batch smoother, so hold the previous sample
    bad = ~(np.isfinite(gyr).all(1) & np.isfinite(acc).all(1) & (True if mag is None else np.isfinite(mag).all(1)))
    if bad.all():
        raise UsageError("no finite samples")
    if bad.any():
        idx = np.maximum.accumulate(np.where(~bad, np.arange(n), -1))
        first = int(np.argmax(~bad))
        idx[idx < 0] = first
        gyr, acc = gyr[idx], acc[idx]
        mag = None if mag is None else mag[idx]
    res = offline_vqf(gyr, acc, mag, Ts, params)
    out["q6"] = res.q6
    out["q9"] = res.q9
    out["delta"] = res.delta
    out["bias"] = res.bias
    out["bias_sigma"] = res.bias_sigma
    out["rest"] = res.rest
    out["mag_disturbed"] = res.mag_disturbed
    out["skipped"] = bad
    return out


def write_estimates(path, rec):
    data = np.column_stack([
        rec["q6"], rec["q9"], rec["delta"], rec["bias"], rec["bias_sigma"],
        rec["rest"].astype(int), rec["mag_disturbed"].astype(int), rec["skipped"].astype(int),
    ]).reshape(len(rec), len(OUT_COLUMNS))
    fmt = ["%.9g"] * 13 + ["%d"] * 3
    np.savetxt(path, data, delimiter=",", header=",".join(OUT_COLUMNS), comments="", fmt=fmt)


def process_file(src, dst, mode, rate, params):
    cols = read_csv(src, GYR + ACC)
    has_mag = all(c in cols for c in MAG)
    if any(c in cols for c in MAG) and not has_mag:
        raise UsageError(f"{src}: incomplete magnetometer columns")
    Ts = sampling_time(cols, rate, src)
    gyr = _stack(cols, GYR)
    acc = _stack(cols, ACC)
    mag = _stack(cols, MAG) if has_mag else None
    if mode == "offline" and gyr.shape[0] < 2:
        raise UsageError(f"{src}: offline mode needs at least 2 samples")
    rec = run_filter(mode, gyr, acc, mag, Ts, params)
    write_estimates(dst, rec)
    return int(rec["skipped"].sum())


def params_from_args(args):
    params = VqfParams()
    if args.params:
        path = Path(args.params)
        if not path.is_file():
            raise UsageError(f"{path}: no such file")
        try:
            params = VqfParams.from_text(path.read_text())
        except ValueError as e:
            raise UsageError(f"{path}: {e}") from None
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(VqfParams)
                 if getattr(args, f.name) is not None}
    try:
        return params.replace(**overrides)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_run(args):
    params = params_from_args(args)
    if args.rate is not None and not args.rate > 0:
        raise UsageError("--rate must be positive")
    inputs = [Path(p) for p in args.input]
    if len(inputs) == 1:
        jobs = [(inputs[0], Path(args.output))]
    else:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        jobs = [(p, outdir / f"{p.stem}_est.csv") for p in inputs]
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = [pool.submit(process_file, src, dst, args.mode, args.rate, params) for src, dst in jobs]
        skipped = [f.result() for f in futures]
    for (src, _), n in zip(jobs, skipped):
        if n:
            log.warning("%s: %d sample(s) with non-finite values were skipped", src, n)
    return 0


def cmd_synth(args):
    spec_arg = args.spec
    path = Path(spec_arg)
    if not path.is_file():
        path = bundled_spec_path(spec_arg)
        if path is None:
            raise UsageError(f"{spec_arg}: no such spec file or bundled spec")
    if args.rate is not None and not args.rate > 0:
        raise UsageError("--rate must be positive")
    try:
        spec, Ts = load_spec(path)
        if args.rate is not None:
            Ts = 1.0 / args.rate
        imu, truth = generate(spec, 0.01 if Ts is None else Ts)
    except (ValueError, TypeError) as e:
        raise UsageError(f"{path}: invalid spec: {e}") from None
    write_imu_csv(args.imu, imu, include_mag=not args.no_mag)
    write_truth_csv(args.truth, truth)
    return 0


def cmd_eval(args):
    est = read_csv(args.estimate)
    truth = read_csv(args.truth, ["q_w", "q_x", "q_y", "q_z"])
    key = args.quat
    qcols = [f"{key}_{c}" for c in "wxyz"]
    missing = [c for c in qcols if c not in est]
    if missing:
        raise UsageError(f"{args.estimate}: missing column(s) {', '.join(missing)}")
    n_est = len(est[qcols[0]])
    n_true = len(truth["q_w"])
    if n_est != n_true:
        raise UsageError(f"row count mismatch: {n_est} estimates vs {n_true} truth samples")
    if n_est == 0:
        raise UsageError("no samples to evaluate")
    q_est = _stack(est, qcols)
    q_ref = _stack(truth, ["q_w", "q_x", "q_y", "q_z"])
    if "rest" in truth:
        motion = truth["rest"] == 0
    else:
        log.warning("%s: no rest column, evaluating all samples", args.truth)
        motion = np.ones(n_est, dtype=bool)
    bias_cols = ["bias_x", "bias_y", "bias_z"]
    b_est = _stack(est, bias_cols) if all(c in est for c in bias_cols) else None
    b_true = _stack(truth, bias_cols) if all(c in truth for c in bias_cols) else None
    try:
        report = error_report(q_est, q_ref, motion, b_est, b_true)
    except ValueError as e:
        raise UsageError(str(e)) from None
    text = report.to_text()
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return 0


def _param_type(kind, name):
    def convert(text):
        try:
            return parse_value(kind, text, f"--{name}")
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return convert


def build_parser():
    parser = argparse.ArgumentParser(prog="vqflib", description="IMU orientation estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="estimate orientation from IMU CSV files")
    run.add_argument("input", nargs="+", help="input CSV file(s)")
    run.add_argument("-o", "--output", required=True,
                     help="output CSV (one input) or directory (several inputs)")
    run.add_argument("--mode", choices=["basic", "full", "offline"], default="full")
    run.add_argument("--rate", type=float, help="sampling rate in Hz if there is no t column")
    run.add_argument("--params", help="parameter file with 'key = value' lines")
    run.add_argument("-j", "--jobs", type=int, default=None, help="files processed in parallel")
    defaults = VqfParams()
    for name, kind in VqfParams.field_types().items():
        flag = name.replace("_", "-")
        run.add_argument(f"--{flag}", dest=name, type=_param_type(kind, flag), default=None,
                         metavar="BOOL" if kind is bool else "X",
                         help=f"default {getattr(defaults, name)}")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate synthetic IMU data and ground truth")
    synth.add_argument("spec", help="JSON trajectory file or name of a bundled spec")
    synth.add_argument("--imu", required=True, help="output IMU CSV")
    synth.add_argument("--truth", required=True, help="output ground-truth CSV")
    synth.add_argument("--rate", type=float, help="sampling rate in Hz (overrides the trajectory file)")
    synth.add_argument("--no-mag", action="store_true", help="omit magnetometer columns")
    synth.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="compare estimates with ground truth")
    ev.add_argument("estimate")
    ev.add_argument("truth")
    ev.add_argument("--quat", choices=["q9", "q6"], default="q9")
    ev.add_argument("--output", help="also write the report to this file")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
