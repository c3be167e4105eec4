"""Command-line harness: simulate, run, eval, equiv-check, version.

Exit codes: 0 success, 1 usage, 2 data error, 3 divergence or a failed
equivalence check. Every failure prints one line on stderr that starts with
``error[<reason>]:``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .equivalence import KINDS as CHECKS
from .equivalence import equiv_check
from .estimators.schedule import KINDS, EstimatorSchedule, ScheduleError
from .estimators.window import FEATURE_POLICIES
from .experiment import FORMS, ConfigError, ExperimentConfig, evaluate_estimate, run_experiment
from .io import MODELS, DataError, load_dataset, read_config, read_csv
from .metrics import MetricsError
from .sim import SimConfig, gen_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
_UNSET = object()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        kwargs.setdefault("add_help", False)
        super().__init__(*args, **kwargs)
        self.add_argument("--help", action="help", help="show this message and exit")

    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _gn_iters(text):
    if text in ("converge", "none"):
        return None
    return _positive_int(text)


def build_parser():
    p = _Parser(prog="unislam", description="SLAM back-ends as Gauss-Newton and marginalization schedules.")
    sub = p.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--model", choices=MODELS, default="planar2d")
    s.add_argument("--steps", type=_positive_int)
    s.add_argument("--dt", type=float)
    s.add_argument("--landmarks", type=_positive_int, dest="n_landmarks")
    s.add_argument("--trajectory", choices=("circle", "line"))
    s.add_argument("--measurement", choices=("relative", "body"))
    s.add_argument("--noise-free", action="store_true")
    s.add_argument("--config", help="key=value file with further simulator settings")

    r = sub.add_parser("run", help="run one estimator on a dataset")
    r.add_argument("--dataset", required=True)
    r.add_argument("--estimator", required=True, choices=KINDS)
    r.add_argument("--n", type=_positive_int, help="window size")
    r.add_argument("--k", type=int, help="keyframe window")
    r.add_argument("--n-max", type=_positive_int, dest="n_max", help="MSCKF pose limit")
    r.add_argument("--gn-iters", type=_gn_iters, dest="gn_iters", default=_UNSET,
                   help="Gauss-Newton steps per frame, or 'converge'")
    r.add_argument("--feature-policy", choices=FEATURE_POLICIES, dest="feature_policy")
    r.add_argument("--threshold", type=float, help="keyframe match-ratio threshold")
    r.add_argument("--form", choices=FORMS, default="optimization")
    r.add_argument("--seed", type=int, default=42)
    r.add_argument("--sigma-v", type=float, dest="sigma_v")
    r.add_argument("--sigma-w-xy", type=float, dest="sigma_w_xy")
    r.add_argument("--sigma-w-theta", type=float, dest="sigma_w_theta")
    r.add_argument("--pixel-sigma", type=float, dest="pixel_sigma")
    r.add_argument("--prior-sigma", type=float, dest="prior_sigma", default=1e-3)
    r.add_argument("--out", help="directory for estimate.csv, metrics.json, drift.csv, run.log")

    e = sub.add_parser("eval", help="score an estimate file against a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--estimate", required=True)
    e.add_argument("--out", help="write the metrics JSON here as well")

    q = sub.add_parser("equiv-check", help="compare classical and optimization sub-steps")
    q.add_argument("--kind", required=True, choices=CHECKS + ("all",))
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)

    sub.add_parser("version", help="print the version")
    return p


# --- verbs ----------------------------------------------------------------------

def _simulate(a, out):
    settings = read_config(a.config) if a.config else {}
    known = set(SimConfig().to_dict())
    unknown = sorted(set(settings) - known)
    if unknown:
        raise UsageError(f"unknown simulator setting(s) in {a.config}: {', '.join(unknown)}")
    settings.update({"seed": a.seed, "model": a.model})
    for key in ("steps", "dt", "n_landmarks", "trajectory", "measurement"):
        v = getattr(a, key)
        if v is not None:
            settings[key] = v
    if a.noise_free:
        settings["noise_free"] = True
    try:
        cfg = SimConfig.from_dict(settings)
        ds = gen_dataset(cfg, a.out)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"wrote {ds.model} dataset: {ds.n_frames} frames, {len(ds.track_t)} measurements -> {a.out}", file=out)
    return EXIT_OK


def _run(a, out):
    sched = EstimatorSchedule.preset(a.estimator, n=a.n, k=a.k, n_max=a.n_max,
                                     feature_policy=a.feature_policy, threshold=a.threshold)
    if a.gn_iters is not _UNSET:
        sched = sched.with_(gn_iters=a.gn_iters)
    cfg = ExperimentConfig(a.dataset, sched, a.out, a.form, a.seed, a.sigma_v, a.sigma_w_xy,
                           a.sigma_w_theta, a.pixel_sigma, a.prior_sigma)
    res = run_experiment(cfg)
    m = res.metrics
    print(f"{m['estimator']}: translation RMSE {m['translation_rmse_m']} m, rotation RMSE "
          f"{m['rotation_rmse_deg']} deg, dead reckoning {m['dead_reckoning']['translation_rmse_m']} m",
          file=out)
    if res.diverged:
        raise _Diverged(m["divergence_reason"])
    return EXIT_OK


def _eval(a, out):
    ds = load_dataset(a.dataset)
    rows = read_csv(Path(a.estimate), "estimate", ds.model)
    if len(rows) == 0:
        raise DataError(f"{a.estimate}: no estimate rows")
    metrics = evaluate_estimate(ds, rows)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    out.write(text)
    return EXIT_OK


def _equiv(a, out):
    if a.trials < 1:
        raise UsageError(f"--trials must be at least 1, got {a.trials}")
    kinds = CHECKS if a.kind == "all" else (a.kind,)
    failed = []
    for kind in kinds:
        rep = equiv_check(kind, a.trials, a.seed)
        for line in rep.lines():
            print(line, file=out)
        if not rep.passed:
            failed.append(kind)
    if failed:
        raise _Inequivalent(f"discrepancy above tolerance in {', '.join(failed)}")
    return EXIT_OK


class _Diverged(Exception):
    pass


class _Inequivalent(Exception):
    pass


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)

    def fail(reason, msg, code):
        text = " ".join(str(msg).split())
        print(f"error[{reason}]: {text}", file=err)
        return code

    try:
        a = build_parser().parse_args(argv)
        if a.verb is None:
            raise UsageError("a verb is required: simulate, run, eval, equiv-check or version")
        if a.verb == "version":
            print(f"unislam {__version__}", file=out)
            return EXIT_OK
        return {"simulate": _simulate, "run": _run, "eval": _eval, "equiv-check": _equiv}[a.verb](a, out)
    except (UsageError, ConfigError, ScheduleError) as exc:
        return fail("usage", exc, EXIT_USAGE)
    except (DataError, MetricsError, FileNotFoundError) as exc:
        return fail("data", exc, EXIT_DATA)
    except _Diverged as exc:
        return fail("divergence", exc, EXIT_DIVERGED)
    except _Inequivalent as exc:
        return fail("equivalence", exc, EXIT_DIVERGED)


if __name__ == "__main__":
    sys.exit(main())
