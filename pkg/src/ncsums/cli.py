"""Command-line frontend: structure dumps, rate curves, and experiments.

All subcommands support --format csv|json.  CSV numeric fields use 9
significant digits; infinities print as "inf".  Outputs are byte-identical
across runs and thread counts once --no-timestamp is passed.  Exit codes:
0 success, 2 input error, 3 capacity/budget, 4 tolerance unreachable.
Errors additionally emit a one-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone

from . import erlaw as erlaw_mod
from . import lattice, model, rates, simulate
from .errors import CapacityError, InputError, ToleranceError

ENV_THREADS = "NCSUMS_THREADS"

STRUCTURE_N_LIMIT = 10**7


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return format(x, ".9g")
    return str(x)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return _fmt(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _parse_grid(text: str) -> list[float]:
    """A single value, a comma list, or start:stop:step (inclusive stop)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError(f"grid {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise InputError("grid step must be positive")
        out = []
        k = 0
        while True:
            v = start + k * step
            if v > stop + 1e-12 * max(1.0, abs(stop)):
                break
            out.append(v)
            k += 1
        if not out:
            raise InputError(f"grid {text!r} is empty")
        return out
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise InputError(f"cannot parse grid {text!r}: {exc}") from exc


def _parse_int_list(text: str) -> list[int]:
    return [int(round(v)) for v in _parse_grid(text)]


class _Output:
    """Collects lines and writes them once; keeps runs byte-stable."""

    def __init__(self, path, stream):
        self.path = path
        self.stream = stream
        self.lines: list[str] = []

    def line(self, text: str):
        self.lines.append(text)

    def finish(self):
        payload = "\n".join(self.lines) + "\n"
        if self.path:
            with open(self.path, "w") as fh:
                fh.write(payload)
        else:
            self.stream.write(payload)


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _emit_csv(out: _Output, header: list[str], rows, with_timestamp: bool):
    if with_timestamp:
        out.line(f"# generated_at={_timestamp()}")
    out.line(",".join(header))
    for row in rows:
        out.line(",".join(_fmt(v) for v in row))
    out.finish()


def _emit_json(out: _Output, payload: dict, with_timestamp: bool):
    if with_timestamp:
        payload = {"generated_at": _timestamp(), **payload}
    out.line(json.dumps(_json_safe(payload), indent=2))
    out.finish()


def _resolve_observable(args):
    """(dist, obs, identifier) from --preset or --spec-file."""
    spec_file = getattr(args, "spec_file", None)
    preset = getattr(args, "preset", None)
    if spec_file and preset:
        raise InputError("give either --preset or --spec-file, not both")
    if spec_file:
        dist, obs = model.load_spec(spec_file)
        if getattr(args, "center", False):
            obs = model.center(obs, dist)
        return dist, obs, os.path.basename(spec_file)
    if not preset:
        raise InputError("an observable is required: --preset NAME or --spec-file PATH")
    ell = getattr(args, "ell", None)
    c = getattr(args, "const_value", None)
    dist, obs = model.preset(preset, ell=ell, c=1.0 if c is None else c)
    if getattr(args, "center", False):
        obs = model.center(obs, dist)
    return dist, obs, preset


def _threads(args, config) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, int(args.threads))
    if "threads" in config:
        return max(1, int(config["threads"]))
    env = os.environ.get(ENV_THREADS)
    return max(1, int(env)) if env else 1


def _merged(args, config, dest, default):
    v = getattr(args, dest, None)
    if v is not None:
        return v
    if dest in config:
        return config[dest]
    return default


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_structure(args, config, out):
    ell = int(args.ell)
    N = int(round(float(args.n)))
    if N < 1 or N > STRUCTURE_N_LIMIT:
        raise InputError(f"n must be in [1, {STRUCTURE_N_LIMIT}]")
    basis = lattice.primes_up_to(ell)
    a_count = lattice.coprime_count(basis, N)
    fibers = lattice.fiber_histogram(basis, N)
    ok = lattice.partition_check(basis, N)
    smooth_rows = []
    if basis.m == 0:
        smooth_rows.append((1, 1, 0.0, math.inf, 1.0))
    else:
        count = lattice.d_count_int(basis, N)
        seq = lattice.smooth_numbers(basis, count)
        for l in range(1, count + 1):
            smooth_rows.append(
                (l, seq.h[l - 1], seq.rho_min(l), seq.rho_max(l), seq.weight(l))
            )
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "ell": ell,
                "n": N,
                "m": basis.m,
                "r_const": basis.r_const,
                "a_count": a_count,
                "partition_ok": ok,
                "fibers": [{"l": l, "count": c} for l, c in fibers],
                "smooth": [
                    {"l": l, "h": h, "rho_min": rmin, "rho_max": rmax, "weight": w}
                    for l, h, rmin, rmax, w in smooth_rows
                ],
            },
            ts,
        )
        return
    header = ["record", "a", "b", "c", "d", "e"]
    rows = [("summary", ell, N, basis.m, _fmt(basis.r_const), f"a_count={a_count}")]
    rows.append(("partition", "ok" if ok else "FAIL", "", "", "", ""))
    for l, c in fibers:
        rows.append(("fiber", l, c, "", "", ""))
    for l, h, rmin, rmax, w in smooth_rows:
        rows.append(("smooth", l, h, _fmt(rmin), _fmt(rmax), _fmt(w)))
    _emit_csv(out, header, rows, ts)


def _curve_csv(out, args, rows, header, ts):
    if args.format == "json":
        raise AssertionError("handled by caller")
    _emit_csv(out, header, rows, ts)


def _cmd_rate_i(args, config, out):
    dist, obs, obs_id = _resolve_observable(args)
    tol = float(_merged(args, config, "tol", 1e-9))
    grid = _parse_grid(args.alpha)
    rate = rates.CramerRate(dist, obs, t_cap=args.t_cap)
    rows = []
    for a in grid:
        v = rate(a)
        rows.append((a, v, math.isinf(v), tol))
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "rate-i",
                "ell": obs.ell,
                "observable": obs_id,
                "tol": tol,
                "rows": [
                    {"x": x, "value": v, "is_infinite": inf_} for x, v, inf_, _ in rows
                ],
            },
            ts,
        )
        return
    _emit_csv(out, ["x", "value", "is_infinite", "tol"], rows, ts)


def _cmd_pressure(args, config, out):
    dist, obs, obs_id = _resolve_observable(args)
    tol = float(_merged(args, config, "tol", 1e-8))
    grid = _parse_grid(getattr(args, "lam"))
    basis = lattice.primes_up_to(obs.ell)
    press = rates.Pressure(dist, obs, basis, tol=tol, budget=args.budget)
    rows = []
    for lam in grid:
        d = press.detail(lam)
        rows.append((lam, d.value, False, tol, d.truncation_l))
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "pressure",
                "ell": obs.ell,
                "observable": obs_id,
                "tol": tol,
                "L_truncation": max(r[4] for r in rows),
                "rows": [
                    {"x": x, "value": v, "is_infinite": i, "truncation_l": L}
                    for x, v, i, _, L in rows
                ],
            },
            ts,
        )
        return
    _emit_csv(out, ["x", "value", "is_infinite", "tol", "truncation_l"], rows, ts)


def _cmd_rate_j(args, config, out):
    dist, obs, obs_id = _resolve_observable(args)
    tol = float(_merged(args, config, "tol", 1e-8))
    grid = _parse_grid(args.u)
    basis = lattice.primes_up_to(obs.ell)
    press = rates.Pressure(dist, obs, basis, tol=tol, budget=args.budget)
    conj = rates.RateJ(press, lambda_cap=args.lambda_cap)
    rows = []
    for u in grid:
        v = conj(u)
        rows.append((u, v, math.isinf(v), tol))
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "rate-j",
                "ell": obs.ell,
                "observable": obs_id,
                "tol": tol,
                "lambda_cap": conj.lambda_cap,
                "rows": [
                    {"x": x, "value": v, "is_infinite": inf_} for x, v, inf_, _ in rows
                ],
            },
            ts,
        )
        return
    _emit_csv(out, ["x", "value", "is_infinite", "tol"], rows, ts)


def _cmd_erlaw(args, config, out, err_stream):
    dist, obs, obs_id = _resolve_observable(args)
    basis = lattice.primes_up_to(obs.ell)
    alphas = _parse_grid(args.alpha)
    ns = sorted(_parse_int_list(args.n))
    if args.seed_list:
        seeds = _parse_int_list(args.seed_list)
    else:
        seeds = list(range(1, int(_merged(args, config, "seeds", 5)) + 1))
    threads = _threads(args, config)
    result = erlaw_mod.experiment(
        dist, obs, basis, alphas, ns, seeds, mode=args.mode, threads=threads
    )
    ts = not args.no_timestamp
    point_dicts = [
        {
            "ell": obs.ell,
            "observable_id": obs_id,
            "alpha": p.alpha,
            "I_alpha": p.i_alpha,
            "n": p.n,
            "b_n": p.b_n,
            "seed": p.seed,
            "mode": p.mode,
            "max_increment": p.max_increment,
            "statistic": p.statistic,
            "normalized": p.normalized,
        }
        for p in result.points
    ]
    summary_dicts = [
        {
            "alpha": s.alpha,
            "n": s.n,
            "mean_statistic": s.mean_statistic,
            "min_statistic": s.min_statistic,
            "max_statistic": s.max_statistic,
            "mean_abs_dev": s.mean_abs_dev,
            "max_abs_dev": s.max_abs_dev,
        }
        for s in result.summaries
    ]
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "erlaw",
                "ell": obs.ell,
                "observable": obs_id,
                "mode": args.mode,
                "points": point_dicts,
                "summary": summary_dicts,
            },
            ts,
        )
        return
    header = [
        "ell",
        "observable_id",
        "alpha",
        "I_alpha",
        "n",
        "b_n",
        "seed",
        "mode",
        "max_increment",
        "statistic",
        "normalized",
    ]
    _emit_csv(out, header, [tuple(d[k] for k in header) for d in point_dicts], ts)
    # keep stdout pure CSV; the per-(alpha, n) summary goes to stderr
    err_stream.write(json.dumps(_json_safe({"summary": summary_dicts})) + "\n")


def _cmd_ldp_check(args, config, out):
    dist, obs, obs_id = _resolve_observable(args)
    basis = lattice.primes_up_to(obs.ell)
    threads = _threads(args, config)
    est = simulate.ldp_estimate(
        dist,
        obs,
        basis,
        int(round(float(args.N))),
        float(args.u),
        int(round(float(args.replicas))),
        seed=int(_merged(args, config, "seed", 1)),
        mode=args.mode,
        threads=threads,
    )
    theory_i: float | str = ""
    theory_j: float | str = ""
    if not args.skip_theory:
        rate = rates.CramerRate(dist, obs)
        theory_i = rate(est.u)
        press = rates.Pressure(dist, obs, basis, tol=float(args.theory_tol))
        theory_j = rates.RateJ(press)(est.u)
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "ldp-check",
                "ell": obs.ell,
                "observable": obs_id,
                "mode": args.mode,
                "N": est.N,
                "u": est.u,
                "replicas": est.replicas,
                "p_hat": est.p_hat,
                "rate_hat": est.rate_hat,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "zero_count": est.zero_count,
                "theory_J": theory_j,
                "theory_I": theory_i,
            },
            ts,
        )
        return
    header = [
        "N",
        "u",
        "replicas",
        "p_hat",
        "rate_hat",
        "ci_low",
        "ci_high",
        "theory_J",
        "theory_I",
    ]
    row = (
        est.N,
        est.u,
        est.replicas,
        est.p_hat,
        est.rate_hat,
        est.ci_low,
        est.ci_high,
        theory_j,
        theory_i,
    )
    _emit_csv(out, header, [row], ts)


def _cmd_simulate(args, config, out):
    dist, obs, obs_id = _resolve_observable(args)
    n = int(round(float(args.n)))
    stride = int(_merged(args, config, "stride", 1))
    if stride < 1:
        raise InputError("stride must be >= 1")
    spec = simulate.TrajectorySpec(
        seed=int(_merged(args, config, "seed", 1)),
        n=n,
        dist=dist,
        obs=obs,
        mode=args.mode,
    )
    traj = (
        simulate.trajectory(spec)
        if args.mode == "nonconventional"
        else simulate.iid_trajectory(spec)
    )
    ks = list(range(0, n + 1, stride))
    if ks[-1] != n:
        ks.append(n)
    ts = not args.no_timestamp
    if args.format == "json":
        _emit_json(
            out,
            {
                "kind": "simulate",
                "ell": obs.ell,
                "observable": obs_id,
                "mode": args.mode,
                "seed": spec.seed,
                "n": n,
                "stride": stride,
                "rows": [[k, float(traj.prefix[k])] for k in ks],
            },
            ts,
        )
        return
    _emit_csv(out, ["k", "S_k"], [(k, float(traj.prefix[k])) for k in ks], ts)


# ---------------------------------------------------------------------------
# Parser assembly


def _build_parser() -> _Parser:
    parser = _Parser(prog="ncsums", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--output", default=None, help="write to file instead of stdout")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON file of flag defaults")
        p.add_argument(
            "--no-timestamp",
            action="store_const",
            const=True,
            default=False,
            help="suppress the generated_at field for byte-stable output",
        )

    def observable(p):
        p.add_argument("--preset", choices=model.PRESET_NAMES, default=None)
        p.add_argument("--spec-file", default=None)
        p.add_argument("--ell", type=int, default=None)
        p.add_argument("--const-value", type=float, default=None)
        p.add_argument(
            "--center",
            action="store_const",
            const=True,
            default=False,
            help="replace F by F - mean(F) after loading",
        )

    p = sub.add_parser("structure", help="coprime skeleton, fibers, smooth numbers")
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--n", required=True)
    common(p)

    p = sub.add_parser("rate-i", help="Cramér rate curve")
    observable(p)
    p.add_argument("--alpha", required=True, help="value, comma list, or start:stop:step")
    p.add_argument("--t-cap", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    common(p)

    p = sub.add_parser("pressure", help="pressure curve with certified truncation")
    observable(p)
    p.add_argument("--lambda", dest="lam", required=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--budget", type=int, default=rates.DEFAULT_BUDGET)
    common(p)

    p = sub.add_parser("rate-j", help="conjugate of the pressure")
    observable(p)
    p.add_argument("--u", required=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--lambda-cap", type=float, default=None)
    p.add_argument("--budget", type=int, default=rates.DEFAULT_BUDGET)
    common(p)

    p = sub.add_parser("erlaw", help="sliding-window law experiment")
    observable(p)
    p.add_argument("--alpha", required=True)
    p.add_argument("--n", required=True, help="n grid, e.g. 1e4,1e6")
    p.add_argument("--seeds", type=int, default=None, help="use seeds 1..K")
    p.add_argument("--seed-list", default=None)
    p.add_argument("--mode", choices=simulate.TRAJECTORY_MODES, default="nonconventional")
    common(p)

    p = sub.add_parser("ldp-check", help="Monte-Carlo tail vs rate functions")
    observable(p)
    p.add_argument("--N", required=True)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--replicas", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=simulate.TRAJECTORY_MODES, default="nonconventional")
    p.add_argument("--theory-tol", type=float, default=1e-6)
    p.add_argument(
        "--skip-theory", action="store_const", const=True, default=False
    )
    common(p)

    p = sub.add_parser("simulate", help="dump a trajectory as (k, S_k)")
    observable(p)
    p.add_argument("--n", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--mode", choices=simulate.TRAJECTORY_MODES, default="nonconventional")
    common(p)

    return parser


_DISPATCH = {
    "structure": _cmd_structure,
    "rate-i": _cmd_rate_i,
    "pressure": _cmd_pressure,
    "rate-j": _cmd_rate_j,
    "ldp-check": _cmd_ldp_check,
    "simulate": _cmd_simulate,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = {}
        if getattr(args, "config", None):
            try:
                config = json.loads(open(args.config).read())
            except (OSError, json.JSONDecodeError) as exc:
                raise InputError(f"cannot read config {args.config}: {exc}") from exc
            if not isinstance(config, dict):
                raise InputError("config file must hold a JSON object")
        args.format = _merged(args, config, "format", "csv")
        if args.format not in ("csv", "json"):
            raise InputError(f"format must be csv or json, not {args.format!r}")
        args.output = _merged(args, config, "output", None)
        if not args.no_timestamp and config.get("no_timestamp"):
            args.no_timestamp = True
        out = _Output(args.output, stdout)
        if args.command == "erlaw":
            _cmd_erlaw(args, config, out, stderr)
        else:
            _DISPATCH[args.command](args, config, out)
        return 0
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return int(code) if code is not None else 0
    except InputError as exc:
        stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except (ValueError, OverflowError) as exc:
        stderr.write(json.dumps({"error": "InputError", "message": str(exc)}) + "\n")
        return 2
    except CapacityError as exc:
        stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 3
    except ToleranceError as exc:
        stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 4


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
