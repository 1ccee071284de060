"""Configuration-driven experiment runner.

Commands: spectrum, check, run, plotdata.  Run specs come from named presets
or a line-oriented `key = value` config file, with command-line overrides;
seeded randomness makes every output byte-reproducible.  Exit status of
`run`: 0 converged, 2 ran to t_max, 3 numerical failure, 4 bad configuration
(argparse's own errors are remapped to 4 so 2 keeps its meaning).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, asdict, replace
from pathlib import Path


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


_SOURCES = ("zero", "random", "mode11", "csv")

_CONFIG_KEYS = {
    "n": int,
    "oversample": float,
    "integrator": str,
    "dt": float,
    "t_max": float,
    "tol_converge": float,
    "monitor_stride": int,
    "seed": int,
    "background": str,
    "background_degree": int,
    "background_amplitude": float,
    "lambda0": str,
    "lambda0_degree": int,
    "lambda0_amplitude": float,
}


@dataclass
class RunSpec:
    n: int = 8
    oversample: float = 2.0
    integrator: str = "exact_perp"
    dt: float = 1e-3
    t_max: float = 10.0
    tol_converge: float = 1e-8
    monitor_stride: int = 1
    seed: int = 0
    background: str = "zero"
    background_degree: int = 2
    background_amplitude: float = 0.3
    lambda0: str = "zero"
    lambda0_degree: int = 2
    lambda0_amplitude: float = 0.1
    preset: str | None = None

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.oversample < 1:
            raise ConfigError(f"oversample must be >= 1, got {self.oversample}")
        if self.integrator not in ("exact_perp", "imex_cn"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.dt <= 0 or self.t_max <= 0 or self.tol_converge <= 0:
            raise ConfigError("dt, t_max and tol_converge must be positive")
        if self.monitor_stride < 1:
            raise ConfigError("monitor_stride must be >= 1")
        for label, source in (("background", self.background), ("lambda0", self.lambda0)):
            kind = source.split(":", 1)[0]
            if kind not in _SOURCES:
                raise ConfigError(
                    f"{label} source {source!r} is not one of {_SOURCES}"
                )
            if kind in ("mode11", "csv") and ":" not in source:
                raise ConfigError(f"{label} source {source!r} needs an argument")
            if kind == "mode11":
                try:
                    float(source.split(":", 1)[1])
                except ValueError as exc:
                    raise ConfigError(f"bad mode11 coefficient in {source!r}") from exc


PRESETS: dict[str, RunSpec] = {
    "sphere-trivial": RunSpec(preset="sphere-trivial"),
    "sphere-mode11": RunSpec(preset="sphere-mode11", lambda0="mode11:0.1"),
    "conformal-c03": RunSpec(preset="conformal-c03", background="mode11:0.3"),
}


def parse_config_file(path: str | Path) -> dict:
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return values


def resolve_runspec(args) -> RunSpec:
    if args.preset is not None and args.config is not None:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; available: {sorted(PRESETS)}"
            )
        spec = replace(PRESETS[args.preset])
    elif args.config is not None:
        spec = replace(RunSpec(), **parse_config_file(args.config))
    else:
        raise ConfigError("run needs --preset or --config")
    for name in ("n", "oversample", "integrator", "dt", "seed", "monitor_stride"):
        value = getattr(args, name, None)
        if value is not None:
            spec = replace(spec, **{name: value})
    if args.tmax is not None:
        spec = replace(spec, t_max=args.tmax)
    if args.tol is not None:
        spec = replace(spec, tol_converge=args.tol)
    spec.validate()
    return spec


def _build_field(spec_source: str, model, seed: int, degree: int, amplitude: float):
    from .background import random_field
    from .io import read_spectral_csv

    kind, _, arg = spec_source.partition(":")
    if kind == "zero":
        return model.zero_field()
    if kind == "mode11":
        return model.mode11_field(float(arg))
    if kind == "random":
        return random_field(model, seed, degree, amplitude)
    if kind == "csv":
        return model.embed(read_spectral_csv(arg))
    raise ConfigError(f"unknown field source {spec_source!r}")


def execute_run(spec: RunSpec, out_dir: str | Path) -> int:
    import numpy as np

    from .background import make_background
    from .flow import FlowConfig, monitors, run_flow
    from .io import write_json, write_spectral_csv, write_trajectory_csv
    from .model import get_model

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_model(spec.n, spec.oversample)
    w = _build_field(spec.background, model, spec.seed,
                     spec.background_degree, spec.background_amplitude)
    lam0 = _build_field(spec.lambda0, model, spec.seed + 1,
                        spec.lambda0_degree, spec.lambda0_amplitude)
    bg = make_background(w, model)
    cfg = FlowConfig(
        n=spec.n,
        oversample=spec.oversample,
        integrator=spec.integrator,
        dt=spec.dt,
        t_max=spec.t_max,
        tol_converge=spec.tol_converge,
        monitor_stride=spec.monitor_stride,
    )
    trajectory = run_flow(bg, lam0, cfg)
    report = monitors(bg, trajectory)

    final = trajectory.final_state
    lam_plus_w = final.lam.coeffs + w.coeffs
    paneitz_residual = float(
        np.linalg.norm(model.ops.paneitz.matrix @ lam_plus_w)
    )
    volumes = trajectory.column("volume")
    energies = trajectory.column("E")
    grads = trajectory.column("grad_norm_sq")
    q0_norm = math.sqrt(max(bg.weighted_dot(bg.Q0.coeffs, bg.Q0.coeffs), 0.0))
    e_decay = None
    if q0_norm <= 1e-10:
        usable = energies > 1e-200
        if int(np.sum(usable)) >= 2:
            times = trajectory.times[usable]
            if times[-1] > times[0]:
                e_decay = float(np.polyfit(times, np.log(energies[usable]), 1)[0])

    summary = {
        "config": asdict(spec),
        "convention": "s3-std-1",
        "converged": trajectory.converged,
        "t_final": trajectory.records[-1].t,
        "t_converged": trajectory.t_converged,
        "records": len(trajectory.records),
        "final": {
            "grad_norm": math.sqrt(max(trajectory.records[-1].grad_norm_sq, 0.0)),
            "q_l2": trajectory.records[-1].q_l2,
            "volume_drift_max": float(np.max(np.abs(volumes / bg.V0 - 1.0))),
            "paneitz_residual_lam_plus_w": paneitz_residual,
            "kernel_q0_residual": bg.check_kernel_vanishing(),
            "lambda_ker_constant": float(final.lam_ker.coeffs[0] / (2.0 * math.pi)),
        },
        "sup": {
            "energy": float(np.max(energies)),
            "fs42": float(np.max(trajectory.column("fs42"))),
            "grad_norm_sq": float(np.max(grads)),
        },
        "upsilon": bg.upsilon() if model.perp_idx.size else None,
        "e_decay_rate": e_decay,
        "monitors": [
            {
                "name": c.name,
                "applicable": c.applicable,
                "passed": c.passed,
                "value": c.value,
                "threshold": c.threshold,
            }
            for c in report.checks
        ],
    }
    write_trajectory_csv(out / "trajectory.csv", trajectory)
    write_spectral_csv(out / "final_state.csv", final.lam)
    write_spectral_csv(out / "background.csv", w)
    write_json(out / "summary.json", summary)
    print(f"wrote {out / 'trajectory.csv'}")
    print(f"wrote {out / 'summary.json'}")
    return 0 if trajectory.converged else 2


def cmd_spectrum(args) -> int:
    from .io import atomic_write_text, fmt
    from .model import get_model
    from .operators import spectrum_table

    if args.n < 1:
        raise ConfigError(f"n must be >= 1, got {args.n}")
    model = get_model(args.n, args.oversample)
    lines = ["p,q,minus_lap_b,box_b,box_b_bar,paneitz"]
    for row in spectrum_table(model.basis, model.ops):
        lines.append(
            f"{row.p},{row.q},{fmt(row.minus_lap)},{fmt(row.box)},"
            f"{fmt(row.box_bar)},{fmt(row.paneitz)}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    if args.n < 1:
        raise ConfigError(f"n must be >= 1, got {args.n}")
    results = run_checks(args.n, args.oversample, corrupt=args.corrupt)
    failed = 0
    for res in results:
        if res.passed is None:
            status = "SKIP"
        elif res.passed:
            status = "PASS"
        else:
            status = "FAIL"
            failed += 1
        value = "" if res.value is None else f" value={res.value:.3e}"
        note = f" ({res.note})" if res.note else ""
        print(f"{status} {res.name}{value}{note}")
    print(f"{len(results)} checks, {failed} failures")
    return 0 if failed == 0 else 1


def cmd_plotdata(args) -> int:
    import numpy as np

    from .io import atomic_write_text, fmt, read_trajectory_csv

    try:
        data = read_trajectory_csv(args.trajectory)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    t = data["t"]
    energy = data["E"]
    grad = data["grad_norm_sq"]
    volume = data["volume"]
    with np.errstate(divide="ignore", invalid="ignore"):
        ln_e = np.where(energy > 0, np.log(np.maximum(energy, 1e-320)), np.nan)
        ln_g = np.where(grad > 0, np.log(np.maximum(grad, 1e-320)), np.nan)
    drift = volume / volume[0] - 1.0
    usable = np.isfinite(ln_e)
    if int(np.sum(usable)) >= 2 and t[usable][-1] > t[usable][0]:
        slope = float(np.polyfit(t[usable], ln_e[usable], 1)[0])
    else:
        slope = math.nan
    lines = ["t,ln_E,ln_grad_norm_sq,volume_drift,e_slope"]
    for k in range(t.size):
        lines.append(
            f"{fmt(t[k])},{fmt(ln_e[k])},{fmt(ln_g[k])},{fmt(drift[k])},{fmt(slope)}"
        )
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="crqflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="eigenvalue table of the assembled operators")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--oversample", type=float, default=1.0)
    sp.add_argument("--out", default=None)

    ck = sub.add_parser("check", help="run the invariant suite")
    ck.add_argument("--n", type=int, default=8)
    ck.add_argument("--oversample", type=float, default=1.0)
    ck.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)

    rn = sub.add_parser("run", help="run a flow experiment")
    rn.add_argument("--preset", default=None)
    rn.add_argument("--config", default=None)
    rn.add_argument("--out", required=True)
    rn.add_argument("--n", type=int, default=None)
    rn.add_argument("--oversample", type=float, default=None)
    rn.add_argument("--seed", type=int, default=None)
    rn.add_argument("--integrator", default=None)
    rn.add_argument("--dt", type=float, default=None)
    rn.add_argument("--tmax", type=float, default=None)
    rn.add_argument("--tol", type=float, default=None)
    rn.add_argument("--monitor-stride", dest="monitor_stride", type=int, default=None)

    pd = sub.add_parser("plotdata", help="derive log-scale plot columns")
    pd.add_argument("trajectory")
    pd.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "spectrum":
            return cmd_spectrum(args)
        if args.command == "check":
            return cmd_check(args)
        if args.command == "run":
            spec = resolve_runspec(args)
            return execute_run(spec, args.out)
        if args.command == "plotdata":
            return cmd_plotdata(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # numerical or I/O failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
