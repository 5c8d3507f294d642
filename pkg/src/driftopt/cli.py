"""Command-line entry points: train, eval, reference, study.

Configuration is a flat ``key = value`` file plus repeatable ``--set``
overrides; every key is typed against a registry and unknown keys are
rejected with the offending location.  Exit codes: 0 on success, 2 on
configuration errors, 3 on numerical aborts (overflow, lost positivity,
diverging integrators).
"""

from __future__ import annotations

import argparse
import csv
import inspect
import sys
from pathlib import Path

import numpy as np

from . import approx, metrics, optim, presets, reference, sde
from .losses import LOSS_KINDS, FORWARD_POLICIES, LossOverflowError, LossSpec
from .metrics import MetricError
from .optim import (
    OPTIMIZER_KINDS,
    NonFiniteGradientError,
    OptimizerState,
    TrainConfig,
)
from .reference import FdPositivityError, IntegrationError
from .sde import SimulationError

__all__ = ["main", "ConfigError"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    SimulationError,
    LossOverflowError,
    MetricError,
    FdPositivityError,
    IntegrationError,
    NonFiniteGradientError,
    FloatingPointError,
)


class ConfigError(Exception):
    """Invalid or unknown configuration; maps to exit code 2."""


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}") from None


def _parse_float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}") from None


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected true/false, got {s!r}")


def _parse_ints(s: str) -> tuple:
    return tuple(_parse_int(p.strip()) for p in s.split(",") if p.strip())


def _parse_floats(s: str) -> tuple:
    return tuple(_parse_float(p.strip()) for p in s.split(",") if p.strip())


def _parse_str(s: str) -> str:
    return s.strip()


# Every accepted configuration key with its value parser.  Commands consult
# the subset they understand; the full registry guards the config file.
_REGISTRY = {
    "preset": _parse_str,
    "dim": _parse_int,
    "problem_seed": _parse_int,
    "dt": _parse_float,
    "horizon": _parse_float,
    "nu": _parse_float,
    "hidden": _parse_ints,
    "random_start": _parse_bool,
    "loss": _parse_str,
    "forward_policy": _parse_str,
    "y0": _parse_float,
    "optimizer": _parse_str,
    "eta": _parse_float,
    "n_paths": _parse_int,
    "iterations": _parse_int,
    "seed": _parse_int,
    "init_seed": _parse_int,
    "metric_every": _parse_int,
    "metric_paths": _parse_int,
    "eval_paths": _parse_int,
    "m_values": _parse_ints,
    "reps": _parse_int,
    "grad_reps": _parse_int,
    "grad_floor": _parse_float,
    "diag_every": _parse_int,
    "y0_values": _parse_str,
    "optimizers": _parse_str,
    "fd_xlo": _parse_float,
    "fd_xhi": _parse_float,
    "fd_nx": _parse_int,
    "fd_nt": _parse_int,
    "fd_x_stride": _parse_int,
    "fd_t_stride": _parse_int,
    "samples_nx": _parse_int,
    "samples_xlo": _parse_float,
    "samples_xhi": _parse_float,
    "samples_t": _parse_str,
}

# Keys forwarded to the preset factories when present.
_PRESET_KEYS = ("dim", "problem_seed", "dt", "horizon", "nu", "hidden", "random_start")


def _parse_line(key: str, raw: str, where: str):
    key = key.strip()
    if key not in _REGISTRY:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        return key, _REGISTRY[key](raw.strip())
    except ConfigError as e:
        raise ConfigError(f"{where}: key {key!r}: {e}") from None


def load_settings(config_path: str | None, sets: list) -> dict:
    """Merge config-file values with ``--set`` overrides (overrides win)."""
    values: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {line!r}"
                )
            key, raw = stripped.split("=", 1)
            k, v = _parse_line(key, raw, f"{path}:{lineno}")
            values[k] = v
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, raw = item.split("=", 1)
        k, v = _parse_line(key, raw, f"--set {key.strip()}")
        values[k] = v
    return values


def _build_bundle(settings: dict, resolved: dict) -> presets.ProblemBundle:
    name = settings.get("preset")
    if name is None:
        raise ConfigError("missing required config key 'preset'")
    if name not in presets.PRESET_NAMES:
        raise ConfigError(
            f"unknown preset {name!r}; available: {presets.PRESET_NAMES}"
        )
    factory = presets.FACTORIES[name]
    accepted = set(inspect.signature(factory).parameters)
    kwargs = {}
    for key in _PRESET_KEYS:
        if key in settings:
            if key not in accepted:
                raise ConfigError(f"preset {name!r} does not accept key {key!r}")
            kwargs[key] = settings[key]
    bundle = factory(**kwargs)
    resolved["preset"] = name
    resolved["dim"] = bundle.model.dim
    resolved["dt"] = bundle.grid.dt
    resolved["horizon"] = bundle.grid.horizon
    for key in ("problem_seed", "nu", "hidden", "random_start"):
        if key in kwargs:
            resolved[key] = kwargs[key]
    return bundle


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _echo_config(out_dir: Path, resolved: dict) -> None:
    lines = [f"{k} = {_format_value(resolved[k])}" for k in sorted(resolved)]
    (out_dir / "resolved_config.txt").write_text("\n".join(lines) + "\n")


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


RESULT_COLUMNS = ["iteration", "loss", "grad_norm", "isre", "l2_error", "wall_ms"]


def _record_rows(records) -> list:
    return [
        [r.iteration, r.loss, r.grad_norm, r.isre, r.l2_error, r.wall_ms]
        for r in records
    ]


def _loss_spec(settings: dict, bundle, resolved: dict, frozen_from: str | None) -> LossSpec:
    kind = settings.get("loss", bundle.defaults["loss"])
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {kind!r}; known: {LOSS_KINDS}")
    policy = settings.get("forward_policy", "current_u")
    if policy not in FORWARD_POLICIES:
        raise ConfigError(
            f"unknown forward_policy {policy!r}; known: {FORWARD_POLICIES}"
        )
    frozen = None
    if policy == "frozen":
        if frozen_from is None:
            raise ConfigError("forward_policy 'frozen' requires --frozen-from CHECKPOINT")
        frozen, _ = approx.load_checkpoint(frozen_from)
    y0 = settings.get("y0")
    if kind != "moment" and y0 is not None:
        raise ConfigError("config key 'y0' only applies to the moment loss")
    resolved["loss"] = kind
    resolved["forward_policy"] = policy
    if kind == "moment":
        y0 = 0.0 if y0 is None else y0
        resolved["y0"] = y0
    try:
        return LossSpec(kind=kind, forward_policy=policy, y0=y0, frozen_control=frozen)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _train_config(settings: dict, bundle, spec: LossSpec, resolved: dict) -> TrainConfig:
    d = bundle.defaults
    optimizer = settings.get("optimizer", d["optimizer"])
    if optimizer not in OPTIMIZER_KINDS:
        raise ConfigError(f"unknown optimizer {optimizer!r}; known: {OPTIMIZER_KINDS}")
    cfg = TrainConfig(
        loss=spec,
        grid=bundle.grid,
        n_paths=settings.get("n_paths", d["n_paths"]),
        iterations=settings.get("iterations", d["iterations"]),
        seed=settings.get("seed", 1),
        optimizer=optimizer,
        eta=settings.get("eta", d["eta"]),
        metric_every=settings.get("metric_every", 10),
        metric_paths=settings.get("metric_paths", 2000),
        reference_control=bundle.reference_control,
    )
    resolved.update(
        optimizer=cfg.optimizer, eta=cfg.eta, n_paths=cfg.n_paths,
        iterations=cfg.iterations, seed=cfg.seed,
        metric_every=cfg.metric_every, metric_paths=cfg.metric_paths,
    )
    return cfg


def _checkpoint_extra(result, spec: LossSpec) -> dict:
    extra = {
        "iteration": np.array([result.next_iteration], dtype=np.int64),
        "opt_steps": np.array([result.state.steps], dtype=np.int64),
    }
    if result.state.m is not None:
        extra["opt_m"] = result.state.m
        extra["opt_v"] = result.state.v
    if spec.kind == "moment":
        extra["y0"] = np.array([spec.y0])
    return extra


def _restore(resume_path: str, bundle, settings: dict, spec: LossSpec, resolved: dict):
    control, extra = approx.load_checkpoint(resume_path)
    if control.arch != bundle.arch:
        raise ConfigError(
            f"checkpoint architecture {control.arch} does not match "
            f"preset architecture {bundle.arch}"
        )
    state = OptimizerState(
        kind=resolved["optimizer"], eta=resolved["eta"],
        steps=int(extra["opt_steps"][0]),
    )
    if "opt_m" in extra:
        state.m = np.asarray(extra["opt_m"], dtype=np.float64)
        state.v = np.asarray(extra["opt_v"], dtype=np.float64)
    if spec.kind == "moment" and "y0" in extra:
        spec.y0 = float(extra["y0"][0])
    start = int(extra["iteration"][0])
    return control, state, start


def cmd_train(args) -> int:
    settings = load_settings(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved: dict = {}
    bundle = _build_bundle(settings, resolved)
    spec = _loss_spec(settings, bundle, resolved, args.frozen_from)
    cfg = _train_config(settings, bundle, spec, resolved)
    init_seed = settings.get("init_seed", sde.mix_seed(cfg.seed, 0x5EED))
    resolved["init_seed"] = init_seed

    if args.resume:
        control, state, start = _restore(args.resume, bundle, settings, spec, resolved)
    else:
        control = approx.init(bundle.arch, init_seed)
        state, start = None, 0

    result = optim.train(bundle.model, control, cfg, state=state, start_iteration=start)
    if spec.kind == "moment":
        resolved["y0"] = spec.y0

    _write_csv(out / "results.csv", RESULT_COLUMNS, _record_rows(result.records))
    approx.save_checkpoint(result.control, out / "checkpoint.npz",
                           _checkpoint_extra(result, spec))
    _echo_config(out, resolved)
    if result.records:
        last = result.records[-1]
        print(
            f"trained {len(result.records)} iterations: "
            f"loss {last.loss:.6g}, isre {last.isre:.4g}, l2 {last.l2_error:.4g}"
        )
    else:
        print("no iterations to run")
    return EXIT_OK


def cmd_eval(args) -> int:
    settings = load_settings(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved: dict = {}
    bundle = _build_bundle(settings, resolved)
    control, _ = approx.load_checkpoint(args.checkpoint)
    if control.arch != bundle.arch:
        raise ConfigError(
            f"checkpoint architecture {control.arch} does not match "
            f"preset architecture {bundle.arch}"
        )
    n_paths = settings.get("eval_paths", 10000)
    seed = settings.get("seed", 1)
    resolved.update(eval_paths=n_paths, seed=seed)

    rep = metrics.isre(bundle.model, control, bundle.grid, n_paths, seed)
    if bundle.reference_control is not None:
        l2 = metrics.l2_error(
            bundle.model, control, bundle.reference_control,
            bundle.grid, n_paths, sde.mix_seed(seed, 1),
        )
    else:
        l2 = float("nan")
    crossing = metrics.crossing_ratio(
        bundle.model, control, bundle.grid, n_paths, sde.mix_seed(seed, 2)
    )
    _write_csv(
        out / "eval.csv",
        ["preset", "n_paths", "seed", "isre", "weight_mean", "l2_error", "crossing_ratio"],
        [[bundle.name, n_paths, seed, rep.value, rep.mean, l2, crossing]],
    )
    if "samples_nx" in settings or "samples_t" in settings:
        _write_control_samples(settings, bundle, control, out, resolved)
    _echo_config(out, resolved)
    print(f"isre {rep.value:.4g}, l2 {l2:.4g}, crossing {crossing:.4g}")
    return EXIT_OK


def _write_control_samples(settings, bundle, control, out: Path, resolved) -> None:
    """Tabulate the checkpoint control on a 1-d space-time grid.

    ``samples_t`` lists slice times; ``samples_nx`` points span
    [samples_xlo, samples_xhi].  A single x with many times gives a time
    profile, many x at a few times give spatial slices; both feed the
    control-overlay figure of the companion plotting package.
    """
    if bundle.model.dim != 1:
        raise ConfigError("control sample export handles 1-d presets only")
    nx = settings.get("samples_nx", 101)
    if nx < 1:
        raise ConfigError("samples_nx must be positive")
    xlo = settings.get("samples_xlo", -2.5)
    xhi = settings.get("samples_xhi", 2.5)
    raw_ts = settings.get("samples_t", "0.0")
    try:
        ts = [float(tok) for tok in raw_ts.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(
            f"samples_t: expected comma-separated times, got {raw_ts!r}"
        ) from None
    if not ts:
        raise ConfigError("samples_t named no times")
    xs = np.linspace(xlo, xhi, nx)
    rows = []
    for t in ts:
        u = np.asarray(control(xs[:, None], t), dtype=np.float64)
        for i in range(nx):
            rows.append([xs[i], t, u[i, 0]])
    _write_csv(out / "control_samples.csv", ["x", "t", "u_1"], rows)
    resolved.update(
        samples_nx=nx, samples_xlo=xlo, samples_xhi=xhi,
        samples_t=",".join(repr(t) for t in ts),
    )


def _reference_ou_linear(bundle, out: Path) -> None:
    grid = bundle.grid
    u_star = bundle.reference_control
    dim = bundle.model.dim
    rows = []
    for t in grid.times():
        u = np.asarray(u_star.coefficient(float(t)))
        rows.append([t, *u.tolist()])
    _write_csv(out / "u_star.csv", ["t"] + [f"u_{i+1}" for i in range(dim)], rows)
    _write_csv(out / "free_energy.csv", ["minus_log_z"], [[bundle.minus_log_z]])


def _reference_ou_quadratic(bundle, out: Path) -> None:
    sol = bundle.problem
    dim = sol.B.shape[0]
    header = ["t"] + [f"F_{i+1}_{j+1}" for i in range(dim) for j in range(dim)]
    rows = [[t, *sol.F[k].ravel().tolist()] for k, t in enumerate(sol.ts)]
    _write_csv(out / "riccati.csv", header, rows)


def _reference_double_well(bundle, settings: dict, out: Path, resolved: dict) -> None:
    if bundle.model.dim != 1:
        raise ConfigError("finite-difference reference tables are 1-d only")
    fd_kwargs = dict(
        x_lo=settings.get("fd_xlo", -3.0),
        x_hi=settings.get("fd_xhi", 3.0),
        n_x=settings.get("fd_nx", 601),
        n_t=settings.get("fd_nt", 2000),
    )
    resolved.update(
        fd_xlo=fd_kwargs["x_lo"], fd_xhi=fd_kwargs["x_hi"],
        fd_nx=fd_kwargs["n_x"], fd_nt=fd_kwargs["n_t"],
    )
    sol = reference.hjb_fd_1d(bundle.model, **fd_kwargs)
    sx = settings.get("fd_x_stride", 1)
    st = settings.get("fd_t_stride", max(1, fd_kwargs["n_t"] // 100))
    resolved.update(fd_x_stride=sx, fd_t_stride=st)
    rows = []
    for k in range(0, len(sol.ts), st):
        for i in range(0, len(sol.xs), sx):
            rows.append([sol.xs[i], sol.ts[k], sol.V[k, i], sol.u[k, i]])
    _write_csv(out / "fd_grid.csv", ["x", "t", "V", "u"], rows)
    x0 = float(np.asarray(bundle.model.x_init)[0])
    _write_csv(
        out / "free_energy.csv", ["minus_log_z"], [[sol.value_at(x0, 0.0)]]
    )


def cmd_reference(args) -> int:
    settings = load_settings(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved: dict = {}
    bundle = _build_bundle(settings, resolved)
    if bundle.name == "ou_linear":
        _reference_ou_linear(bundle, out)
    elif bundle.name == "ou_quadratic":
        _reference_ou_quadratic(bundle, out)
    else:
        _reference_double_well(bundle, settings, out, resolved)
    _echo_config(out, resolved)
    print(f"reference tables for {bundle.name} written to {out}")
    return EXIT_OK


def _study_tensorisation(settings: dict, bundle, out: Path, resolved: dict) -> None:
    if bundle.minus_log_z is None:
        raise ConfigError(
            f"tensorisation study needs a preset with a known free energy; "
            f"{bundle.name!r} has none"
        )
    m_values = settings.get("m_values", (1, 2, 4, 8, 16, 32))
    n_paths = settings.get("n_paths", 10000)
    reps = settings.get("reps", 20)
    seed = settings.get("seed", 1)
    resolved.update(m_values=m_values, n_paths=n_paths, reps=reps, seed=seed)
    study = metrics.tensorisation_study(
        bundle.model, bundle.minus_log_z, m_values, n_paths, reps, seed, bundle.grid
    )
    rel = {
        (kind, m): study.relative_error(kind, m)
        for kind in ("log_variance", "cross_entropy", "variance")
        for m in m_values
    }
    rows = [
        [r.kind, r.copies, r.rep, r.estimate, rel[(r.kind, r.copies)]]
        for r in study.rows
    ]
    _write_csv(
        out / "tensorisation.csv",
        ["kind", "copies", "rep", "estimate", "relative_error"],
        rows,
    )


def _study_grad_variance(settings: dict, bundle, out: Path, resolved: dict,
                         frozen_from: str | None) -> None:
    spec = _loss_spec(settings, bundle, resolved, frozen_from)
    cfg = _train_config(settings, bundle, spec, resolved)
    reps = settings.get("grad_reps", 50)
    floor = settings.get("grad_floor", 0.01)
    every = settings.get("diag_every", 1)
    diag_paths = settings.get("metric_paths", cfg.n_paths)
    resolved.update(grad_reps=reps, grad_floor=floor, diag_every=every)
    init_seed = settings.get("init_seed", sde.mix_seed(cfg.seed, 0x5EED))
    resolved["init_seed"] = init_seed
    control = approx.init(bundle.arch, init_seed)

    diag_rows = []

    def callback(iteration: int, current) -> None:
        if iteration % every:
            return
        report = metrics.gradient_variance_diag(
            bundle.model, current, spec, cfg.grid, diag_paths, reps,
            sde.mix_seed(cfg.seed, iteration, 0xD1A6), floor=floor,
        )
        diag_rows.append([iteration, report.relative_spread, report.n_used])

    result = optim.train(bundle.model, control, cfg, callback=callback)
    smoothed = metrics.moving_average([r[1] for r in diag_rows], window=30)
    rows = [
        [it, spread, sm, used]
        for (it, spread, used), sm in zip(diag_rows, smoothed)
    ]
    _write_csv(
        out / "grad_variance.csv",
        ["iteration", "relative_spread", "relative_spread_smoothed", "n_used"],
        rows,
    )
    _write_csv(out / "results.csv", RESULT_COLUMNS, _record_rows(result.records))
    approx.save_checkpoint(result.control, out / "checkpoint.npz",
                           _checkpoint_extra(result, spec))


def _study_y0_sweep(settings: dict, bundle, out: Path, resolved: dict) -> None:
    if bundle.minus_log_z is None:
        raise ConfigError(
            f"y0 sweep needs a preset with a known free energy; "
            f"{bundle.name!r} has none"
        )
    raw = settings.get("y0_values", "auto")
    if raw == "auto":
        y0_values = (0.0, 10.0, bundle.minus_log_z)
    else:
        y0_values = _parse_floats(raw)
    optimizers = tuple(
        s.strip() for s in settings.get("optimizers", "adam,sgd").split(",") if s.strip()
    )
    for opt in optimizers:
        if opt not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {opt!r}; known: {OPTIMIZER_KINDS}")
    resolved.update(
        y0_values=",".join(repr(v) for v in y0_values),
        optimizers=",".join(optimizers),
    )
    d = bundle.defaults
    seed = settings.get("seed", 1)
    init_seed = settings.get("init_seed", sde.mix_seed(seed, 0x5EED))
    resolved["init_seed"] = init_seed
    rows = []
    for opt in optimizers:
        for y0 in y0_values:
            spec = LossSpec(kind="moment", y0=float(y0))
            cfg = TrainConfig(
                loss=spec,
                grid=bundle.grid,
                n_paths=settings.get("n_paths", d["n_paths"]),
                iterations=settings.get("iterations", d["iterations"]),
                seed=seed,
                optimizer=opt,
                eta=settings.get("eta", d["eta"]),
                metric_every=settings.get("metric_every", 10),
                metric_paths=settings.get("metric_paths", 2000),
                reference_control=bundle.reference_control,
            )
            control = approx.init(bundle.arch, init_seed)
            result = optim.train(bundle.model, control, cfg)
            for r in result.records:
                rows.append([opt, y0, r.iteration, r.loss, r.grad_norm,
                             r.isre, r.l2_error, r.wall_ms])
    resolved.update(
        optimizer=",".join(optimizers),
        n_paths=settings.get("n_paths", d["n_paths"]),
        iterations=settings.get("iterations", d["iterations"]),
        eta=settings.get("eta", d["eta"]),
        seed=seed,
    )
    _write_csv(
        out / "y0_sweep.csv",
        ["optimizer", "y0_init"] + RESULT_COLUMNS,
        rows,
    )


def cmd_study(args) -> int:
    settings = load_settings(args.config, args.set)
    if args.kind == "y0_sweep" and "dim" not in settings:
        settings["dim"] = 20
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved: dict = {"study": args.kind}
    bundle = _build_bundle(settings, resolved)
    if args.kind == "tensorisation":
        _study_tensorisation(settings, bundle, out, resolved)
    elif args.kind == "grad_variance":
        _study_grad_variance(settings, bundle, out, resolved,
                             getattr(args, "frozen_from", None))
    else:
        _study_y0_sweep(settings, bundle, out, resolved)
    _echo_config(out, resolved)
    print(f"study {args.kind} written to {out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftopt",
        description="Train and assess controls for stochastic optimal control problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="optimize a control and write results")
    common(p_train)
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.add_argument("--frozen-from", dest="frozen_from",
                         help="checkpoint supplying the frozen forward control")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpointed control")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ref = sub.add_parser("reference", help="export reference solution tables")
    common(p_ref)
    p_ref.set_defaults(func=cmd_reference)

    p_study = sub.add_parser("study", help="run a robustness or sweep study")
    common(p_study)
    p_study.add_argument("--kind", required=True,
                         choices=("tensorisation", "grad_variance", "y0_sweep"))
    p_study.add_argument("--frozen-from", dest="frozen_from",
                         help="checkpoint supplying the frozen forward control")
    p_study.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
