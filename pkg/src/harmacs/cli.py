"""Command line front end: ``harmacs {project,flow,diagnose,fixtures}``.

Configuration files hold one ``key=value`` per line with ``#`` comments.
Command line flags override the file.  Exit status is 0 on success, 1 for
usage or configuration errors and 2 for numerical failures.
"""

import argparse
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import diagnostics as dg
from . import field as fd
from . import io
from ._validation import (
    DivergenceError,
    DomainError,
    HarmacsError,
    InternalError,
    InvalidInputError,
)
from .flow import HISTORY_COLUMNS, FlowConfig, run_flow, start
from .geometry import parse_metric_spec
from .matalg import MetricAtPoint, compatible_projection, standard_acs

log = logging.getLogger("harmacs")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


# -- config -------------------------------------------------------------------

def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


GRID_KEYS = {
    "m": (int, 4),
    "n": (int, 16),
    "extents": (_ints, None),
    "h": (_opt_float, None),
    "origin": (_floats, None),
    "boundary": (str, "periodic"),
}

SCHEMAS = {
    "project": {
        "input": (str, None),
        "output": (str, None),
        "metric": (str, None),
        "tol": (float, 1e-8),
    },
    "flow": {
        **GRID_KEYS,
        "metric": (str, None),
        "initial": (str, "perturbed"),
        "amplitude": (float, 0.3),
        "modes": (int, 3),
        "even_modes": (_bool, True),
        "dt_factor": (_opt_float, None),
        "unchecked_dt": (_bool, False),
        "max_steps": (int, 10000),
        "residual_tol": (float, 1e-6),
        "energy_stall_tol": (float, 1e-12),
        "stall_window": (int, 50),
        "reproject_every": (int, 1),
        "blowup_factor": (float, 10.0),
        "method": (str, "heat"),
        "checkpoint_every": (int, 100),
        "weak_tests": (int, 20),
    },
    "diagnose": {
        "field": (str, None),
        "metric": (str, None),
        "diagnostics": (str, "density_profile"),
        "center": (_floats, None),
        "centers": (int, 0),
        "radii": (_floats, None),
        "delta": (float, 0.0),
        "c_n": (float, dg.SPHERE_C2),
        "epsilon": (_opt_float, None),
        "scan_radius": (_opt_float, None),
        "gap_s": (_opt_float, None),
        "gap_t": (_opt_float, None),
        "tube_radii": (_floats, None),
        "regularity_radii": (_floats, (1.0, 0.5, 0.25, 0.125, 0.0625)),
        "stride": (int, 4),
    },
    "fixtures": {
        "name": (str, None),
        "n": (int, 2),
        "h": (_opt_float, None),
        "half_width": (_opt_float, None),
        "radii": (_floats, None),
        "eps": (_floats, None),
        "write_field": (_bool, True),
    },
}

DIAGNOSTICS = ("energy", "density_profile", "homogeneity", "regularity",
               "epsilon_scan", "tubular", "bochner")
FIXTURES = ("sphere", "dim4-cone", "s1-probe")


def read_config_text(text, source="config"):
    out = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{num}: expected key=value, got {raw.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise UsageError(f"{source}:{num}: empty key")
        if k in out:
            raise UsageError(f"{source}:{num}: duplicate key {k!r}")
        out[k] = v
    return out


def resolve_config(command, raw):
    """Type-check ``raw`` against the schema of ``command``; unknown keys are errors."""
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}; "
                         f"valid keys: {', '.join(sorted(schema))}")
    cfg = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = conv(raw[key])
            except ValueError as exc:
                raise UsageError(f"bad value for {key!r}: {exc}") from exc
        else:
            cfg[key] = default
    return cfg


def _grid_from(cfg):
    m = cfg["m"]
    ext = cfg["extents"] or (cfg["n"],) * m
    if len(ext) != m:
        raise UsageError("extents must list one count per axis")
    h = cfg["h"] if cfg["h"] is not None else 1.0 / ext[0]
    try:
        return fd.Grid(m, ext, h, cfg["origin"], cfg["boundary"])
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc


def _metric(spec, m):
    if spec is None:
        return None
    g = parse_metric_spec(spec)
    if g.dim != m:
        raise UsageError(f"metric dimension {g.dim} does not match field dimension {m}")
    return None if g.is_flat else g


# -- subcommands --------------------------------------------------------------

def cmd_project(cfg, out_dir, seed, emit=print):
    if not cfg["input"] or not cfg["output"]:
        raise UsageError("project needs an input and an output field file")
    J = io.read_field(cfg["input"])
    before = J.max_constraint_residual()
    if cfg["metric"]:
        g = parse_metric_spec(cfg["metric"])
        if g.dim != J.m:
            raise UsageError("metric dimension does not match the field")
        met = MetricAtPoint.from_g(g.g(J.grid.points()))
    else:
        met = None
    vals = compatible_projection(J.values, met, tol=cfg["tol"])
    out = fd.AcsField(J.grid, vals)
    after = out.max_constraint_residual()
    io.write_field(cfg["output"], out)
    emit(f"max_constraint_residual_before: {io.fmt(before)}")
    emit(f"max_constraint_residual_after: {io.fmt(after)}")
    return EXIT_OK


def _initial_field(cfg, grid, seed):
    init = cfg["initial"]
    J0 = standard_acs(grid.m // 2)
    if init == "constant":
        return fd.AcsField(grid, np.array(fd.AcsField.constant(grid, J0).values))
    if init == "perturbed":
        return dg.perturbed_structure(grid, J0, cfg["amplitude"], seed, cfg["modes"], cfg["even_modes"])
    if init.startswith("file:"):
        return io.read_field(init[5:])
    raise UsageError(f"initial must be constant, perturbed or file:<path>, got {init!r}")


def cmd_flow(cfg, out_dir, seed, emit=print):
    grid = _grid_from(cfg)
    if grid.m % 2:
        raise UsageError("dimension must be even")
    g = _metric(cfg["metric"], grid.m)
    fcfg = FlowConfig(dt_factor=cfg["dt_factor"], max_steps=cfg["max_steps"],
                      residual_tol=cfg["residual_tol"], energy_stall_tol=cfg["energy_stall_tol"],
                      stall_window=cfg["stall_window"], reproject_every=cfg["reproject_every"],
                      metric=g, blowup_factor=cfg["blowup_factor"], method=cfg["method"],
                      unchecked=cfg["unchecked_dt"])
    try:
        fcfg.validate(grid.m)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    J = _initial_field(cfg, grid, seed)
    ckpt = os.path.join(out_dir, "checkpoint.acsfield")
    every = cfg["checkpoint_every"]

    def checkpoint(state):
        if every > 0 and state.step % every == 0:
            io.write_field(ckpt, state.field)

    state = start(J, fcfg)
    if every > 0:
        io.write_field(ckpt, state.field)
    status = EXIT_OK
    try:
        state = run_flow(state, fcfg, callback=checkpoint)
    except DivergenceError as exc:
        emit(f"error: flow diverged: {exc}")
        state = exc.last_state or state
        state.status = "diverged"
        status = EXIT_NUMERIC
    io.write_csv(os.path.join(out_dir, "history.csv"), HISTORY_COLUMNS, state.history)
    summary = {"status": state.status, "steps": state.step, "time": state.time,
               "initial_energy": state.history[0][2], "final_energy": state.history[-1][2],
               "sup_residual": state.history[-1][3],
               "max_constraint_residual": max(r[4] for r in state.history)}
    if status == EXIT_OK:
        io.write_field(os.path.join(out_dir, "final.acsfield"), state.field)
        if cfg["weak_tests"] > 0:
            summary["max_weak_residual"] = max_weak_residual(state.field, g, cfg["weak_tests"], seed)
    io.write_summary(os.path.join(out_dir, "summary.txt"), summary)
    for k, v in summary.items():
        emit(f"{k}: {io.fmt(v) if isinstance(v, float) else v}")
    return status


def random_test_field(grid, rng, width=2.0):
    """Smooth broadband test field with sup-norm 1, vanishing on a dirichlet edge layer.

    White noise filtered by a Gaussian of ``width`` cells, so every wave
    number carries some weight; a few plane waves would be orthogonal to
    most residuals.
    """
    m = grid.m
    axes = tuple(range(m))
    noise = rng.standard_normal(grid.extents + (m, m))
    freqs = np.meshgrid(*[np.fft.fftfreq(n) for n in grid.extents], indexing="ij")
    k2 = sum(f * f for f in freqs)
    filt = np.exp(-2.0 * (np.pi * width) ** 2 * k2)[..., None, None]
    T = np.fft.ifftn(np.fft.fftn(noise, axes=axes) * filt, axes=axes).real
    if not grid.periodic:
        for a, n in enumerate(grid.extents):
            shape = [1] * m + [1, 1]
            shape[a] = n
            T = T * np.sin(np.pi * np.arange(n) / (n - 1)).reshape(shape)
        T[~grid.interior_mask()] = 0.0
    return T / np.abs(T).max()


def max_weak_residual(J, g, count, seed):
    rng = np.random.default_rng([seed, 7])
    return max(abs(fd.weak_residual(J, g, random_test_field(J.grid, rng))) for _ in range(count))


def _centers(cfg, grid, seed):
    if cfg["center"] is not None:
        pts = [np.asarray(cfg["center"], dtype=float)]
    else:
        pts = [0.5 * (grid.lower() + grid.upper())]
    if cfg["centers"] > 0:
        rng = np.random.default_rng(seed)
        lo, hi = grid.lower(), grid.upper()
        pts += [lo + rng.uniform(size=grid.m) * (hi - lo) for _ in range(cfg["centers"])]
    for p in pts:
        if p.shape != (grid.m,):
            raise UsageError("center has the wrong dimension")
    return pts


def cmd_diagnose(cfg, out_dir, seed, emit=print):
    if not cfg["field"]:
        raise UsageError("diagnose needs a field file (key 'field')")
    names = [s.strip() for s in cfg["diagnostics"].split(",") if s.strip()]
    bad = [n for n in names if n not in DIAGNOSTICS]
    if bad or not names:
        raise UsageError(f"unknown diagnostic {', '.join(bad) or '(none)'}; valid names: {', '.join(DIAGNOSTICS)}")
    J = io.read_field(cfg["field"])
    g = _metric(cfg["metric"], J.m)
    grid = J.grid
    h = grid.h
    for key in ("radii", "tube_radii"):
        if cfg[key] is not None and min(cfg[key]) < 3 * h:
            raise UsageError(f"{key}: every radius must be >= 3h = {io.fmt(3 * h)}")
    radii = cfg["radii"] or tuple(3 * h * 2.0 ** k for k in range(4))
    summary = {}
    for name in names:
        path = os.path.join(out_dir, f"{name}.csv")
        if name == "energy":
            E = fd.energy(J, g)
            res = fd.harmonic_residual(J, g)
            io.write_csv(path, ("quantity", "value"),
                         [("energy", E), ("sup_residual", res.sup),
                          ("sup_commutator_residual", res.commutator_sup),
                          ("max_constraint_residual", J.max_constraint_residual(g))])
        elif name == "density_profile":
            rows, worst = [], 0.0
            for i, p in enumerate(_centers(cfg, grid, seed)):
                prof = dg.density_profile(J, g, p, radii, cfg["delta"], cfg["c_n"])
                rows += [(i,) + tuple(p) + r for r in prof.rows()]
                worst = max(worst, prof.monotone_violation)
            cols = ("center",) + tuple(f"p{a}" for a in range(grid.m)) + ("radius", "theta", "theta_tilde")
            io.write_csv(path, cols, rows)
            summary["monotone_violation"] = worst
        elif name == "homogeneity":
            s = cfg["gap_s"] or radii[0]
            t = cfg["gap_t"] or radii[-1]
            rows = []
            for i, p in enumerate(_centers(cfg, grid, seed)):
                W = dg.homogeneity_gap(J, g, p, s, t, cfg["delta"], cfg["c_n"])
                rows.append((i,) + tuple(p) + (s, t, W, dg.radial_deficit(J, p, s, t)))
            io.write_csv(path, ("center",) + tuple(f"p{a}" for a in range(grid.m))
                         + ("s", "t", "gap", "radial_deficit"), rows)
        elif name == "regularity":
            rmap = dg.regularity_map(J, g, cfg["regularity_radii"], cfg["stride"])
            io.write_csv(path, tuple(f"x{a}" for a in range(grid.m)) + ("r_J",),
                         [tuple(p) + (v,) for p, v in zip(rmap.points, rmap.values)])
        elif name in ("epsilon_scan", "tubular"):
            r = cfg["scan_radius"] or radii[0]
            eps = cfg["epsilon"]
            if eps is None:
                eps = 0.5 * r ** (2 - grid.m) * float(dg.ball_sums(fd.energy_density(J, g), grid, g, r).max())
                eps = eps if eps > 0 else 1.0
            pts = dg.epsilon_regularity_scan(J, g, eps, r)
            io.write_points(os.path.join(out_dir, "candidates.txt"), pts)
            if name == "epsilon_scan":
                io.write_csv(path, ("epsilon", "radius", "count"), [(eps, r, len(pts))])
            else:
                tube = cfg["tube_radii"] or radii
                io.write_csv(path, ("radius", "volume"),
                             [(t, dg.tubular_volume(pts, t, grid, g)) for t in tube])
        elif name == "bochner":
            b = dg.bochner_residual(J, g)
            io.write_csv(path, ("quantity", "value"),
                         [("sup_residual", b.sup), ("fitted_constant", b.fitted_constant())])
        emit(f"wrote {path}")
    if summary:
        io.write_summary(os.path.join(out_dir, "diagnose_summary.txt"), summary)
        for k, v in summary.items():
            emit(f"{k}: {io.fmt(v)}")
    return EXIT_OK


def cmd_fixtures(cfg, out_dir, seed, emit=print):
    name = cfg["name"]
    if name not in FIXTURES:
        raise UsageError(f"unknown fixture {name!r}; valid names: {', '.join(FIXTURES)}")
    if name == "sphere":
        from .geometry import sphere_stereographic

        n = cfg["n"]
        h = cfg["h"] or 1.0 / 16
        hw = cfg["half_width"] or 1.0
        grid = fd.Grid.cube(2 * n, hw + 2 * h, h)
        J = dg.sphere_fixture(n, grid)
        g = sphere_stereographic(n)
        c_mean, spread = dg.sphere_constant(grid, n, 0.1, min(1.0, hw))
        e = fd.energy_density(J, g)
        rows = [("c_n", c_mean), ("c_n_relative_spread", spread)]
        for p in (2, 3):
            rows.append((f"p_energy_{p}", fd.p_energy(J, g, p, radius=hw, edens=e)))
        if cfg["write_field"]:
            io.write_field(os.path.join(out_dir, "sphere.acsfield"), J)
        io.write_csv(os.path.join(out_dir, "sphere.csv"), ("quantity", "value"), rows)
    elif name == "dim4-cone":
        h = cfg["h"] or 1.0 / 16
        hw = cfg["half_width"] or 1.0
        grid = fd.Grid.cube(4, hw, h)
        J = dg.dim4_cone(grid)
        radii = cfg["radii"] or tuple(r for r in (0.25, 0.375, 0.5, 0.625, 0.75)
                                      if 3 * h <= r <= hw - 2 * h)
        e = fd.energy_density(J)
        rows = [("max_constraint_residual", "", J.max_constraint_residual())]
        rows += [("density", r, dg.density(J, None, None, r, edens=e)) for r in radii]
        if cfg["write_field"]:
            io.write_field(os.path.join(out_dir, "dim4-cone.acsfield"), J)
        io.write_csv(os.path.join(out_dir, "dim4-cone.csv"), ("quantity", "radius", "value"), rows)
    else:
        h = cfg["h"] or 2.0 ** -10
        eps = cfg["eps"] or tuple(2.0 ** -k for k in range(3, 8))
        res = dg.infinite_energy_probe(eps, h)
        rows = [("energy", e, E) for e, E in res.rows()]
        rows.append(("slope", "", res.slope))
        rows.append(("slope_over_2pi", "", res.slope / (2 * np.pi)))
        io.write_csv(os.path.join(out_dir, "s1-probe.csv"), ("quantity", "eps", "value"), rows)
    emit(f"wrote fixture {name} to {out_dir}")
    return EXIT_OK


COMMANDS = {"project": cmd_project, "flow": cmd_flow, "diagnose": cmd_diagnose,
            "fixtures": cmd_fixtures}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed for all random choices")
    common.add_argument("--threads", default="auto", help="worker threads: a count or 'auto'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    p = _Parser(prog="harmacs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    pp = sub.add_parser("project", parents=[common], help="project a field onto compatible structures")
    pp.add_argument("input", nargs="?")
    pp.add_argument("output", nargs="?")
    pp.add_argument("--metric")
    sub.add_parser("flow", parents=[common], help="run the reprojected heat flow")
    pd = sub.add_parser("diagnose", parents=[common], help="evaluate diagnostics on a field file")
    pd.add_argument("field", nargs="?")
    pd.add_argument("--metric")
    pd.add_argument("--diagnostics")
    pf = sub.add_parser("fixtures", parents=[common], help="write an analytic fixture")
    pf.add_argument("name", nargs="?")
    return p


def _raw_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = read_config_text(fh.read(), args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    for item in args.set:
        raw.update(read_config_text(item, "--set"))
    for key, attr in (("input", "input"), ("output", "output"), ("metric", "metric"),
                      ("field", "field"), ("diagnostics", "diagnostics"), ("name", "name")):
        val = getattr(args, attr, None)
        if val is not None:
            raw[key] = val
    return raw


def _threads(text):
    if text == "auto":
        return None
    try:
        n = int(text)
    except ValueError:
        raise UsageError(f"--threads must be a positive integer or 'auto', got {text!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def main(argv=None, emit=print):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.command, _raw_config(args))
        threads = _threads(args.threads)
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        os.makedirs(args.out, exist_ok=True)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg, args.out, args.seed, emit)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, DomainError, InternalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HarmacsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
