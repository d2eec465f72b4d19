"""Command-line entry point.

Subcommands
-----------
solve         convergence rates over a (t_max, k) sweep, one CSV row per k
neighborhood  average FSAI neighbourhood of the anisotropic problem
assemble      export the finest operator, mass, load and prolongations
sanity        rate sweep on the finite-difference biharmonic

Every CSV starts with ``#`` comment lines echoing the version and all
parameters, so two runs with the same flags produce identical files.
"""

import argparse
import os
import sys
from pathlib import Path

from . import __version__

PROBLEMS = ("biharmonic", "anisotropic", "triharmonic", "fd")
SMOOTHERS = ("cheb4", "cheb1", "richardson")
CYCLES = ("vkk", "v2k0")
_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMBA_NUM_THREADS",
)


class ConfigError(ValueError):
    pass


def parse_range(text, name):
    """``"A..B"`` or ``"A"`` into an inclusive ``(A, B)`` integer pair."""
    parts = str(text).split("..")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise ConfigError(f"--{name}: expected INT or A..B, got {text!r}") from None
    if lo > hi:
        raise ConfigError(f"--{name}: empty range {text!r}")
    return lo, hi


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("problem")
    g.add_argument("--problem", choices=PROBLEMS, default="biharmonic")
    g.add_argument("--levels", default="2..4", help="coarsest..finest level (A..B)")
    g.add_argument("--p", type=int, default=2, help="local polynomial degree")
    g.add_argument("--boundary-refine", action="store_true", help="raise the degree by one on boundary patches")
    g.add_argument("--theta", type=float, default=0.0, help="anisotropy angle in degrees")
    g.add_argument("--kappa", type=float, default=1.0, help="anisotropy scaling (>= 1)")
    g.add_argument("--stretch", type=float, default=None, help="patch stretch factor (default 1.5)")
    g = common.add_argument_group("preconditioner")
    g.add_argument("--tmax", default="4", help="adaptive FSAI steps, INT or A..B sweep")
    g.add_argument("--tau", type=float, default=1.0, help="admission threshold for candidates")
    g.add_argument("--nest", type=int, choices=(0, 1), default=0, help="nested FSAI depth")
    g = common.add_argument_group("cycle")
    g.add_argument("--smoother", choices=SMOOTHERS, default="cheb4")
    g.add_argument("--k", default="1..5", help="smoothing degree range A..B")
    g.add_argument("--cycle", choices=CYCLES, default="vkk")
    g.add_argument("--seed", type=int, default=42, help="seed of the initial error")
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--max-iter", type=int, default=50)
    g = common.add_argument_group("run")
    g.add_argument("--out", default=None, help="output file (directory for assemble); stdout if omitted")
    g.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")

    parser = argparse.ArgumentParser(
        prog="chebfsai", description="FSAI-preconditioned Chebyshev multilevel experiments"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="convergence rates over t_max and k")
    sub.add_parser("neighborhood", parents=[common], help="average FSAI neighbourhood histogram")
    sub.add_parser("assemble", parents=[common], help="export the discrete system")
    sub.add_parser("sanity", parents=[common], help="rates on the finite-difference biharmonic")
    return parser


def validate(args):
    """Normalise parsed flags into a plain config dict."""
    cfg = dict(vars(args))
    if cfg["command"] == "sanity":
        cfg["problem"] = "fd"
    lo, hi = parse_range(cfg["levels"], "levels")
    if cfg["command"] in ("solve", "sanity") and not lo < hi:
        raise ConfigError("--levels: coarsest level must be below the finest")
    if lo < 0:
        raise ConfigError("--levels: levels must be >= 0")
    if cfg["problem"] == "fd" and lo < 2:
        raise ConfigError("--levels: the FD grid needs a coarsest level >= 2 (4 x 4 mesh)")
    cfg["levels"] = (lo, hi)
    cfg["tmax"] = parse_range(cfg["tmax"], "tmax")
    if cfg["tmax"][0] < 1:
        raise ConfigError("--tmax must be >= 1")
    cfg["k"] = parse_range(cfg["k"], "k")
    if cfg["k"][0] < 1:
        raise ConfigError("--k must be >= 1")
    if cfg["p"] < 0:
        raise ConfigError("--p must be >= 0")
    if cfg["kappa"] < 1.0:
        raise ConfigError("--kappa must be >= 1")
    if not 0.0 < cfg["tau"] <= 1.0:
        raise ConfigError("--tau must lie in (0, 1]")
    if cfg["max_iter"] < 1 or cfg["tol"] <= 0.0:
        raise ConfigError("--max-iter must be >= 1 and --tol positive")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise ConfigError("--threads must be >= 1")
    if cfg["stretch"] is not None and not 1.0 < cfg["stretch"] < 2.0:
        raise ConfigError("--stretch must lie in (1, 2)")
    if cfg["command"] == "neighborhood" and cfg["problem"] == "fd":
        raise ConfigError("neighborhood needs a PUM problem")
    return cfg


def _fmt(v):
    if isinstance(v, tuple):
        return f"{v[0]}..{v[1]}"
    return str(v)


def header(cfg):
    keys = sorted(k for k in cfg if k not in ("out", "threads"))
    lines = [f"# chebfsai {__version__}", "# " + " ".join(f"{k}={_fmt(cfg[k])}" for k in keys)]
    return lines


def _aniso(cfg):
    import numpy as np

    from .pum import AnisotropySpec

    if cfg["problem"] != "anisotropic":
        return None
    return AnisotropySpec(np.radians(cfg["theta"]), cfg["kappa"])


def build_problem(cfg):
    """Finest system, prolongations and (for PUM) the finest space."""
    from .experiments import fd_biharmonic, pum_problem

    lo, hi = cfg["levels"]
    if cfg["problem"] == "fd":
        prob, Ps = fd_biharmonic(2**hi, hi - lo + 1)
        return prob, Ps, None
    system, Ps, spaces = pum_problem(
        cfg["problem"],
        (lo, hi),
        p=cfg["p"],
        boundary_refine=cfg["boundary_refine"],
        stretch=cfg["stretch"],
        aniso=_aniso(cfg),
    )
    system.solve_reference()
    return system, Ps, spaces[-1]


def rate_rows(cfg, system, Ps):
    """Rows ``[k, rates...]`` and column names for the (t_max, k) sweep."""
    from .chebyshev import SmootherKind
    from .experiments import Status, measure_rates
    from .multilevel import CycleSpec, setup

    nest = cfg["nest"]
    ks = range(cfg["k"][0], cfg["k"][1] + 1)
    names = ["k"]
    table = {k: [k] for k in ks}
    for t in range(cfg["tmax"][0], cfg["tmax"][1] + 1):
        tag = f"a{t}_r{nest}"
        names += [f"{tag}_L2_norm", f"{tag}_energy_norm", f"{tag}_residual"]
        h = setup(system.A, Ps, t_max=t, tau=cfg["tau"], n_nest=nest, seed=0)
        for k in ks:
            spec = CycleSpec.from_name(cfg["cycle"], k, SmootherKind(cfg["smoother"]))
            rep = measure_rates(h, system, spec, seed=cfg["seed"], tol=cfg["tol"], max_iter=cfg["max_iter"])
            rates = [rep.rho_L2, rep.rho_A, rep.rho_r]
            if rep.status is Status.DIVERGED:
                rates = [r if r >= 1.0 else float("inf") for r in rates]
            table[k] += rates
    return names, [table[k] for k in ks]


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_solve(cfg):
    system, Ps, _ = build_problem(cfg)
    names, rows = rate_rows(cfg, system, Ps)
    lines = header(cfg) + [",".join(names)]
    lines += [",".join([str(r[0])] + [f"{v:.10g}" for v in r[1:]]) for r in rows]
    _emit(lines, cfg["out"])
    return 0


def cmd_neighborhood(cfg):
    import numpy as np

    from .experiments import default_weight_degree, neighborhood_histogram
    from .fsai import nested_build, preconditioner_pattern
    from .pum import Cover, PuSpace, assemble
    from .pum.cover import DEFAULT_STRETCH

    level = cfg["levels"][1]
    stretch = DEFAULT_STRETCH if cfg["stretch"] is None else cfg["stretch"]
    space = PuSpace(
        Cover(level, stretch),
        q=default_weight_degree(cfg["problem"]),
        p=cfg["p"],
        boundary_refine=cfg["boundary_refine"],
    )
    system = assemble(space, cfg["problem"], aniso=_aniso(cfg))
    fac = nested_build(system.A, cfg["tmax"][1], cfg["tau"], n_levels=cfg["nest"])
    hist = neighborhood_histogram(space, preconditioner_pattern(fac))
    angle = "undefined" if hist.isotropic else f"{np.degrees(hist.principal_angle):.6f}"
    lines = header(cfg) + [
        f"# principal_angle_deg={angle} eigenvalue_ratio={hist.eigenvalue_ratio:.6f}",
        "dx,dy,frequency",
    ]
    lines += [f"{dx},{dy},{f:.10g}" for dx, dy, f in hist.rows()]
    _emit(lines, cfg["out"])
    return 0


def cmd_assemble(cfg):
    import numpy as np

    from .matrix_io import write_matrix

    if cfg["out"] is None:
        raise ConfigError("assemble needs --out DIRECTORY")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    system, Ps, _ = build_problem(cfg)
    write_matrix(out / "A.mtx", system.A)
    write_matrix(out / "mass.mtx", system.mass)
    for l, P in enumerate(Ps, start=1):
        write_matrix(out / f"P{l}.mtx", P)
    np.savetxt(out / "b.txt", system.b, fmt="%.17g")
    np.savetxt(out / "u_ref.txt", system.u_ref, fmt="%.17g")
    (out / "manifest.txt").write_text("\n".join(header(cfg)) + "\n")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "sanity": cmd_solve,
    "neighborhood": cmd_neighborhood,
    "assemble": cmd_assemble,
}


def _set_threads(n):
    n = str(n if n is not None else (os.cpu_count() or 1))
    for var in _THREAD_VARS:
        os.environ.setdefault(var, n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = validate(args)
    except ConfigError as exc:
        parser.error(str(exc))
    _set_threads(cfg["threads"])
    try:
        return COMMANDS[cfg["command"]](cfg)
    except ConfigError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
