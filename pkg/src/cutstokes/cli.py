"""Command-line driver for the convergence, conditioning and circle studies.

Settings are resolved as built-in defaults < ``--config`` file < flags.
Every CSV starts with ``#`` lines listing the effective settings.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ConvergenceTable, DiscreteSolution, compute_errors, eoc, export_fields, write_table_csv
from .assembly import StokesParams, assemble_system
from .cases import (
    CASE_NAMES,
    circle_subdivisions,
    mesh_subdivisions,
    perturbed_square_delta,
    perturbed_square_family,
    shifted_circle_family,
    shifted_radius,
    square_case,
)
from .linalg import FactorizationFailed, NonConvergence, solve, system_condition, write_matrix_market
from .mesh import build_structured_mesh

log = logging.getLogger("cutstokes")

DEFAULT_LEVELS = {1: 6, 2: 5, 3: 4}
SWEEP_COLUMNS = ("ell", "delta", "variant", "ghost_scale", "dofs", "cond")
CIRCLE_COLUMNS = ("ell", "delta", "radius", "dofs", "cond", "err_u_H1", "err_p_L2")


@dataclass
class RunConfig:
    command: str = "converge"
    case: str | None = None
    k: int = 1
    levels: int | None = None
    ell_start: int | None = None
    ell_stop: int | None = None
    ell_step: int = 10
    ell: int = 1
    h: float | None = None
    beta: float | None = None
    gamma: float | None = None
    gamma_u: list[float] | None = None
    gamma_p: list[float] | None = None
    ghost_scales: list[float] = field(default_factory=list)
    ghost_orders: list[str] | None = None
    disable_ghost: bool = False
    disable_pressure_jump: bool = False
    exclude_constraint_from_kappa: bool = False
    kappa: bool | None = None
    kappa_mode: str = "auto"
    timing: bool = False
    resolution: int = 101
    write_matrix: bool = False
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k not in (1, 2, 3):
            raise ValueError(f"k must be 1, 2 or 3, got {self.k}")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be at least 1")
        for name in ("gamma_u", "gamma_p"):
            coeffs = getattr(self, name)
            if coeffs is not None and len(coeffs) != self.k + 1:
                raise ValueError(f"{name} needs k + 1 = {self.k + 1} coefficients, got {len(coeffs)}")
        if self.case is not None and self.case not in CASE_NAMES:
            raise ValueError(f"unknown case {self.case!r}; choose from {', '.join(CASE_NAMES)}")
        if self.ell_step < 1:
            raise ValueError("ell-step must be positive")
        if self.h is not None and self.h <= 0:
            raise ValueError("h must be positive")

    @property
    def n_levels(self) -> int:
        return self.levels if self.levels is not None else DEFAULT_LEVELS[self.k]

    def ell_values(self, upper: int, offset: int | None = None) -> list[int]:
        """Sampled ell values; by default every ``ell_step``-th starting at ``offset``."""
        default = self.ell_step if offset is None else max(1, offset)
        start = self.ell_start if self.ell_start is not None else default
        stop = self.ell_stop if self.ell_stop is not None else upper
        return list(range(start, stop + 1, self.ell_step))

    def params(self, ghost_orders: int | None = None, ghost_scale: float = 1.0) -> StokesParams:
        """Penalty set for this run; ``ghost_orders`` keeps only orders below it."""
        base = StokesParams(self.k, beta=self.beta, gamma=self.gamma, gamma_u=self.gamma_u, gamma_p=self.gamma_p)
        gu = [g * ghost_scale for g in base.gamma_u]
        gp = [g * ghost_scale for g in base.gamma_p]
        if self.disable_ghost:
            gu = [0.0] * len(gu)
            gp = [0.0] * len(gp)
        if ghost_orders is not None:
            gu = [g if i < ghost_orders else 0.0 for i, g in enumerate(gu)]
            gp = [g if i < ghost_orders else 0.0 for i, g in enumerate(gp)]
        gamma = 0.0 if self.disable_pressure_jump else base.gamma
        return StokesParams(self.k, beta=base.beta, gamma=gamma, gamma_u=gu, gamma_p=gp)


def parse_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ValueError(f"unknown configuration key {name!r}")
    kind = str(kinds[name])
    raw = raw.strip()
    if name in ("gamma_u", "gamma_p", "ghost_scales"):
        return parse_list(raw)
    if name == "ghost_orders":
        return [t.strip() for t in raw.split(",") if t.strip()]
    if kind.startswith("bool"):
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"bad boolean {raw!r} for {name}")
        return low in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def header_lines(config: RunConfig, params: StokesParams, extra: dict | None = None) -> str:
    """Effective settings written at the top of every CSV."""
    lines = [f"cutstokes {__version__}"]
    merged = asdict(config)
    merged.pop("out")
    merged.update(params.as_dict())
    if extra:
        merged.update(extra)
    for key in sorted(merged):
        val = merged[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines)


def _kappa(system, config: RunConfig) -> float:
    try:
        return system_condition(system, config.kappa_mode, not config.exclude_constraint_from_kappa)
    except NonConvergence as exc:
        log.warning("condition estimate did not converge, partial %.3e", exc.estimate)
        return float("nan")


# -- converge ----------------------------------------------------------------


def converge_h(level: int) -> float:
    return 2.0 ** (-level - 2)


def run_converge(config: RunConfig) -> ConvergenceTable:
    """Refinement study h = 2^(-l-2), l = 0..levels-1, on the square case."""
    case_name = config.case or "square"
    if case_name != "square":
        raise ValueError("converge supports the square case only")
    case = square_case()
    params = config.params()
    out = Path(config.out) / f"converge_{case_name}_k{config.k}.csv"
    header = header_lines(config, params, {"case": case_name})
    reports = []
    want_kappa = bool(config.kappa)
    for level in range(config.n_levels):
        h = converge_h(level)
        t0 = time.perf_counter()
        mesh = build_structured_mesh(case.bbox, mesh_subdivisions(case.bbox, h))
        system = assemble_system(mesh, case.levelset, params, case)
        try:
            result = solve(system)
        except FactorizationFailed:
            _flush_partial(reports, out, header)
            raise
        rep = compute_errors(DiscreteSolution(result.x, system), case.u, case.p, case.grad_u, h=h)
        if want_kappa:
            rep.kappa = _kappa(system, config)
        rep.seconds = time.perf_counter() - t0 if config.timing else None
        reports.append(rep)
        log.info("level %d h=%g dofs=%d err_u=%.5e err_p=%.5e", level, h, rep.dofs, rep.velocity_H1, rep.pressure_L2)
        _flush_partial(reports, out, header)
    return eoc(reports) if len(reports) > 1 else ConvergenceTable(reports, [None], [None])


def _flush_partial(reports, path, header) -> None:
    if not reports:
        return
    table = eoc(reports) if len(reports) > 1 else ConvergenceTable(reports, [None], [None])
    table.write_csv(path, header)


def params_text(params: StokesParams) -> str:
    d = params.as_dict()
    return "; ".join(f"{k}={v}" for k, v in d.items())


# -- condsweep ---------------------------------------------------------------


def run_condsweep(config: RunConfig) -> list[dict]:
    """Condition numbers on the perturbed-square family, f = 0, one row per (ell, variant)."""
    if config.case not in (None, "shifted-square"):
        raise ValueError("condsweep runs on the shifted-square family")
    # the square touches the box at ell = 500, so sample the midpoints 5, 15, ..., 495
    ells = config.ell_values(499, offset=config.ell_step // 2)
    scales = [1.0] + [s for s in config.ghost_scales if s != 1.0]
    rows = []
    mesh = None
    for ell in ells:
        phi, bbox, h = perturbed_square_family(ell)
        h = config.h or h
        if mesh is None:
            mesh = build_structured_mesh(bbox, mesh_subdivisions(bbox, h))
        for scale in scales:
            params = config.params(ghost_scale=scale)
            system = assemble_system(mesh, phi, params, None)
            try:
                kappa = _kappa(system, config)
            except FactorizationFailed:
                kappa = float("inf")
            rows.append({
                "ell": ell,
                "delta": perturbed_square_delta(ell),
                "variant": "scaled" if scale != 1.0 else "base",
                "ghost_scale": scale,
                "dofs": system.dofmap.size,
                "cond": kappa,
            })
            log.info("ell=%d scale=%g cond=%.3e", ell, scale, kappa)
    rows.sort(key=lambda r: (r["delta"], r["ghost_scale"]))
    out = Path(config.out) / f"condsweep_k{config.k}.csv"
    write_table_csv(out, rows, header_lines(config, config.params(), {"case": "shifted-square"}),
                    SWEEP_COLUMNS)
    return rows


# -- circle ------------------------------------------------------------------


def ghost_variants(k: int, requested: list[str] | None) -> list[tuple[str, int]]:
    """Named ghost-order truncations: ``none`` and ``0``, ``0-1``, ... up to ``full``."""
    names = {"none": 0}
    for m in range(1, k + 2):
        names["0" if m == 1 else f"0-{m - 1}"] = m
    names["full"] = k + 1
    if requested is None:
        keys = ["none"] + ["0" if m == 1 else f"0-{m - 1}" for m in range(1, k + 2)]
    else:
        keys = requested
    out = []
    for key in keys:
        if key not in names:
            raise ValueError(f"unknown ghost variant {key!r}; choose from {', '.join(names)}")
        out.append((key, names[key]))
    return out


def run_circle(config: RunConfig) -> dict[str, list[dict]]:
    """Shifted-circle family: kappa and errors per ell for each ghost-order variant."""
    if config.case not in (None, "circle"):
        raise ValueError("circle runs on the circle family")
    h = config.h or 0.05
    ells = config.ell_values(250)
    want_kappa = True if config.kappa is None else config.kappa
    mesh = None
    results = {}
    for name, orders in ghost_variants(config.k, config.ghost_orders):
        params = config.params(ghost_orders=orders)
        rows = []
        for ell in ells:
            phi, case = shifted_circle_family(ell, h)
            if mesh is None:
                mesh = build_structured_mesh(case.bbox, circle_subdivisions(h))
            system = assemble_system(mesh, phi, params, case)
            row = {"ell": ell, "delta": perturbed_square_delta(ell), "radius": shifted_radius(ell, h),
                   "dofs": system.dofmap.size}
            try:
                result = solve(system)
                rep = compute_errors(DiscreteSolution(result.x, system), case.u, case.p, case.grad_u)
                row["err_u_H1"], row["err_p_L2"] = rep.velocity_H1, rep.pressure_L2
            except FactorizationFailed:
                row["err_u_H1"] = row["err_p_L2"] = float("inf")
            if want_kappa:
                try:
                    row["cond"] = _kappa(system, config)
                except FactorizationFailed:
                    row["cond"] = float("inf")
            rows.append(row)
            log.info("variant=%s ell=%d err_u=%.4e", name, ell, row["err_u_H1"])
        out = Path(config.out) / f"circle_k{config.k}_ghost-{name}.csv"
        write_table_csv(out, rows, header_lines(config, params, {"case": "circle", "h": h, "ghost_variant": name}),
                       CIRCLE_COLUMNS)
        results[name] = rows
    return results


def relative_spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / np.median(v))


# -- solve -------------------------------------------------------------------


def run_solve(config: RunConfig) -> dict:
    """One solve of the square or circle case, with field samples and optional matrix dump."""
    name = config.case or "square"
    if name == "square":
        case = square_case()
        h = config.h or 2.0**-4
        n = mesh_subdivisions(case.bbox, h)
    elif name == "circle":
        h = config.h or 0.05
        _, case = shifted_circle_family(config.ell, h)
        n = circle_subdivisions(h)
    else:
        raise ValueError("solve supports the square and circle cases")
    params = config.params()
    mesh = build_structured_mesh(case.bbox, n)
    system = assemble_system(mesh, case.levelset, params, case)
    result = solve(system)
    sol = DiscreteSolution(result.x, system)
    rep = compute_errors(sol, case.u, case.p, case.grad_u, h=h)
    out = Path(config.out)
    export_fields(sol, out / f"fields_{name}_k{config.k}.csv", config.resolution)
    summary = {"h": h, "dofs": rep.dofs, "err_u_H1": rep.velocity_H1, "err_p_L2": rep.pressure_L2,
               "residual": result.residual}
    if config.kappa:
        summary["cond"] = _kappa(system, config)
    write_table_csv(out / f"solve_{name}_k{config.k}.csv", [summary],
                    header_lines(config, params, {"case": name}), tuple(summary))
    if config.write_matrix:
        write_matrix_market(out / f"matrix_{name}_k{config.k}.mtx", system.matrix, params_text(params))
    return summary


# -- selftest ----------------------------------------------------------------


def run_selftest(config: RunConfig) -> bool:
    from .selftest import run_all

    results = run_all(config.seed, config.beta)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"selftest: {sum(r.passed for r in results)}/{len(results)} passed")
    return ok


# -- argument handling -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file, overridden by flags")
    common.add_argument("--case", choices=CASE_NAMES)
    common.add_argument("--k", type=int)
    common.add_argument("--levels", type=int, help="number of refinement levels (converge)")
    common.add_argument("--ell-start", type=int)
    common.add_argument("--ell-stop", type=int)
    common.add_argument("--ell-step", type=int)
    common.add_argument("--ell", type=int, help="family member for solve --case circle")
    common.add_argument("--h", type=float, help="mesh size")
    common.add_argument("--beta", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--gamma-u", type=parse_list, help="comma separated, k + 1 values")
    common.add_argument("--gamma-p", type=parse_list, help="comma separated, k + 1 values")
    common.add_argument("--ghost-scales", type=parse_list, help="extra ghost schedule multipliers (condsweep)")
    common.add_argument("--ghost-orders", type=lambda s: [t.strip() for t in s.split(",") if t.strip()],
                        help="circle variants, e.g. none,full")
    common.add_argument("--disable-ghost", action="store_true", default=None)
    common.add_argument("--disable-pressure-jump", action="store_true", default=None)
    common.add_argument("--exclude-constraint-from-kappa", action="store_true", default=None)
    common.add_argument("--kappa", action=argparse.BooleanOptionalAction, default=None,
                        help="estimate condition numbers")
    common.add_argument("--kappa-mode", choices=("auto", "dense", "iterative"))
    common.add_argument("--timing", action="store_true", default=None, help="fill the seconds column")
    common.add_argument("--resolution", type=int)
    common.add_argument("--write-matrix", action="store_true", default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cutstokes", description="Unfitted DG Stokes experiments.")
    parser.add_argument("--version", action="version", version=f"cutstokes {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("converge", parents=[common], help="refinement study on the square case")
    sub.add_parser("condsweep", parents=[common], help="condition numbers over the perturbed squares")
    sub.add_parser("circle", parents=[common], help="errors and conditioning over the shifted circles")
    sub.add_parser("solve", parents=[common], help="single solve with field export")
    sub.add_parser("selftest", parents=[common], help="oracle property checks")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["command"] = args.command
    return RunConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    if config.command == "converge":
        table = run_converge(config)
        for row in table.rows():
            print(", ".join(f"{k}={_show(v)}" for k, v in row.items()))
        if len(table.reports) > 1:
            print(f"mean EOC velocity {table.mean_eoc_u:.3f}, pressure {table.mean_eoc_p:.3f}")
    elif config.command == "condsweep":
        rows = run_condsweep(config)
        for scale in sorted({r["ghost_scale"] for r in rows}):
            ks = np.array([r["cond"] for r in rows if r["ghost_scale"] == scale])
            finite = ks[np.isfinite(ks)]
            ratio = finite.max() / finite.min() if finite.size else math.inf
            print(f"ghost scale {scale:g}: {len(ks)} points, {len(ks) - finite.size} failures, "
                  f"max/min cond {ratio:.3e}")
    elif config.command == "circle":
        for name, rows in run_circle(config).items():
            print(f"ghost {name}: spread of err_u_H1 {relative_spread([r['err_u_H1'] for r in rows]):.3e}")
    elif config.command == "solve":
        print(", ".join(f"{k}={_show(v)}" for k, v in run_solve(config).items()))
    elif config.command == "selftest":
        return 0 if run_selftest(config) else 1
    return 0


def _show(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.5g}"
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
