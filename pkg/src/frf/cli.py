"""Command-line front end.

    frf <validate|renorm|embed|measure|zstats|laplacian|energy> <fractal> [options]

Exit codes: 0 ok, 1 validation failure, 2 numerical failure, 3 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cache import Cache, cache_key
from .calculus import (
    bump_corpus,
    c1_bound,
    convergence_table,
    gauss_green_residual,
    laplacian_constant_check,
    norm_squared,
)
from .harmonic import (
    ExtensionSet,
    HarmonicEmbedding,
    HarmonicStructure,
    embed,
    extension_matrices,
    vertex_levels,
    wn_diagnostic,
)
from .kusuoka import level_additivity, level_q, martingale_stats, null_mask
from .render import RenderSpec, render_svg
from .resistance import (
    FloatingInteriorError,
    MarkovViolation,
    NumericalError,
    QuadForm,
    SymmetryMismatchError,
    Weights,
    fixed_point_iterate,
    lambda_map,
    solve_renormalization_symmetric,
)
from .structure import (
    DefinitionParseError,
    StructureError,
    format_word,
    load_definition,
    validate_structure,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3

COMMANDS = ("validate", "renorm", "embed", "measure", "zstats", "laplacian", "energy")

BANNER = (
    "conventions: E(f,f) = sum_{x<y} c_xy (f(x)-f(y))^2; "
    "nu(F_w) = Tr Q_w, Q_w = rho_w M_w^T D_0 M_w; Z_w = Q_w / Tr Q_w; M_{w.j} = A_j M_w"
)

DEFAULT_LEVEL = {
    "validate": 3,
    "renorm": 1,
    "embed": 4,
    "measure": 4,
    "zstats": 0,
    "laplacian": 5,
    "energy": 5,
}

log = logging.getLogger("frf")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="frf", description="Resistance-form analysis on finitely ramified fractals.")
    p.add_argument("--version", action="version", version=f"frf {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("fractal", help="built-in name or path to a definition file")
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--weights", default=None, help="comma-separated r1,..,rm")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for reports and artifacts")
    p.add_argument("--no-cache", action="store_true")
    return p


@dataclass
class RunConfig:
    command: str
    fractal: str
    level: int
    weights: np.ndarray | None
    svg: bool
    depth: int
    samples: int
    seed: int
    out: Path | None
    cache: bool

    @classmethod
    def from_args(cls, ns):
        weights = None
        if ns.weights:
            try:
                weights = np.array([float(t) for t in ns.weights.split(",")])
            except ValueError:
                raise UsageError(f"cannot parse --weights {ns.weights!r}") from None
        level = DEFAULT_LEVEL[ns.command] if ns.level is None else ns.level
        if level < 0:
            raise UsageError("--level must be nonnegative")
        if ns.command == "validate" and level < 1:
            raise UsageError("validate needs --level >= 1")
        if ns.depth < 1 or ns.samples < 1:
            raise UsageError("--depth and --samples must be positive")
        return cls(
            ns.command,
            ns.fractal,
            level,
            weights,
            ns.svg,
            ns.depth,
            ns.samples,
            ns.seed,
            Path(ns.out) if ns.out else None,
            not ns.no_cache,
        )


# ----------------------------------------------------------------------------
# pipeline pieces


def _structure(fdef, cfg, cache):
    """Harmonic structure, from cache when possible."""
    if cfg.weights is not None and len(cfg.weights) != fdef.m:
        raise UsageError(f"--weights needs {fdef.m} values for {fdef.name}")
    key = cache_key("structure", fdef, cfg.weights)

    def compute():
        if cfg.weights is None:
            e0, r = solve_renormalization_symmetric(fdef)
            w = Weights.uniform(fdef.m, r)
        else:
            w = Weights(cfg.weights)
            fp = fixed_point_iterate(QuadForm.complete(fdef.b), fdef, w)
            if not fp.converged or abs(fp.scale - 1.0) > 1e-9:
                raise NumericFailure(
                    f"no fixed point for these weights (converged={fp.converged}, "
                    f"Lambda scale {fp.scale:.12g}, residual {fp.residual:.3e})"
                )
            e0 = fp.form
        ext = extension_matrices(e0, fdef, w, check=False)
        return {"e0": e0.dense(), "rho": w.values, "A": ext.A}

    arr = cache.get(key, compute)
    return HarmonicStructure(fdef, QuadForm(arr["e0"]), Weights(arr["rho"]), ExtensionSet(arr["A"]))


def _header(cfg, fdef):
    return [
        f"frf {__version__}",
        f"command: {cfg.command}",
        f"fractal: {fdef.name}  m={fdef.m}  b={fdef.b}  hash={fdef.digest()}",
        f"level: {cfg.level}  seed: {cfg.seed}",
        BANNER,
        "",
    ]


def _fmt(x):
    return f"{x:.15g}"


def cmd_validate(cfg, fdef, cache):
    rep = validate_structure(fdef, cfg.level)
    lines = rep.lines() + ["", f"result: {'pass' if rep.passed else 'FAIL'}"]
    return lines, EXIT_OK if rep.passed else EXIT_INVALID, {}


def cmd_renorm(cfg, fdef, cache):
    lines = []
    if cfg.weights is None:
        e0, r = solve_renormalization_symmetric(fdef)
        w = Weights.uniform(fdef.m, r)
        lines.append(f"rho: {_fmt(r)}")
        scale, iters, converged = 1.0, 0, True
    else:
        if len(cfg.weights) != fdef.m:
            raise UsageError(f"--weights needs {fdef.m} values for {fdef.name}")
        w = Weights(cfg.weights)
        fp = fixed_point_iterate(QuadForm.complete(fdef.b), fdef, w)
        e0, scale, iters, converged = fp.form, fp.scale, fp.iterations, fp.converged
        lines.append("weights: " + " ".join(_fmt(v) for v in w.values))
    img = lambda_map(e0, fdef, w).dense()
    residual = float(np.abs(img - scale * e0.dense()).max())
    lines += [
        f"residual: {residual:.3e}",
        f"lambda scale: {_fmt(scale)}",
        f"iterations: {iters}",
        f"converged: {str(converged).lower()}",
        f"regular: {str(w.regular).lower()}",
        "e0 conductances:",
    ]
    lines += [f"  {i + 1} {j + 1} {_fmt(c)}" for i, j, c in e0.conductances()]
    ok = converged and abs(scale - 1.0) < 1e-9
    if converged and not ok:
        lines.append(f"not a fixed point: Lambda(e0) = {_fmt(scale)} e0; weights scaled by {_fmt(1 / scale)} would fix it")
    return lines, EXIT_OK if ok else EXIT_NUMERIC, {}


def cmd_embed(cfg, fdef, cache):
    hs = _structure(fdef, cfg, cache)
    key = cache_key("embed", fdef, hs.rho, cfg.level)
    coords = cache.get(key, lambda: {"coords": embed(hs, cfg.level).coords})["coords"]
    emb = HarmonicEmbedding(cfg.level, coords, vertex_levels(fdef, cfg.level))
    pts = coords[:, :-1]
    span = np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) if len(pts) > 1 else 0
    lines = [
        f"vertices: {len(coords)}",
        f"cells: {fdef.m ** cfg.level}",
        f"image dimension: {span}" + ("  (degenerate hull)" if span < 2 else ""),
    ]
    files = {f"embed-{fdef.name}-L{cfg.level}.txt": "\n".join(emb.lines()) + "\n"}
    if cfg.svg:
        lg = fdef.level(cfg.level)
        null = null_mask(level_q(hs, cfg.level), np.trace(hs.d0))
        svg = render_svg(coords[lg.cells], RenderSpec(cfg.level), null, title=f"{fdef.name} level {cfg.level}")
        files[f"embed-{fdef.name}-L{cfg.level}.svg"] = svg
    return lines, EXIT_OK, files


def cmd_measure(cfg, fdef, cache):
    hs = _structure(fdef, cfg, cache)
    wn = wn_diagnostic(hs, cfg.level)
    q1 = level_q(hs, 1)
    lines = [
        f"nu(F) = Tr D_0 = {_fmt(float(np.trace(hs.d0)))}",
        f"additivity residual to level {cfg.level}: {level_additivity(hs, cfg.level):.3e}",
        "level-1 cell measures:",
    ]
    lines += [f"  {format_word((j,))}  {_fmt(float(np.trace(q)))}" for j, q in enumerate(q1)]
    lines.append("")
    lines += wn.lines()
    if not wn.maximal_null:
        lines.append("null cells: none")
    return lines, EXIT_OK, {}


def cmd_zstats(cfg, fdef, cache):
    hs = _structure(fdef, cfg, cache)
    rep = martingale_stats(hs, cfg.depth, cfg.samples, cfg.seed)
    return rep.lines(), EXIT_OK, {}


def cmd_laplacian(cfg, fdef, cache):
    hs = _structure(fdef, cfg, cache)
    lines = []
    bumps = bump_corpus(fdef.b)[:5]
    f = norm_squared(fdef.b)
    lines.append("level  " + "  ".join(f"{g.name:>20s}" for g in bumps))
    for n in range(1, cfg.level + 1):
        res = [gauss_green_residual(hs, n, f, g) for g in bumps]
        lines.append(f"{n:5d}  " + "  ".join(f"{r:20.6e}" for r in res))
    lines.append("")
    lines += laplacian_constant_check(hs, cfg.level).lines()
    return lines, EXIT_OK, {}


def cmd_energy(cfg, fdef, cache):
    hs = _structure(fdef, cfg, cache)
    f = norm_squared(fdef.b)
    rows = convergence_table(hs, f, range(0, cfg.level + 1))
    lines = [f"f = {f.name}", "level  discrete              kigami                quantum"]
    for n, d, k, q, _ in rows:
        lines.append(f"{n:5d}  {d:.15e}  {k:.15e}  {q:.15e}")
    bound = c1_bound(hs, range(0, cfg.level + 1), f)
    lines.append(f"C1 bound nu(F)|f|_C1^2 = {_fmt(bound.rows[0][2])}  holds: {str(bound.ok).lower()}")
    return lines, EXIT_OK, {}


HANDLERS = {
    "validate": cmd_validate,
    "renorm": cmd_renorm,
    "embed": cmd_embed,
    "measure": cmd_measure,
    "zstats": cmd_zstats,
    "laplacian": cmd_laplacian,
    "energy": cmd_energy,
}


def run(argv=None, stdout=None):
    """Run one command; returns the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        cfg = RunConfig.from_args(build_parser().parse_args(argv))
        fdef = load_definition(cfg.fractal)
        if fdef.m ** cfg.level > fdef.cell_budget:
            raise UsageError(f"level {cfg.level} exceeds the cell budget ({fdef.cell_budget} cells)")
        cache = Cache(enabled=cfg.cache)
        body, code, files = HANDLERS[cfg.command](cfg, fdef, cache)
    except UsageError as exc:
        print(f"frf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DefinitionParseError as exc:
        print(f"frf: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StructureError, FileNotFoundError) as exc:
        print(f"frf: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericFailure, NumericalError, SymmetryMismatchError, FloatingInteriorError, MarkovViolation) as exc:
        print(f"frf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    text = "\n".join(_header(cfg, fdef) + body) + "\n"
    stdout.write(text)
    out = cfg.out if cfg.out is not None else (Path(".") if files else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.out is not None:
            (out / f"{cfg.command}-{fdef.name}-L{cfg.level}.report.txt").write_text(text)
        for name, content in files.items():
            (out / name).write_text(content)
    return code


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="frf: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
