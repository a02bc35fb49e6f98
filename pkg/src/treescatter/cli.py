"""
Command-line front end: ``treescatter dos|scatter|surgery``.

Exit codes: 0 success, 2 an invariant check failed, 3 bad input or configuration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (
    ExceptionalParameter,
    InputFormatError,
    InvalidParameter,
    InvalidStructure,
    TreeScatterError,
)
from .free import closed_walk_count, radial_root_measure, stone_dos
from .potential import NonlocalPotential, load_potential_json
from .scattering import (
    ScatteringProblem,
    correlation,
    eigen_residual,
    exceptional_scan,
    onshell_s_matrix,
    pure_point_spectrum,
    unitarity_residual,
)
from .spectral import band_edge, band_moment, circle_quadrature, dos_density, lambda_of, period
from .surgery import AsymptoticGraph, embed
from .tree import TruncatedTree, load_graph_json

log = logging.getLogger("treescatter")

EXIT_OK, EXIT_INVARIANT, EXIT_INPUT = 0, 2, 3

UNITARITY_TOL = 1e-6
CORRELATION_TOL = 1e-6
RESIDUAL_TOL = 1e-10


@dataclass
class RunConfig:
    q: int = 2
    depth: int = 8
    s_nodes: int = 512
    eps_ladder: list[str] = field(default_factory=lambda: ["1e-2", "1e-3"])
    threshold: float = 1e-8
    points: int = 201
    seed: int = 0
    threads: int = 0
    out: str | None = None

    def validate(self) -> "RunConfig":
        if int(self.q) != self.q or self.q < 2:
            raise InvalidParameter(f"q must be an integer >= 2, got {self.q}")
        if not 2 <= self.depth <= 14:
            raise InvalidParameter(f"depth must lie in [2, 14], got {self.depth}")
        if self.s_nodes < 2:
            raise InvalidParameter("s-nodes must be >= 2")
        if not self.eps_ladder or any(float(e) <= 0 for e in self.eps_ladder):
            raise InvalidParameter("eps ladder must be a non-empty list of positive numbers")
        if not 0 < self.threshold < 1:
            raise InvalidParameter("threshold must lie in (0, 1)")
        if self.points < 1:
            raise InvalidParameter("points must be positive")
        if self.threads < 0:
            raise InvalidParameter("threads must be non-negative")
        return self

    @property
    def workers(self) -> int:
        return self.threads or os.cpu_count() or 1

    def fingerprint(self, *inputs: Path) -> str:
        # output location and thread count do not affect results
        params = {k: v for k, v in asdict(self).items() if k not in ("out", "threads")}
        h = hashlib.sha256(json.dumps(params, sort_keys=True).encode())
        for p in inputs:
            h.update(Path(p).read_bytes())
        return h.hexdigest()[:16]


def _eps_name(e) -> str:
    if isinstance(e, str):
        return e
    exp = math.floor(math.log10(e))
    mant = e / 10**exp
    return f"1e{exp}" if abs(mant - 1) < 1e-12 else f"{mant:g}e{exp}"


def build_config(args: argparse.Namespace) -> RunConfig:
    """Flags first, then the optional JSON config file on top."""
    cfg = RunConfig()
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFormatError(f"cannot read config: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        for k, v in data.items():
            k = k.replace("-", "_")
            if k not in known:
                raise InputFormatError(f"unknown config key {k!r}")
            setattr(cfg, k, v)
    cfg.eps_ladder = [_eps_name(e) for e in cfg.eps_ladder]
    return cfg.validate()


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _out_path(cfg: RunConfig, name: str) -> Path | None:
    return None if cfg.out is None else Path(cfg.out) / name


# ---------------------------------------------------------------------- dos


def cmd_dos(cfg: RunConfig) -> int:
    """CSV of the density of states, its Stone approximations and the truncation histogram."""
    q = cfg.q
    edge = band_edge(q)
    lam = np.linspace(-edge, edge, cfg.points + 2)[1:-1]
    evals, weights = radial_root_measure(q, cfg.depth)
    bins = np.linspace(-edge, edge, 41)
    mass, _ = np.histogram(np.clip(evals, -edge, edge), bins=bins, weights=weights)
    hist = mass / np.diff(bins)
    which = np.clip(np.searchsorted(bins, lam, side="right") - 1, 0, 39)
    lines = [f"# treescatter dos fingerprint={cfg.fingerprint()} q={q} depth={cfg.depth}",
             ",".join(["lambda", "de"] + [f"stone_{e}" for e in cfg.eps_ladder] + ["hist"])]
    de = dos_density(q, lam)
    for i, x in enumerate(lam):
        row = [x, de[i]] + [stone_dos(q, x, float(e)) for e in cfg.eps_ladder] + [hist[which[i]]]
        lines.append(",".join(f"{v:.12g}" for v in row))
    t = TruncatedTree(q, 6)
    for n in range(9):
        lines.append(f"# moment n={n} quadrature={band_moment(q, n):.12g} walks={closed_walk_count(t, 0, n)}")
    _emit("\n".join(lines) + "\n", _out_path(cfg, "dos.csv"))
    return EXIT_OK


# ------------------------------------------------------------------ scatter


def _avoiding(points: np.ndarray, ex) -> np.ndarray:
    return np.array([p for p in points if not ex.contains(p) and not ex.contains(period(ex.q) - p)])


def scatter_report(t: TruncatedTree, W: NonlocalPotential, cfg: RunConfig) -> tuple[dict, list[str], bool]:
    """Run the scattering checks; returns (report, s-sweep CSV rows, all invariants hold)."""
    q = t.q
    tau = period(q)
    ex = exceptional_scan(t, W, circle_quadrature(q, cfg.s_nodes)[0], threshold=cfg.threshold)
    pp = pure_point_spectrum(t, W)
    rng = np.random.default_rng(cfg.seed)
    s_sweep = _avoiding(np.linspace(0, tau / 2, 18)[1:-1], ex)
    energies = _avoiding(np.linspace(0, tau / 2, 22)[1:-1], ex)
    energies = np.real(lambda_of(q, energies))

    def sweep_row(s):
        S = onshell_s_matrix(t, W, s)
        return [s, float(np.real(S.s.lam)), float(np.max(np.abs(S.tau), initial=0.0)),
                float(np.max(np.abs(S.s_tilde), initial=0.0))]

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(sweep_row, s_sweep))
        unit = list(pool.map(lambda e: unitarity_residual(t, W, e), energies))

    prob = ScatteringProblem(t, W)
    residual = 0.0
    pool = t.ball(max(t.depth - 3, 0))
    probe = rng.choice(pool, size=min(50, pool.size), replace=False)
    for s in s_sweep[:: max(1, len(s_sweep) // 4)]:
        rays = rng.choice(t.level(t.depth), size=4, replace=False)
        residual = max(residual, eigen_residual(prob.solve(s, rays), probe))

    corr = []
    for _ in range(5):
        x, y = (int(v) for v in rng.choice(t.ball(2), size=2))
        lam = float(energies[rng.integers(energies.size)]) if energies.size else 0.0
        try:
            lhs, rhs = correlation(t, W, lam, x, y)
        except ExceptionalParameter:
            continue
        corr.append({"x": x, "y": y, "lambda": lam, "lhs": [lhs.real, lhs.imag], "rhs": [rhs.real, rhs.imag],
                     "diff": abs(lhs - rhs)})

    checks = {
        "unitarity": max(unit, default=0.0) < UNITARITY_TOL,
        "correlation": all(c["diff"] < CORRELATION_TOL for c in corr),
        "eigen_residual": residual < RESIDUAL_TOL,
    }
    report = {
        "q": q,
        "depth": t.depth,
        "support": [int(v) for v in W.support],
        "exceptional": {"points": ex.points, "energies": ex.energies, "intervals": [list(i) for i in ex.intervals]},
        "pp": {
            "embedded": sorted(float(p.lam) for p in pp.embedded),
            "outside": sorted(float(p.lam) for p in pp.outside),
        },
        "unitarity": {"energies": [float(e) for e in energies], "residuals": unit},
        "eigen_residual": residual,
        "correlation": corr,
        "checks": checks,
    }
    csv = ["s,lambda,max_abs_tau,max_abs_s_tilde"] + [",".join(f"{v:.12g}" for v in r) for r in rows]
    return report, csv, all(checks.values())


def cmd_scatter(cfg: RunConfig, potential: Path) -> int:
    W = load_potential_json(potential)
    t = TruncatedTree(W.q, cfg.depth)
    if W.support.size and (W.support.max() >= t.n or W.max_depth(t) > t.depth - 3):
        raise InputFormatError(f"potential support does not fit depth {cfg.depth} (needs depth >= support depth + 3)")
    report, csv, ok = scatter_report(t, W, cfg)
    fp = cfg.fingerprint(potential)
    report = {"fingerprint": fp} | report
    _emit(json.dumps(report, indent=2, sort_keys=False) + "\n", _out_path(cfg, "scatter.json"))
    if cfg.out is not None:
        _emit(f"# treescatter scatter fingerprint={fp}\n" + "\n".join(csv) + "\n", _out_path(cfg, "s_sweep.csv"))
    return EXIT_OK if ok else EXIT_INVARIANT


# ------------------------------------------------------------------ surgery


def cmd_surgery(cfg: RunConfig, graph: Path, chain: bool = False, radius: int = 1) -> int:
    fg = load_graph_json(graph)
    g = AsymptoticGraph.from_finite_graph(fg, q=fg.q if fg.q is not None else cfg.q)
    res = embed(g, r=radius)
    fp = cfg.fingerprint(graph)
    out = {"fingerprint": fp} | res.to_dict()
    ok = res.ok
    if chain:
        report, _, chained_ok = scatter_report(res.t, res.W, cfg)
        out["scatter"] = report
        ok = ok and chained_ok
    _emit(json.dumps(out, indent=2) + "\n", _out_path(cfg, "surgery.json"))
    return EXIT_OK if ok else EXIT_INVARIANT


# --------------------------------------------------------------------- main


def _ladder(text: str) -> list[str]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    for p in parts:
        float(p)
    return parts


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--q", type=int, help="branching number (T_q has degree q+1)")
    common.add_argument("--depth", type=int, help="truncation depth D")
    common.add_argument("--s-nodes", dest="s_nodes", type=int, help="nodes on the spectral circle")
    common.add_argument("--eps-ladder", dest="eps_ladder", type=_ladder, help="comma-separated Stone widths")
    common.add_argument("--threshold", type=float, help="relative singular value flagging exceptional s")
    common.add_argument("--points", type=int, help="energy grid size for dos")
    common.add_argument("--seed", type=int, help="seed for sampled checks")
    common.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--config", help="JSON file whose keys override the flags")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="treescatter", description="Scattering on finite perturbations of regular trees.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("dos", parents=[common], help="density of states table")
    sc = sub.add_parser("scatter", parents=[common], help="scattering report for a potential file")
    sc.add_argument("potential", type=Path)
    su = sub.add_parser("surgery", parents=[common], help="embed an asymptotic graph into T_q")
    su.add_argument("graph", type=Path)
    su.add_argument("--chain", action="store_true", help="run the scattering report on the extracted W")
    su.add_argument("--radius", type=int, default=1, help="radius of the rebuilt ball")
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "dos":
            return cmd_dos(cfg)
        if args.command == "scatter":
            return cmd_scatter(cfg, args.potential)
        return cmd_surgery(cfg, args.graph, chain=args.chain, radius=args.radius)
    except (InputFormatError, InvalidStructure, InvalidParameter, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except TreeScatterError as exc:
        log.error("%s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
