"""Command-line entry point: configuration, dispatch, and run artifacts.

Every run resolves a RunConfig (defaults < config file < CLI flags),
executes one pipeline, and writes its artifacts plus a manifest with the
fully resolved configuration, library versions, and wall time.  Outputs
are deterministic for a fixed config and RNG seed; the timestamp lives
only in the manifest.

Config files use a line-oriented ``key = value`` grammar:
  - ``#`` starts a comment; blank lines are ignored
  - dotted keys group sections, e.g. ``problem.p = 2``
  - lists are comma-separated; frequency vectors use ``;`` between modes
    and spaces inside, e.g. ``problem.frequencies = 1 0; 0 1``
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .cauchy import (
    BlowUpError,
    QPEvaluator,
    build_approximant,
    drift_monitor,
)
from .lattice import AnalyticWeight, BoxSizeError, TruncationBox
from .nonlinearity import FFTSizeError
from .qp_solver import (
    NewtonSettings,
    frequency_jacobian,
    semiclassical_run,
    solve,
)
from .resonance import (
    SeedSolution,
    bicharacteristics,
    build_resonance_graph,
    certify_genericity,
)
from .surface import ResolutionError, RevolutionMetric, scaling_study

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_RESOURCE = 4


class ConfigError(Exception):
    """Invalid configuration file or flag combination."""


@dataclass
class RunConfig:
    """Resolved run parameters; every field has a usable default."""

    mode: str = "solve-qp"
    # problem
    p: int = 1
    delta: float = 1.0
    scale_k: int = 4
    frequencies: tuple[tuple[int, ...], ...] = ((1,),)
    amplitudes: tuple[complex, ...] = (0.01,)
    samples: int = 20
    # boxes / weights
    n_time: int | None = None
    n_space: int | None = None
    rho_time: float = 0.1
    rho_space: float = 0.1
    # tolerances
    newton_tol: float = 1e-12
    excision_c: float = 0.1
    gamma: float = 0.05
    tau: float | None = None
    n_max: int = 100
    # evolve
    horizon_exponent: float = 2.0
    dt: float | None = None
    evolve_n_space: int | None = None
    r_target: float = 1e-10
    # surface
    metric: str = "revolution"
    metric_radius: float = 2.0
    k_list: tuple[int, ...] = (32, 64, 128, 256)
    grid_n: int | None = None
    # sweep
    vary: str = "delta"
    values: tuple[float, ...] = (1e-2, 3e-3, 1e-3)
    sweep_mode: str = "solve-qp"
    jacobian: bool = False
    # output / runtime
    out: str = "runs"
    formats: tuple[str, ...] = ("json",)
    threads: int = 1
    rng_seed: int = 0

    def box(self) -> TruncationBox | None:
        if self.n_time is None and self.n_space is None:
            return None
        if self.n_time is None or self.n_space is None:
            raise ConfigError("set both boxes.n_time and boxes.n_space or neither")
        return TruncationBox(self.n_time, self.n_space)

    def weight(self) -> AnalyticWeight:
        return AnalyticWeight(self.rho_time, self.rho_space)

    def settings(self) -> NewtonSettings:
        return NewtonSettings(
            tol=self.newton_tol,
            excision_c=self.excision_c,
            gamma=self.gamma,
            tau=self.tau,
            n_max=self.n_max,
        )

    def seed(self) -> SeedSolution:
        if len(self.frequencies) != len(self.amplitudes):
            raise ConfigError("frequencies and amplitudes must pair up")
        return SeedSolution(self.frequencies, self.amplitudes)

    def echo(self) -> dict:
        doc = {}
        for name, value in vars(self).items():
            if isinstance(value, tuple):
                value = [
                    list(v) if isinstance(v, tuple) else _json_scalar(v) for v in value
                ]
            doc[name] = value
        return doc


def _json_scalar(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


PRESETS: dict[str, dict[str, str]] = {
    # Single periodic mode: the exactly solvable pipeline check.
    "single-mode": {
        "problem.frequencies": "2",
        "problem.amplitudes": "0.01",
        "problem.p": "1",
    },
    # Two-frequency cubic seed in one space dimension.
    "cubic-d1-b2": {
        "problem.frequencies": "1; 2",
        "problem.amplitudes": "0.007, 0.013",
        "problem.p": "1",
    },
    # Two-frequency cubic seed on the 2-torus.
    "cubic-d2-b2": {
        "problem.frequencies": "1 0; 0 1",
        "problem.amplitudes": "0.007, 0.013",
        "problem.p": "1",
    },
}


def parse_config_text(text: str) -> dict[str, str]:
    """key = value lines; '#' comments; later keys win."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_frequencies(text: str) -> tuple[tuple[int, ...], ...]:
    modes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        modes.append(tuple(int(tok) for tok in part.replace(",", " ").split()))
    if not modes:
        raise ConfigError("empty frequency list")
    return tuple(modes)


def _parse_amplitudes(text: str) -> tuple[complex, ...]:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            vals.append(complex(tok))
    return tuple(vals)


_KEY_PARSERS = {
    "mode": ("mode", str),
    "problem.p": ("p", int),
    "problem.delta": ("delta", float),
    "problem.scale_k": ("scale_k", int),
    "problem.frequencies": ("frequencies", _parse_frequencies),
    "problem.amplitudes": ("amplitudes", _parse_amplitudes),
    "problem.samples": ("samples", int),
    "boxes.n_time": ("n_time", int),
    "boxes.n_space": ("n_space", int),
    "weights.rho_time": ("rho_time", float),
    "weights.rho_space": ("rho_space", float),
    "tolerances.newton_tol": ("newton_tol", float),
    "tolerances.excision_c": ("excision_c", float),
    "tolerances.gamma": ("gamma", float),
    "tolerances.tau": ("tau", float),
    "tolerances.n_max": ("n_max", int),
    "evolve.horizon_exponent": ("horizon_exponent", float),
    "evolve.dt": ("dt", float),
    "evolve.n_space": ("evolve_n_space", int),
    "evolve.r_target": ("r_target", float),
    "surface.metric": ("metric", str),
    "surface.radius": ("metric_radius", float),
    "surface.k_list": ("k_list", lambda s: tuple(int(t) for t in s.split(","))),
    "surface.grid_n": ("grid_n", int),
    "sweep.vary": ("vary", str),
    "sweep.values": ("values", lambda s: tuple(float(t) for t in s.split(","))),
    "sweep.mode": ("sweep_mode", str),
    "sweep.jacobian": ("jacobian", lambda s: s.lower() in ("1", "true", "yes")),
    "output.directory": ("out", str),
    "output.formats": ("formats", lambda s: tuple(t.strip() for t in s.split(","))),
    "runtime.threads": ("threads", int),
    "runtime.rng_seed": ("rng_seed", int),
}


def apply_config(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    for key, raw in items.items():
        if key not in _KEY_PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parser = _KEY_PARSERS[key]
        try:
            setattr(cfg, attr, parser(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpnls",
        description="Quasi-periodic solutions of nonlinear Schrodinger "
        "equations on the torus: resonance geometry, Newton branches, "
        "direct evolution, and surface eigenfunction scaling.",
    )
    def add_globals(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="FFT worker count")
        p.add_argument("--rng-seed", type=int, help="seed for sampled runs")
        p.add_argument(
            "--format", choices=("json", "csv"), action="append", dest="formats",
            help="artifact format (repeatable)",
        )

    add_globals(parser)
    sub = parser.add_subparsers(dest="mode", required=True)
    for name in ("resonance", "genericity", "solve-qp", "semiclassical"):
        sp = sub.add_parser(name)
        add_globals(sp)
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--delta", type=float)
        if name == "semiclassical":
            sp.add_argument("--scale", type=int, dest="scale_k")
        if name == "genericity":
            sp.add_argument("--samples", type=int)
    ev = sub.add_parser("evolve")
    add_globals(ev)
    ev.add_argument("--preset", choices=sorted(PRESETS))
    ev.add_argument("--delta", type=float)
    ev.add_argument("--horizon-exponent", type=float, dest="horizon_exponent")
    ev.add_argument("--dt", type=float)
    su = sub.add_parser("surface")
    add_globals(su)
    su.add_argument("--metric", choices=("revolution", "flat"))
    su.add_argument("--k-list", dest="k_list")
    sw = sub.add_parser("sweep")
    add_globals(sw)
    sw.add_argument("--preset", choices=sorted(PRESETS))
    sw.add_argument("--vary", choices=("delta", "scale"))
    sw.add_argument("--values")
    sw.add_argument("--mode", dest="sweep_mode", choices=("solve-qp", "semiclassical"))
    sw.add_argument("--jacobian", action="store_true", default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        apply_config(cfg, parse_config_text(path.read_text()))
    preset = getattr(args, "preset", None)
    if preset:
        apply_config(cfg, PRESETS[preset])
    cfg.mode = args.mode
    overrides = {
        "out": args.out,
        "threads": args.threads,
        "rng_seed": args.rng_seed,
        "delta": getattr(args, "delta", None),
        "scale_k": getattr(args, "scale_k", None),
        "samples": getattr(args, "samples", None),
        "horizon_exponent": getattr(args, "horizon_exponent", None),
        "dt": getattr(args, "dt", None),
        "metric": getattr(args, "metric", None),
        "vary": getattr(args, "vary", None),
        "sweep_mode": getattr(args, "sweep_mode", None),
        "jacobian": getattr(args, "jacobian", None),
    }
    for attr, value in overrides.items():
        if value is not None:
            setattr(cfg, attr, value)
    if args.formats:
        cfg.formats = tuple(dict.fromkeys(args.formats))
    if getattr(args, "k_list", None):
        cfg.k_list = tuple(int(t) for t in args.k_list.split(","))
    if getattr(args, "values", None):
        cfg.values = tuple(float(t) for t in args.values.split(","))
    return cfg


def _branch_artifact(branch) -> dict:
    return branch.to_json_dict()


def run_resonance(cfg: RunConfig) -> dict:
    seed = cfg.seed()
    box = cfg.box() or TruncationBox(
        2 * cfg.p + 3,
        (2 * cfg.p + 3) * max(max(abs(a) for a in j) for j in seed.frequencies),
    )
    rset = bicharacteristics(seed, box)
    graph = build_resonance_graph(seed, rset, cfg.p)
    cert = certify_genericity(graph, seed, cfg.p)
    all_comps = graph.component_sites()
    # Singleton components are uncoupled bicharacteristic sites; only the
    # coupled components carry the resonance geometry worth reporting.
    components = [
        {
            "sites": [{"n": list(s.n), "j": list(s.j), "sign": sign} for s, sign in comp],
            "spatial_projection": [list(j) for j in sorted({s.j for s, _ in comp})],
        }
        for comp in all_comps
        if len(comp) > 1
    ]
    return {
        "certificate": cert.to_json_dict(),
        "n_plus": len(rset.plus),
        "n_minus": len(rset.minus),
        "n_singleton_components": sum(1 for c in all_comps if len(c) == 1),
        "components": components,
    }


def run_genericity(cfg: RunConfig) -> dict:
    rng = np.random.default_rng(cfg.rng_seed)
    b = len(cfg.frequencies)
    d = len(cfg.frequencies[0])
    results = []
    n_generic = 0
    for _ in range(cfg.samples):
        while True:
            freqs = tuple(
                tuple(int(a) for a in rng.integers(-5, 6, size=d))
                for _ in range(b)
            )
            if all(any(a != 0 for a in j) for j in freqs) and len(set(freqs)) == b:
                break
        amps = tuple(cfg.delta * (0.5 + rng.random()) for _ in range(b))
        seed = SeedSolution(freqs, amps)
        box = TruncationBox(
            2 * cfg.p + 3,
            (2 * cfg.p + 3) * max(max(abs(a) for a in j) for j in freqs),
        )
        rset = bicharacteristics(seed, box)
        graph = build_resonance_graph(seed, rset, cfg.p)
        cert = certify_genericity(graph, seed, cfg.p)
        n_generic += int(cert.is_generic)
        results.append(
            {"frequencies": [list(j) for j in freqs], "is_generic": cert.is_generic,
             "max_component_size": cert.max_component_size}
        )
    return {
        "samples": cfg.samples,
        "generic_fraction": n_generic / max(1, cfg.samples),
        "results": results,
    }


def run_solve_qp(cfg: RunConfig) -> dict:
    branch = solve(
        cfg.seed(), cfg.p, cfg.delta, None, cfg.box(), cfg.weight(), cfg.settings()
    )
    doc = _branch_artifact(branch)
    if not branch.accepted and not branch.excision_ok:
        raise BranchRejected(doc)
    return doc


def run_semiclassical(cfg: RunConfig) -> dict:
    branch, remainder = semiclassical_run(
        cfg.seed(), cfg.scale_k, cfg.p, None, None, cfg.settings()
    )
    doc = _branch_artifact(branch)
    doc["scale"] = cfg.scale_k
    doc["remainder"] = remainder
    if not branch.accepted and not branch.excision_ok:
        raise BranchRejected(doc)
    return doc


def run_evolve(cfg: RunConfig) -> dict:
    branch = solve(
        cfg.seed(), cfg.p, cfg.delta, None, cfg.box(), cfg.weight(), cfg.settings()
    )
    if not branch.accepted:
        raise BranchRejected(_branch_artifact(branch))
    n_space = cfg.evolve_n_space
    if n_space is None:
        n_space = 2 * max(
            max(abs(a) for a in s.j) for s in branch.field.u
        )
    evaluator = QPEvaluator.from_branch(branch, n_space)
    u0 = evaluator.state(0.0)
    _, matching_error = build_approximant(u0, [branch], cfg.r_target)
    report = drift_monitor(
        u0,
        evaluator,
        horizon_exponent=cfg.horizon_exponent,
        dt=cfg.dt,
        rho=cfg.rho_space,
    )
    return {
        "branch_residual": branch.residual_norm,
        "matching_error": matching_error,
        "report": json.loads(report.to_json()),
        "csv": report.to_csv(),
    }


def run_surface(cfg: RunConfig) -> dict:
    if cfg.metric == "flat":
        metric = RevolutionMetric.flat()
    else:
        metric = RevolutionMetric.revolution(cfg.metric_radius)
    study = scaling_study(metric, list(cfg.k_list), cfg.grid_n)
    return {
        "metric": metric.name,
        "slope": study.slope,
        "fit_residual": study.fit_residual,
        "records": [
            {"k": r.k, "lambda": r.lam, "sup_norm": r.sup_norm,
             "localization_width": r.localization_width, "gap": r.gap}
            for r in study.records
        ],
        "csv": study.to_csv(),
    }


def run_sweep(cfg: RunConfig) -> dict:
    rows = []
    amp_scale = max(abs(a) for a in cfg.amplitudes)
    for value in cfg.values:
        if cfg.vary == "delta":
            # Rescale the configured amplitude pattern so its largest
            # modulus equals the sweep value.
            amps = tuple(a * value / amp_scale for a in cfg.amplitudes)
            seed = SeedSolution(cfg.frequencies, amps)
            if cfg.sweep_mode != "solve-qp":
                raise ConfigError("delta sweeps require sweep.mode = solve-qp")
            branch = solve(
                seed, cfg.p, 1.0, None, cfg.box(), cfg.weight(), cfg.settings()
            )
            remainder = float("nan")
        else:
            seed = cfg.seed()
            branch, remainder = semiclassical_run(
                seed, int(value), cfg.p, None, None, cfg.settings()
            )
        first = branch.iterations[0] if branch.iterations else {}
        det = float("nan")
        if cfg.jacobian and branch.accepted:
            _, det, _ = frequency_jacobian(branch, cfg.settings())
        rows.append(
            {
                "value": value,
                "accepted": branch.accepted,
                "first_correction_norm": first.get("correction_norm", float("nan")),
                "omega_shift_norm": float(np.linalg.norm(branch.omega_shift())),
                "det_jacobian": det,
                "remainder": remainder,
            }
        )
    header = "delta_or_K,first_correction_norm,omega_shift_norm,det_jacobian,remainder"
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                f"{r[c]:.17g}"
                for c in (
                    "value",
                    "first_correction_norm",
                    "omega_shift_norm",
                    "det_jacobian",
                    "remainder",
                )
            )
        )
    return {"rows": rows, "csv": "\n".join(lines) + "\n"}


class BranchRejected(Exception):
    """Numerical failure carrying the rejected-branch artifact."""

    def __init__(self, artifact: dict):
        super().__init__(artifact.get("reject_reason") or "branch rejected")
        self.artifact = artifact


_RUNNERS = {
    "resonance": run_resonance,
    "genericity": run_genericity,
    "solve-qp": run_solve_qp,
    "semiclassical": run_semiclassical,
    "evolve": run_evolve,
    "surface": run_surface,
    "sweep": run_sweep,
}


def _write_artifacts(cfg: RunConfig, doc: dict, outdir: Path) -> list[str]:
    written = []
    csv_text = doc.pop("csv", None)
    if "json" in cfg.formats:
        path = outdir / f"{cfg.mode}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path.name)
    if "csv" in cfg.formats and csv_text is not None:
        path = outdir / f"{cfg.mode}.csv"
        path.write_text(csv_text)
        written.append(path.name)
    return written


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        cfg = resolve_config(args)
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        runner = _RUNNERS[cfg.mode]
        import scipy.fft

        exit_code = EXIT_OK
        try:
            with scipy.fft.set_workers(cfg.threads):
                doc = runner(cfg)
        except BranchRejected as exc:
            doc = exc.artifact
            exit_code = EXIT_NUMERICAL
        artifacts = _write_artifacts(cfg, doc, outdir)
        manifest = {
            "command": cfg.mode,
            "config": cfg.echo(),
            "versions": {
                "package": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
            },
            "artifacts": artifacts,
            "exit_code": exit_code,
            "wall_time_s": round(time.time() - started, 3),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return exit_code
    except (ConfigError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BlowUpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BoxSizeError, FFTSizeError, ResolutionError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
