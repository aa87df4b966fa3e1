"""Command-line driver.

    resonate <command> --config <path> [--set key=value]... [--out <dir>]

Every command reads one experiment config, writes its artifacts into the
run directory and records them in ``manifest.json``. Failures are written
to ``error.json`` and mapped to the exit codes of :mod:`resonate.errors`.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import jn_zeros

from resonate import __version__
from resonate.config import RunConfig, default_log_level, load_config, worker_count
from resonate.errors import ConfigError, FitRefused, ResonateError
from resonate.geometry import CavitySpec, DumbbellSpec, RectangleSpec, ResonatorSpec
from resonate.gluing import gluing_sweep, refinement_study
from resonate.mesh import Mesh, neck_transect_counts, triangulate, write_mesh
from resonate.nodal import count_monotonicity, courant_check, neck_positivity, nodal_domains, nodal_report
from resonate.outputs import read_json, sha256, write_csv, write_json
from resonate.plotting import plot_energy, plot_mesh, plot_rate_fit, plot_sign_pattern
from resonate.report import build_summary
from resonate.resonance import (
    EXCLUDED_FLAGS,
    decoupling_limit,
    find_resonance,
    neck_decay_profile,
    oracle_comparison,
    slope_ratio,
    truncated_problem,
    width_sweep,
)
from resonate.spectra import (
    Discretization,
    cavity_mode,
    closed_problem,
    comparison_sweep,
    dirichlet_eigs,
    splitting,
    track_eigenvalue,
)
from resonate.wave import energy_drift, wave_experiment, wave_system

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance of a run directory, updated by every command."""

    config: Dict
    version: str = __version__
    seeds: Dict[str, int] = field(default_factory=dict)
    mesh_hashes: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, List[str]] = field(default_factory=dict)
    timestamps: Dict[str, Dict[str, str]] = field(default_factory=dict)

    @classmethod
    def open(cls, run_dir: Path, config: RunConfig) -> "RunManifest":
        path = run_dir / "manifest.json"
        snapshot = json.loads(json.dumps(config.snapshot(), default=str))
        if path.exists():
            data = read_json(path)
            if data.get("config") == snapshot:
                return cls(**data)
            logger.warning("config differs from the one recorded in %s, starting a new manifest", path)
        return cls(snapshot, seeds={"seed": config.seed})

    def record(self, command: str, run_dir: Path, paths: List[Path], started: str) -> None:
        self.outputs[command] = sorted(str(Path(p).relative_to(run_dir)) for p in paths)
        self.timestamps[command] = {"started": started, "finished": _now()}

    def write(self, run_dir: Path) -> Path:
        return write_json(asdict(self), run_dir / "manifest.json")


# --- helpers --------------------------------------------------------------------------


def _mesh(config: RunConfig, spec, **kwargs) -> Mesh:
    m = config.mesh
    return triangulate(spec, m.h, m.neck_layers, grading=m.grading, min_angle=m.min_angle, **kwargs)


def _require(spec, kinds, command: str):
    if not isinstance(spec, kinds):
        names = ", ".join(k.__name__ for k in kinds) if isinstance(kinds, tuple) else kinds.__name__
        raise ConfigError(f"{command}: geometry.kind must describe a {names}", {"kind": type(spec).__name__})
    return spec


def reference_eigenvalues(spec, count: int) -> Optional[np.ndarray]:
    """Exact Dirichlet eigenvalues of rectangles and discs, ascending with multiplicity."""
    if isinstance(spec, RectangleSpec):
        values = sorted(spec.eigenvalue(m, n) for m in range(1, count + 2) for n in range(1, count + 2))
        return np.array(values[:count])
    if isinstance(spec, CavitySpec) and spec.kind == "disc":
        radius = spec.params[0]
        values = []
        for n in range(count + 1):
            for j in jn_zeros(n, count):
                values += [j**2 / radius**2] * (1 if n == 0 else 2)
        return np.array(sorted(values)[:count])
    return None


def _pairs(disc: Discretization, count: int):
    pairs = dirichlet_eigs(disc.K, disc.M, count=count, shift=0.0, probe=None)
    for j, p in enumerate(pairs):
        p.index = j + 1
    return pairs


# --- commands -------------------------------------------------------------------------


def cmd_mesh(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = config.geometry.build()
    mesh = _mesh(config, spec)
    path = write_mesh(mesh, run_dir / "mesh.txt")
    manifest.mesh_hashes["mesh.txt"] = sha256(path)
    quality = asdict(mesh.quality())
    if isinstance(spec, ResonatorSpec):
        stations = np.linspace(0.05, 0.95, 10) * spec.neck_length
        quality["neck_transect_min"] = int(neck_transect_counts(mesh, stations).min())
    quality.update(vertices=mesh.n_vertices, area=mesh.area())
    return [path, write_json(quality, run_dir / "mesh_quality.json"), plot_mesh(mesh, run_dir / "mesh.svg")]


def cmd_eigs(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = config.geometry.build()
    count = config.spectra.count
    mesh = _mesh(config, spec)
    manifest.mesh_hashes["eigs"] = sha256(write_mesh(mesh, run_dir / "eigs_mesh.txt"))
    disc = Discretization.build(mesh, config.fem.order)
    pairs = _pairs(disc, count)
    table = pd.DataFrame(
        {
            "index": [p.index for p in pairs],
            "eigenvalue": [p.eigenvalue for p in pairs],
            "residual": [p.residual for p in pairs],
            "cluster": [p.cluster for p in pairs],
        }
    )
    reference = reference_eigenvalues(spec, count)
    if reference is not None:
        table["reference"] = reference
        table["relative_error"] = (table["eigenvalue"] - table["reference"]).abs() / table["reference"]
    outputs = [run_dir / "eigs_mesh.txt", write_csv(table, run_dir / "eigenvalues.csv")]
    mode = min(config.spectra.mode, count)
    outputs.append(plot_sign_pattern(pairs[mode - 1].field, run_dir / f"mode_{mode}.svg", f"mode {mode}"))

    if isinstance(spec, ResonatorSpec):
        comparison, fits = comparison_sweep(
            spec, config.sweep.epsilons, config.mesh.h, config.spectra.mode,
            config.mesh.neck_layers, config.fem.order, config.spectra.margin,
        )
        outputs.append(write_csv(comparison, run_dir / "comparison.csv"))
        outputs.append(write_json({k: asdict(v) for k, v in fits.items()}, run_dir / "comparison_fit.json"))
        fit = fits["sup_compact"]
        outputs.append(plot_rate_fit(np.log(comparison["eps"]), np.log(comparison["sup_compact"]), fit.slope,
                                     fit.intercept, run_dir / "comparison.svg", "ln eps", "ln sup|u0 - v|"))
    return outputs


def cmd_resonance(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = _require(config.geometry.build(), ResonatorSpec, "resonance")
    m, p = config.mesh, config.pml
    spec_eps, closed, cavity = closed_problem(spec, spec.eps, m.h, m.neck_layers, config.fem.order, m.grading)
    u0 = cavity_mode(cavity, config.spectra.mode)
    v = track_eigenvalue(u0, closed)
    problem = truncated_problem(
        spec_eps, u0.eigenvalue, m.h, m.neck_layers, config.fem.order, m.h_exterior, m.grading,
        p.inner, p.thickness, p.sigma0,
    )
    manifest.mesh_hashes["resonance"] = sha256(write_mesh(problem.mesh, run_dir / "resonance_mesh.txt"))
    state = find_resonance(problem, v.eigenvalue, 0.5 * u0.gap, variants=p.variants, lam0=u0.eigenvalue)
    profile = neck_decay_profile(v.field, spec_eps)
    data = {
        "epsilon": spec.eps,
        "lambda0": u0.eigenvalue,
        "lambda_eps": v.eigenvalue,
        "rho": state.rho,
        "sqrt_rho": state.sqrt_rho,
        "alpha": state.alpha,
        "residual": state.residual,
        "spread": state.spread,
        "variants": state.variants,
        "flags": state.flags,
        "width": state.width,
        "lifetime": state.lifetime,
        "pml": asdict(state.pml),
        "neck_decay": {"rate": profile.rate, "target": profile.target, "stderr": profile.stderr},
    }
    oracle = oracle_comparison()
    return [
        run_dir / "resonance_mesh.txt",
        write_json(data, run_dir / "resonance.json"),
        write_csv(oracle, run_dir / "oracle_1d.csv"),
        write_csv(decoupling_limit(), run_dir / "oracle_limit.csv"),
        plot_sign_pattern(state.field.with_values(np.real(state.field.values)), run_dir / "resonance.svg", "Re u"),
    ]


def _sweep_fit_entry(result) -> Dict:
    return {
        "slope": result.slope,
        "intercept": result.intercept,
        "stderr": result.stderr,
        "target": result.target,
        "neck_length": result.neck_length,
        "unflagged": int(len(result.trusted_rows())),
    }


def cmd_sweep(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = _require(config.geometry.build(), (ResonatorSpec, DumbbellSpec), "sweep")
    m, s = config.mesh, config.sweep
    if isinstance(spec, DumbbellSpec):
        result = splitting(spec, s.epsilons, m.h, m.neck_layers, config.fem.order, config.spectra.mode)
        fit = {**asdict(result.fit), "target": result.target, "mode": result.mode}
        return [
            write_csv(result.table, run_dir / "splitting.csv"),
            write_json(fit, run_dir / "splitting_fit.json"),
            plot_rate_fit(result.table["inv_eps"], result.table["ln_split"], result.fit.slope, result.fit.intercept,
                          run_dir / "splitting.svg", "1/eps", "ln(E2 - E1)", result.target),
        ]

    workers = worker_count(s.workers)
    pml_options = asdict(config.pml)
    lengths = s.neck_lengths or [spec.neck_length]
    outputs, results = [], {}
    for length in lengths:
        geometry = config.geometry.build(neck_length=length)
        logger.info("sweep L=%.3f over %d widths with %d workers", length, len(s.epsilons), workers)
        result = width_sweep(
            geometry, s.epsilons, m.h, m.neck_layers, config.fem.order, config.spectra.mode,
            m.h_exterior, m.grading, pml_options, workers,
        )
        name = f"L{length:g}"
        results[name] = result
        table = result.table
        suffix = "" if len(lengths) == 1 else f"_{name}"
        excluded = table["flag"].apply(lambda f: any(x in str(f).split(";") for x in EXCLUDED_FLAGS))
        outputs.append(write_csv(table, run_dir / f"sweep{suffix}.csv"))
        outputs.append(plot_rate_fit(1.0 / table["epsilon"], np.log(table["abs_im"]), result.slope, result.intercept,
                                     run_dir / f"sweep{suffix}.svg", "1/eps", "ln|Im rho|", result.target, excluded))
    fit = {"sweeps": {k: _sweep_fit_entry(r) for k, r in results.items()}, "slope_ratio": None}
    if len(lengths) >= 2:
        short, long = results[f"L{min(lengths):g}"], results[f"L{max(lengths):g}"]
        fit["slope_ratio"] = slope_ratio(short, long)
        fit["length_ratio"] = max(lengths) / min(lengths)
    outputs.append(write_json(fit, run_dir / "sweep_fit.json"))
    return outputs


def _nodal_closed(config: RunConfig, spec, run_dir: Path) -> Dict:
    """Courant and floor checks on a closed domain without a neck."""
    disc = Discretization.build(_mesh(config, spec), config.fem.order)
    pairs = _pairs(disc, config.nodal.modes)
    tau = config.nodal.tau
    courant = courant_check(pairs, tau)
    fields, outputs = [], [write_csv(courant, run_dir / "courant.csv")]
    for p in pairs:
        if p.cluster:
            continue
        fields.append(nodal_report(nodal_domains(p.field, tau), p.eigenvalue, p.index))
        outputs.append(plot_sign_pattern(p.field, run_dir / f"nodal_{p.index}.svg", f"mode {p.index}"))
    second = next((f["count"] for f in fields if f["eigenvalue"] == pairs[1].eigenvalue), None) if len(pairs) > 1 else None
    return {"fields": fields, "second_count": second, "outputs": outputs}


def cmd_nodal(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = config.geometry.build()
    if isinstance(spec, (RectangleSpec, CavitySpec)):
        result = _nodal_closed(config, spec, run_dir)
        outputs = result.pop("outputs")
        return outputs + [write_json(result, run_dir / "nodal.json")]

    spec = _require(spec, ResonatorSpec, "nodal")
    m, tau = config.mesh, config.nodal.tau
    _, _, cavity = closed_problem(spec, spec.eps, m.h, m.neck_layers, config.fem.order, m.grading)
    result = _nodal_closed(config, spec.cavity, run_dir)
    outputs = result.pop("outputs")
    u0 = cavity_mode(cavity, config.spectra.mode)
    reference = nodal_domains(u0.field, tau)
    positivity, family = [], []
    for eps in sorted(config.sweep.epsilons, reverse=True):
        spec_eps, closed, cavity_eps = closed_problem(spec, eps, m.h, m.neck_layers, config.fem.order, m.grading)
        u0_eps = cavity_mode(cavity_eps, config.spectra.mode)
        v = track_eigenvalue(u0_eps, closed)
        report = neck_positivity(v, u0_eps, cavity_eps, spec_eps, config.nodal.delta, tau)
        positivity.append(report.to_dict())
        decomp = nodal_domains(v.field, tau)
        family.append((eps, decomp, spec_eps.neck_area()))
        result["fields"].append({**nodal_report(decomp, v.eigenvalue, positivity=report), "epsilon": eps})
        outputs.append(plot_sign_pattern(v.field, run_dir / f"nodal_eps{eps:g}.svg", f"eps = {eps:g}"))
    table, threshold = count_monotonicity(reference, family)
    result.update(reference_count=reference.count, threshold=threshold, monotonicity=bool(table["passed"].all()))
    outputs += [
        write_csv(pd.DataFrame(positivity), run_dir / "positivity.csv"),
        write_csv(table, run_dir / "monotonicity.csv"),
        write_json(result, run_dir / "nodal.json"),
    ]
    return outputs


def cmd_wave(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = _require(config.geometry.build(), ResonatorSpec, "wave")
    m, w = config.mesh, config.wave
    _, closed, _ = closed_problem(spec, spec.eps, m.h, m.neck_layers, 1, m.grading)
    system = wave_system(closed.mesh)
    bump = np.exp(-np.sum((closed.mesh.vertices - spec.cavity.center) ** 2, axis=1) / 0.1)
    drift = energy_drift(system, system.restrict(bump), steps=w.control_steps, cfl=w.cfl)
    data = {"offset": w.offset, "energy_drift": drift, "control_steps": w.control_steps}
    try:
        result = wave_experiment(
            spec, spec.eps, m.h, m.neck_layers, config.spectra.mode, w.periods, w.window, w.offset,
            w.filter_tol, w.max_degree, w.transient, w.energy_floor, w.samples, w.cfl,
        )
    except FitRefused as err:
        if w.offset == 0:
            raise
        # an off-window packet is expected to leave no decay to fit
        logger.info("off-window packet: %s", err.message)
        data.update(plateau=False, reason=err.message)
        return [write_json(data, run_dir / "wave.json")]
    data.update(result.summary(), coefficient=result.coefficient, plateau=bool(result.fit.relative_error <= 0.2))
    return [
        write_csv(result.table, run_dir / "wave.csv"),
        write_json(data, run_dir / "wave.json"),
        plot_energy(result.table, run_dir / "wave.svg", result.fit.rate, result.fit.amplitude),
    ]


def cmd_gluing(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    spec = _require(config.geometry.build(), ResonatorSpec, "gluing")
    m, g = config.mesh, config.gluing
    manifest.seeds["gluing"] = config.seed
    sweep = gluing_sweep(
        spec, config.sweep.epsilons, m.h, neck_layers=m.neck_layers, order=config.fem.order,
        mode=config.spectra.mode, probes=g.probes, iterations=g.iterations, samples=g.samples,
        far_shift=g.far_shift, nodes=g.contour_nodes, seed=config.seed,
    )
    _, closed, cavity = closed_problem(spec, spec.eps, m.h, m.neck_layers, config.fem.order, m.grading)
    u0 = cavity_mode(cavity, config.spectra.mode)
    refinement = refinement_study(
        closed.mesh, [u0.eigenvalue + 0.5j * u0.gap, g.far_shift], config.fem.order, g.samples, config.seed
    )
    fits = {k: asdict(v) for k, v in sweep.fits.items()}
    return [
        write_csv(sweep.table, run_dir / "gluing.csv"),
        write_csv(refinement, run_dir / "refinement.csv"),
        write_json(fits, run_dir / "gluing_fit.json"),
    ]


def cmd_report(config: RunConfig, run_dir: Path, manifest: RunManifest) -> List[Path]:
    build_summary(run_dir)
    return [run_dir / "summary.json", run_dir / "summary.csv"]


COMMANDS: Dict[str, Callable[[RunConfig, Path, RunManifest], List[Path]]] = {
    "mesh": cmd_mesh,
    "eigs": cmd_eigs,
    "resonance": cmd_resonance,
    "sweep": cmd_sweep,
    "nodal": cmd_nodal,
    "wave": cmd_wave,
    "gluing": cmd_gluing,
    "report": cmd_report,
}

COMMAND_HELP = {
    "mesh": "triangulate the configured geometry",
    "eigs": "Dirichlet eigenvalues, and eigenfunction comparison for resonators",
    "resonance": "resonance nearest the tracked eigenvalue, with 1D oracle check",
    "sweep": "width-law sweep for resonators, splitting law for dumbbells",
    "nodal": "nodal domain counts, Courant bound, neck positivity",
    "wave": "local energy decay of resonant initial data",
    "gluing": "interface norms, projector differences and resolvent defects",
    "report": "aggregate the run directory into summary.json and summary.csv",
}


# --- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resonate", description="Helmholtz resonator numerics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        cmd = sub.add_parser(name, help=COMMAND_HELP[name])
        cmd.add_argument("--config", type=Path, default=None, help="experiment YAML file")
        cmd.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config value, e.g. mesh.h=0.05")
        cmd.add_argument("--out", type=Path, default=None, help="run directory (default: next to the config)")
        cmd.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def _run_dir(args) -> Path:
    if args.out is not None:
        return args.out
    if args.config is not None:
        return args.config.parent / "run"
    return Path("run")


def run(command: str, config: RunConfig, run_dir: Path) -> List[Path]:
    """Execute one command and update the manifest of ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.open(run_dir, config)
    started = _now()
    logger.info("resonate %s: %s -> %s", command, config.source or "<defaults>", run_dir)
    outputs = COMMANDS[command](config, run_dir, manifest)
    manifest.record(command, run_dir, outputs, started)
    manifest.write(run_dir)
    return outputs


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else default_log_level(), format=LOG_FORMAT)
    run_dir = _run_dir(args)
    try:
        config = load_config(args.config, args.overrides)
        run(args.command, config, run_dir)
    except ResonateError as err:
        payload = err.to_dict()
        run_dir.mkdir(parents=True, exist_ok=True)
        write_json(payload, run_dir / "error.json")
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        logger.error("%s failed: %s", args.command, err.message)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
