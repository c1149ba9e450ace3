"""Command-line entry point: ``rbrw <command> --config cfg.yaml [--seed N] [--jobs N] [--out DIR]``.

Exit codes: 0 success, 1 runtime failure (including failed certificates or
diagnostics), 2 unreadable config or bad arguments, 3 invalid config.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .coupling import Component, CouplingSpec, merge_certificates, run_coupled_replicas
from .experiments import Scenario, Thresholds, canonical_scenarios, regime_suite, \
    volume_convergence, write_suite_csv
from .graph import build_graph, build_kernel
from .invariant_measure import estimate_mu_n, mu_sequence_diagnostics
from .moments import MomentSystem, first_moment, second_moment, steady_state, \
    write_first_moment_csv, write_second_moment_csv, UnstableError
from .profiles import profile_from_config
from .simulate import SimParams, run_replicas, write_event_log, write_trajectory_csv
from .spectral import rho_estimate, theta_estimate

COMMANDS = ("simulate", "couple", "moments", "spectral", "invariant", "phases", "volumes")


class ConfigError(ValueError):
    pass


def _need(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return section[key]


def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{key!r} must be a mapping")
    return sec


class Context:
    """Resolved configuration for one command."""

    def __init__(self, cfg: dict, command: str, seed: int | None, jobs: int, out: Path):
        self.cfg = cfg
        self.command = command
        self.seed = cfg.get("seed") if seed is None else seed
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        self.jobs = jobs
        self.out = out
        self.params = _section(cfg, command)
        gspec = dict(_section(cfg, "graph"))
        self.graph = build_graph(_need(gspec, "family", "graph"),
                                 **{k: v for k, v in gspec.items() if k != "family"})
        kspec = dict(_section(cfg, "kernel"))
        self.kernel = build_kernel(self.graph, kspec.pop("kind", "simple"), **kspec)
        self.replicas = int(cfg.get("replicas", 1))

    def profile(self, spec=None):
        spec = spec if spec is not None else _need(self.cfg, "profile", "config")
        if isinstance(spec, str):
            profiles = _section(self.cfg, "profiles")
            spec = _need(profiles, spec, "profiles")
        return profile_from_config(spec)

    def start(self, spec) -> np.ndarray:
        """``delta`` (root), ``{delta: x}``, ``{constant: v}`` or an explicit list."""
        V = self.graph.n_vertices
        eta = np.zeros(V, dtype=np.int64)
        if spec == "delta":
            eta[self.graph.root] = 1
        elif isinstance(spec, dict) and "delta" in spec:
            eta[int(spec["delta"])] = 1
        elif isinstance(spec, dict) and "constant" in spec:
            eta[:] = int(spec["constant"])
        elif isinstance(spec, list) and len(spec) == V:
            eta[:] = spec
        else:
            raise ConfigError(f"unrecognised initial configuration {spec!r}")
        return eta

    def region(self, spec):
        if spec is None:
            return None
        if isinstance(spec, dict) and "ball" in spec:
            return self.graph.ball(int(spec["ball"]), spec.get("center"))
        if isinstance(spec, list):
            return np.asarray(spec, dtype=np.int64)
        raise ConfigError(f"unrecognised region {spec!r}")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


def cmd_simulate(ctx: Context) -> int:
    p = ctx.params
    t_end = float(_need(p, "t_end", "simulate"))
    times = p.get("sample_times")
    if times is None:
        times = np.linspace(0.0, t_end, int(p.get("n_times", 11))).tolist()
    params = SimParams(ctx.profile(), t_end, ctx.seed,
                       gamma=float(_need(p, "gamma", "simulate")),
                       k=int(_need(p, "k", "simulate")),
                       region=ctx.region(p.get("region")), sample_times=tuple(times),
                       frozen_exterior=bool(p.get("frozen_exterior", False)),
                       log_events=int(p.get("log_events", 0)))
    eta0 = ctx.start(_need(p, "start", "simulate"))
    trajs = run_replicas(ctx.graph, ctx.kernel, params, eta0, ctx.replicas, jobs=ctx.jobs)
    write_trajectory_csv(trajs, ctx.out / "trajectories.csv")
    if params.log_events:
        write_event_log(trajs[0], ctx.out / "events.jsonl")
    return 0


def cmd_couple(ctx: Context) -> int:
    p = ctx.params
    comps = []
    for i, c in enumerate(_need(p, "components", "couple")):
        where = f"couple.components[{i}]"
        comps.append(Component(ctx.profile(_need(c, "profile", where)),
                               ctx.start(_need(c, "start", where)),
                               int(_need(c, "k", where)), float(_need(c, "gamma", where)),
                               ctx.region(c.get("region"))))
    spec = CouplingSpec(ctx.graph, ctx.kernel, comps)
    t_end = float(p.get("t_end", np.inf))
    max_events = p.get("max_events")
    times = tuple(p.get("sample_times", ()))
    runs = run_coupled_replicas(spec, t_end, ctx.seed, ctx.replicas, sample_times=times,
                                max_events=max_events, jobs=ctx.jobs)
    with open(ctx.out / "coupled.csv", "w") as fh:
        fh.write("time,component,statistic,value,replica,seed\n")
        for r in runs:
            for i, t in enumerate(r.sample_times):
                for h in range(spec.N):
                    fh.write(f"{float(t)!r},{h},site-mean,{float(r.samples[i, h].mean())!r},"
                             f"{r.replica},{r.seed}\n")
    cert = merge_certificates(runs)
    _write_text(ctx.out / "certificate.txt", cert.summary())
    print(cert.summary())
    return 0 if cert.ok else 1


def cmd_moments(ctx: Context) -> int:
    p = ctx.params
    system = MomentSystem(ctx.kernel, float(_need(p, "lambda", "moments")),
                          float(_need(p, "gamma", "moments")), int(_need(p, "k", "moments")),
                          region=ctx.region(p.get("region")))
    xi0 = np.asarray(p.get("xi0", np.zeros(system.size)), dtype=float)
    times = [float(t) for t in _need(p, "times", "moments")]
    m = first_moment(system, xi0, times)
    write_first_moment_csv(system, times, m, ctx.out / "first_moment.csv")
    if p.get("second", False):
        write_second_moment_csv(system, second_moment(system, xi0, times),
                                ctx.out / "second_moment.csv")
    try:
        ss = steady_state(system)
        summary = {"stable": True, "U1": ss.U1, "U2": ss.U2, "condition": ss.condition,
                   "m": ss.m.tolist()}
    except UnstableError as err:
        summary = {"stable": False, "reason": str(err)}
    _write_text(ctx.out / "steady_state.json", json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_spectral(ctx: Context) -> int:
    p = ctx.params
    theta = theta_estimate(ctx.kernel, n_max=int(p.get("theta_n_max", 40)),
                           method=p.get("method", "auto"))
    rho = rho_estimate(ctx.kernel, n_max=int(p.get("rho_n_max", 400)),
                       method=p.get("method", "auto"))
    theta.write_csv(ctx.out / "theta.csv")
    rho.write_csv(ctx.out / "rho.csv")
    print(f"theta={theta.value:.10g} rho={rho.value:.10g}")
    return 0


def cmd_invariant(ctx: Context) -> int:
    p = ctx.params
    profile = ctx.profile()
    ests = []
    for n in _need(p, "levels", "invariant"):
        est = estimate_mu_n(int(n), ctx.graph, ctx.kernel, profile,
                            t_burn=p.get("t_burn"), t_sample=float(_need(p, "t_sample", "invariant")),
                            seed=ctx.seed + int(n), n_replicas=max(ctx.replicas, 2), jobs=ctx.jobs)
        est.write_histogram_csv(ctx.out / f"histogram_n{int(n)}.csv")
        ests.append(est)
    report = mu_sequence_diagnostics(ests, radii=tuple(p.get("radii", (5, 10, 20))))
    _write_text(ctx.out / "report.txt", report.text())
    print(report.text())
    return 0 if report.passed else 1


def cmd_phases(ctx: Context) -> int:
    p = ctx.params
    if "scenarios" in p:
        scenarios = []
        for i, s in enumerate(p["scenarios"]):
            where = f"phases.scenarios[{i}]"
            scenarios.append(Scenario(str(_need(s, "name", where)), _need(s, "target", where),
                                      ctx.profile(_need(s, "profile", where)),
                                      _need(s, "start", where), float(_need(s, "t_end", where)),
                                      int(s.get("replicas", ctx.replicas)), ctx.seed + i))
    else:
        scenarios = canonical_scenarios(ctx.seed)
    thresholds = Thresholds(**_section(p, "thresholds"))
    reports = regime_suite(ctx.graph, ctx.kernel, scenarios, thresholds, jobs=ctx.jobs)
    write_suite_csv(reports, ctx.out / "regimes.csv")
    text = "\n".join(r.text() for r in reports)
    _write_text(ctx.out / "report.txt", text)
    print(text)
    return 0 if all(r.matches for r in reports) else 1


def cmd_volumes(ctx: Context) -> int:
    p = ctx.params
    rep = volume_convergence(ctx.graph, ctx.kernel, ctx.profile(), _need(p, "radii", "volumes"),
                             float(_need(p, "t", "volumes")), ctx.seed, ctx.replicas,
                             x0=p.get("x0"), jobs=ctx.jobs)
    rep.write_csv(ctx.out / "volumes.csv")
    _write_text(ctx.out / "report.txt", rep.text())
    print(rep.text())
    return 0


HANDLERS = {"simulate": cmd_simulate, "couple": cmd_couple, "moments": cmd_moments,
            "spectral": cmd_spectral, "invariant": cmd_invariant, "phases": cmd_phases,
            "volumes": cmd_volumes}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(ctx: Context, raw: bytes) -> None:
    outputs = sorted(f for f in ctx.out.iterdir() if f.is_file() and f.name != "manifest.json")
    manifest = {
        "command": ctx.command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": ctx.seed,
        "replicas": ctx.replicas,
        "version": __version__,
        "outputs": {f.name: _sha256(f) for f in outputs},
    }
    _write_text(ctx.out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbrw", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None,
                    help="output directory (default: config 'output' or ./out)")
    return ap


def run_config(path, command: str, seed: int | None = None, jobs: int = 1,
               out: Path | None = None) -> int:
    try:
        raw = Path(path).read_bytes()
        cfg = yaml.safe_load(raw)
    except (OSError, yaml.YAMLError) as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return 2
    if not isinstance(cfg, dict):
        print("error: config must be a mapping", file=sys.stderr)
        return 2
    try:
        out = Path(out if out is not None else cfg.get("output", "out"))
        ctx = Context(cfg, command, seed, jobs, out)
    except (ConfigError, KeyError, TypeError, ValueError) as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
        return 3
    ctx.out.mkdir(parents=True, exist_ok=True)
    try:
        code = HANDLERS[command](ctx)
    except np.linalg.LinAlgError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ConfigError, KeyError, TypeError, ValueError) as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
        return 3
    except Exception as err:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    write_manifest(ctx, raw)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return run_config(args.config, args.command, args.seed, args.jobs, args.out)


if __name__ == "__main__":
    sys.exit(main())
