"""Command-line front end: ``fockstream <command> --config <path> [--seed U64] [--paths N] [--out PATH]``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from . import collision, continuous, diagrams, discrete_filter, oracle
from .errors import ConfigError, FockstreamError
from .model import PhotonProfile, Pulse, SystemModel
from .rng import SCHEME, SEED_MASK

VERSION = f"fockstream-{__version__}"
COMMANDS = ("sample", "master", "stats", "diagrams", "verify")
BUNDLED = {"two_level_n1": "two_level_n1.json", "two_level_n0_excited": "two_level_n0_excited.json"}
MAX_STEP_WEIGHT = 0.1

_complex = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_matrix = {"type": "array", "items": {"type": "array", "items": _complex, "minItems": 1}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model", "profile"],
    "properties": {
        "schema_version": {"const": 1},
        "model": {
            "type": "object",
            "required": ["d", "H", "L"],
            "properties": {"d": {"type": "integer", "minimum": 1}, "H": _matrix, "L": _matrix},
            "additionalProperties": False,
        },
        "initial_state": {"type": "array", "items": _complex, "minItems": 1},
        "profile": {
            "type": "object",
            "required": ["n_photons", "kind", "horizon", "tau"],
            "properties": {
                "n_photons": {"type": "integer", "minimum": 0},
                "kind": {"enum": ["rectangular", "exponential", "samples"]},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "rate": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "array", "items": _complex, "minItems": 1},
                "sample_tau": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"kind": {"const": "rectangular"}}}, "then": {"required": ["width"]}},
                {"if": {"properties": {"kind": {"const": "exponential"}}}, "then": {"required": ["rate"]}},
                {"if": {"properties": {"kind": {"const": "samples"}}}, "then": {"required": ["samples", "sample_tau"]}},
            ],
        },
        "run": {
            "type": "object",
            "properties": {
                "seed": {"type": "integer", "minimum": 0, "maximum": SEED_MASK},
                "n_paths": {"type": "integer", "minimum": 1},
                "engine": {"enum": ["collision", "sme"]},
                "grid_steps": {"type": "integer", "minimum": 2},
                "truncation": {"type": "integer", "minimum": 2},
                "s_max": {"type": "integer", "minimum": 0},
                "checkpoints": {"type": "integer", "minimum": 1},
                "count_times": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "output": {"type": "string"},
    },
    "additionalProperties": False,
}


def _cplx(pair):
    return complex(pair[0], pair[1])


def _cmatrix(rows):
    return np.array([[_cplx(x) for x in row] for row in rows], dtype=complex)


def _pairs(arr):
    arr = np.asarray(arr)
    if arr.ndim == 0:
        return [float(arr.real), float(arr.imag)]
    return [_pairs(x) for x in arr]


@dataclass(frozen=True, eq=False)
class RunConfig:
    raw: dict
    digest: str
    model: SystemModel
    psi: np.ndarray
    pulse: Pulse
    profile: PhotonProfile
    horizon: float
    tau: float
    dt: float
    seed: int
    n_paths: int
    engine: str
    grid_steps: int
    truncation: int
    s_max: int
    checkpoints: int
    count_times: tuple
    output: str | None


def config_digest(raw):
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_pulse(p):
    N = p["n_photons"]
    if p["kind"] == "rectangular":
        return Pulse.rectangular(p["width"], N)
    if p["kind"] == "exponential":
        return Pulse.exponential(p["rate"], N)
    samples = [_cplx(x) for x in p["samples"]]
    return Pulse.piecewise_constant(PhotonProfile.from_samples(samples, p["sample_tau"], N))


def parse_config(raw):
    """Validate a decoded JSON config and build the run objects."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config at {'/'.join(map(str, exc.absolute_path)) or '<root>'}: {exc.message}") from None
    m = raw["model"]
    H, L = _cmatrix(m["H"]), _cmatrix(m["L"])
    d = m["d"]
    if H.shape != (d, d) or L.shape != (d, d):
        raise ConfigError(f"H and L must be {d}x{d}")
    if np.max(np.abs(H - H.conj().T)) > 1e-12:
        raise ConfigError("system Hamiltonian is not Hermitian")
    model = SystemModel(H, L)
    psi = np.array([_cplx(x) for x in raw["initial_state"]]) if "initial_state" in raw else np.eye(d, dtype=complex)[0]
    if psi.size != d:
        raise ConfigError("initial state has the wrong dimension")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise ConfigError(f"initial state norm is {norm}, expected 1")
    psi = psi / norm
    p = raw["profile"]
    pulse = _build_pulse(p)
    horizon, tau = float(p["horizon"]), float(p["tau"])
    n = max(1, int(round(horizon / tau)))
    profile = pulse.discretize(tau, n)
    if tau * np.max(np.abs(profile.xi) ** 2) > MAX_STEP_WEIGHT:
        raise ConfigError(f"tau * max|xi|^2 = {tau * np.max(np.abs(profile.xi) ** 2):.3g} exceeds {MAX_STEP_WEIGHT}")
    r = raw.get("run", {})
    N = p["n_photons"]
    return RunConfig(
        raw=raw,
        digest=config_digest(raw),
        model=model,
        psi=psi,
        pulse=pulse,
        profile=profile,
        horizon=horizon,
        tau=tau,
        dt=float(p.get("dt", tau)),
        seed=int(r.get("seed", 0)),
        n_paths=int(r.get("n_paths", 100)),
        engine=r.get("engine", "collision"),
        grid_steps=int(r.get("grid_steps", 400)),
        truncation=int(r.get("truncation", N + 4)),
        s_max=int(r.get("s_max", N + 2)),
        checkpoints=int(r.get("checkpoints", 10)),
        count_times=tuple(r.get("count_times", [])),
        output=raw.get("output"),
    )


def load_config(path):
    if path is None or path.startswith("bundled:"):
        name = "two_level_n1" if path is None else path.split(":", 1)[1]
        if name not in BUNDLED:
            raise ConfigError(f"unknown bundled config {name!r}")
        text = resources.files("fockstream").joinpath("data", BUNDLED[name]).read_text(encoding="utf-8")
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return raw


def _stamp(cfg, step):
    return {"config_hash": cfg.digest, "seed": cfg.seed, "step": step, "version": VERSION}


def _header(cfg, command, step):
    return {"type": "header", "command": command, "rng_scheme": SCHEME, **_stamp(cfg, step)}


def _jsonl(records):
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def _workers():
    env = os.environ.get("FOCKSTREAM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("FOCKSTREAM_THREADS must be an integer") from None
    return os.cpu_count() or 1


def cmd_sample(cfg):
    indices = list(range(cfg.n_paths))
    workers = _workers()
    size = max(1, -(-len(indices) // workers))
    chunks = [indices[i : i + size] for i in range(0, len(indices), size)]
    if cfg.engine == "sme":
        grid = continuous.TimeGrid.covering(cfg.horizon, cfg.dt)

        def run(chunk):
            steps, snaps, jumps = continuous.simulate_paths(cfg.model, cfg.pulse, grid, cfg.seed, chunk, cfg.psi, [grid.steps])
            out = []
            for k, idx in enumerate(chunk):
                out.append(
                    {
                        "type": "trajectory",
                        "path_index": idx,
                        "jump_times": [float(grid.times[i]) for i in jumps[k]],
                        "final_state": _pairs(snaps[0, k, -1, -1]),
                        "weight": None,
                        **_stamp(cfg, grid.dt),
                    }
                )
            return out

        step = grid.dt
    else:
        blocks = collision.build_collision_blocks(cfg.model, cfg.tau, cfg.truncation, cfg.profile.n_photons)

        def run(chunk):
            recs, hist = collision.sample_trajectories(cfg.model, cfg.profile, blocks, cfg.seed, chunk, cfg.psi, keep_history=True)
            out = []
            for rec, h in zip(recs, hist):
                final = h[-1]
                try:
                    state = _pairs(collision.conditional_state(final, cfg.profile))
                except FockstreamError:
                    state = None
                out.append(
                    {
                        "type": "trajectory",
                        "path_index": rec.path_index,
                        "jump_times": list(rec.count_times),
                        "outcomes": list(rec.outcomes),
                        "final_state": state,
                        "weight": rec.weight,
                        "dead": rec.dead,
                        **_stamp(cfg, cfg.tau),
                    }
                )
            return out

        step = cfg.tau
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, chunks))
    records = [_header(cfg, "sample", step) | {"engine": cfg.engine}]
    records += sorted((r for chunk in results for r in chunk), key=lambda r: r["path_index"])
    return _jsonl(records)


def cmd_master(cfg):
    grid = continuous.TimeGrid.covering(cfg.horizon, cfg.dt)
    sol = continuous.integrate_master(cfg.model, cfg.pulse, grid, cfg.psi)
    K, d = sol.blocks.shape[1], sol.blocks.shape[-1]
    names = ["time"] + [f"population_{i}" for i in range(d)]
    block_cols = [(a, b, i, j) for a in range(K) for b in range(K) for i in range(d) for j in range(d)]
    for a, b, i, j in block_cols:
        names += [f"block_{a}_{b}_{i}_{j}_re", f"block_{a}_{b}_{i}_{j}_im"]
    names += ["config_hash", "seed", "dt", "version"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for t, blk in zip(sol.times, sol.blocks):
        row = [repr(float(t))] + [repr(float(blk[-1, -1, i, i].real)) for i in range(d)]
        for a, b, i, j in block_cols:
            z = blk[a, b, i, j]
            row += [repr(float(z.real)), repr(float(z.imag))]
        row += [cfg.digest, cfg.seed, repr(grid.dt), VERSION]
        writer.writerow(row)
    return buf.getvalue()


def cmd_stats(cfg):
    stats = diagrams.count_statistics(cfg.model, cfg.pulse, cfg.horizon, cfg.s_max, cfg.grid_steps, cfg.psi)
    step = cfg.horizon / cfg.grid_steps
    records = [_header(cfg, "stats", step)]
    for s, p in enumerate(stats.probability):
        records.append({"type": "count_probability", "s": s, "t": cfg.horizon, "probability": float(p), **_stamp(cfg, step)})
    for s in range(1, cfg.s_max + 1):
        tail = float(np.sum(stats.probability[:s]))
        mean = float(np.sum(stats.weights * stats.nodes * stats.density[s - 1])) if tail <= diagrams.TAIL_TOL else None
        records.append({"type": "mean_count_time", "s": s, "mean": mean, "tail_bound": tail, **_stamp(cfg, step)})
    samples = np.linspace(0.0, cfg.horizon, min(cfg.checkpoints, 50) + 1)[1:]
    for t1 in samples:
        dens = diagrams.exclusive_density(cfg.model, cfg.pulse, (float(t1),), cfg.horizon, cfg.grid_steps, cfg.psi)
        records.append({"type": "exclusive_density", "count_times": [float(t1)], "t": cfg.horizon, "density": dens, **_stamp(cfg, step)})
    return _jsonl(records)


def cmd_diagrams(cfg):
    times = cfg.count_times
    step = cfg.horizon / cfg.grid_steps
    records = [_header(cfg, "diagrams", step)]
    for M in range(cfg.profile.n_photons + 1):
        if len(times) + M > diagrams.MAX_SIMPLEX_ORDER:
            continue
        parts = diagrams.diagram_contributions(cfg.model, cfg.pulse, times, M, cfg.horizon, cfg.grid_steps, cfg.psi)
        for dg, vec in parts:
            records.append(
                {
                    "type": "diagram",
                    "M": M,
                    "count_times": list(times),
                    "diagram": dg.render(),
                    "vector": _pairs(vec),
                    "norm": float(np.linalg.norm(vec)),
                    **_stamp(cfg, step),
                }
            )
    return _jsonl(records)


def verification_checks(cfg):
    """Oracle cross-checks on the configured model: ``[(name, measured, tolerance)]``."""
    model, psi = cfg.model, cfg.psi
    N = cfg.profile.n_photons
    checks = []
    n_sites = 4
    D = max(N + 3, 2)
    # the first sites of the packet, renormalized, on a chain small enough to enumerate
    short = cfg.pulse.discretize(0.05, n_sites)
    blocks = collision.build_collision_blocks(model, short.tau, D)
    table = oracle.exact_outcome_distribution(model, short, n_sites, D, psi, include_prefixes=True)
    worst = 0.0
    for outcomes, entry in table.items():
        h = collision.initial_vectors(psi, N)
        for eta in outcomes:
            h = collision.step_hierarchy_vectors(h, blocks, short, eta)
        live = short.remaining[len(outcomes)] ** np.arange(N + 1) > 0
        worst = max(worst, float(np.max(np.abs(h.vectors - entry.hierarchy.vectors)[live])))
    checks.append(("hierarchy_vs_chain_oracle", worst, 1e-10))
    total = sum(e.probability for k, e in table.items() if len(k) == n_sites)
    checks.append(("outcome_probabilities_sum", abs(total - 1.0), 1e-10))
    exact = collision.build_collision_blocks(model, cfg.tau, cfg.truncation, N)
    checks.append(("collision_unitarity", exact.unitarity_defect(N + 1), 1e-8))
    grid = continuous.TimeGrid.covering(cfg.horizon, cfg.dt)
    sol = continuous.integrate_master(model, cfg.pulse, grid, psi)
    drift = float(np.max(np.abs(np.trace(sol.states, axis1=1, axis2=2) - 1.0)))
    checks.append(("master_trace_drift", drift, 1e-8))
    p_master = continuous.no_jump_probability(model, cfg.pulse, grid, psi)[-1]
    p_diag = diagrams.no_count_probability(model, cfg.pulse, grid.horizon, cfg.grid_steps, psi)
    checks.append(("no_click_diagrams_vs_master", abs(p_master - p_diag), 1e-3))
    h = discrete_filter.init_hierarchy(psi, N)
    worst = 0.0
    for j in range(cfg.profile.horizon_steps):
        xi = cfg.profile.xi[j]
        k = discrete_filter.intensity(model, h, xi)
        avg = (1 - k * cfg.tau) * discrete_filter.filter_step(model, h, xi, cfg.tau, 0).blocks
        if k > discrete_filter.JUMP_FLOOR:
            avg = avg + k * cfg.tau * discrete_filter.filter_step(model, h, xi, cfg.tau, 1).blocks
        prior = discrete_filter.apriori_step(model, h, xi, cfg.tau)
        worst = max(worst, float(np.max(np.abs(prior.blocks - avg))) / cfg.tau**2)
        h = prior
    checks.append(("filter_average_vs_apriori_over_tau2", worst, 5.0))
    return checks


def cmd_verify(cfg):
    checks = verification_checks(cfg)
    records = [_header(cfg, "verify", cfg.tau)]
    for name, value, tol in checks:
        records.append({"type": "check", "name": name, "measured": value, "tolerance": tol, "pass": bool(value <= tol), **_stamp(cfg, cfg.tau)})
    ok = all(r["pass"] for r in records[1:])
    records.append({"type": "summary", "pass": ok, "checks": len(checks), **_stamp(cfg, cfg.tau)})
    return _jsonl(records), ok


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".fockstream-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_parser():
    ap = argparse.ArgumentParser(prog="fockstream", description="Photon-counting trajectories for N-photon wave packets.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config path, or bundled:<name> (default bundled:two_level_n1)")
    ap.add_argument("--seed", type=int, help="64-bit master seed (overrides the config)")
    ap.add_argument("--paths", type=int, help="number of trajectories (overrides the config)")
    ap.add_argument("--out", help="output path (overrides the config; default stdout)")
    ap.add_argument("--version", action="version", version=VERSION)
    return ap


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed <= SEED_MASK:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            raw.setdefault("run", {})["seed"] = args.seed
        if args.paths is not None:
            if args.paths < 1:
                raise ConfigError("--paths must be positive")
            raw.setdefault("run", {})["n_paths"] = args.paths
        cfg = parse_config(raw)
    except FockstreamError as exc:
        return _fail(exc, 2)
    ok = True
    try:
        if args.command == "verify":
            text, ok = cmd_verify(cfg)
        else:
            text = {"sample": cmd_sample, "master": cmd_master, "stats": cmd_stats, "diagrams": cmd_diagrams}[args.command](cfg)
    except (FockstreamError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 1)
    out = args.out or cfg.output
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
