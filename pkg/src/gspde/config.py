"""TOML run configuration: strict parsing, documented defaults, canonical hashing.

Sections and keys (defaults in brackets)::

    [grid]        dim [2], cutoff [max(levels) or 16]
    [integrator]  dt [1e-3], t_end [1.0], nu [0.05], scheme ["explicit"],
                  nonlinear [true], m_max [max(3, max(ladder_rungs) + 1)],
                  snapshot_every [0 = off]
    [initial]     kind ["analytic"], amplitude [1.0], decay [1.0], seed [0],
                  modes [0 = grid cutoff]
    [noise]       kind ["linear_multiplicative"], n_modes [16], c0 [0.1],
                  decay_q [1.0], smoothing_order [0], seed [0]
    [experiment]  levels [cutoff/4, cutoff/2, cutoff], paths [32], M [10.0],
                  t [t_end], ladder_rungs [[2]], theta [0.5],
                  deltas [[0.2, 0.1, 0.05, 0.025]], R [20.0], M_sweep [[] = M x 1,2,4,8],
                  quadrature ["left"], output_dir ["runs"], workers [0 = all cores]
    [gates]       cauchy_ratio [0.9], cauchy_floor [1e-8], uniform_spread [1.5],
                  uniform_se_mult [2.0], equicontinuity_halving [0.75],
                  equicontinuity_final [0.1], max_diverged_fraction [0.1]

``noise.seed`` is the master seed; per-path streams are derived from it.
Unknown sections or keys are errors. The canonical form is the fully resolved
configuration minus ``experiment.output_dir`` and ``experiment.workers`` (they do
not affect results), serialized as sorted, indented JSON; its SHA-256 is the
config hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path

import tomli

from gspde.experiments import ExperimentConfig, Gates
from gspde.initial import INITIAL_KINDS, initial_condition
from gspde.integrator import SCHEMES, IntegratorConfig
from gspde.monitors import QUADRATURES
from gspde.noise import KINDS as NOISE_KINDS
from gspde.noise import NoiseModel

#: keys that change where or how fast a run happens, not what it computes
RUNTIME_KEYS = ("output_dir", "workers")


class ConfigError(ValueError):
    """A configuration value violates a documented constraint."""

    def __init__(self, key: str, expected: str, found):
        self.key, self.expected, self.found = key, expected, found
        super().__init__(f"{key}: expected {expected}, found {found!r}")


_SCHEMA: dict[str, tuple[str, ...]] = {
    "grid": ("dim", "cutoff"),
    "integrator": ("dt", "t_end", "nu", "scheme", "nonlinear", "m_max", "snapshot_every"),
    "initial": ("kind", "amplitude", "decay", "seed", "modes"),
    "noise": ("kind", "n_modes", "c0", "decay_q", "smoothing_order", "seed"),
    "experiment": (
        "levels",
        "paths",
        "M",
        "t",
        "ladder_rungs",
        "theta",
        "deltas",
        "R",
        "M_sweep",
        "quadrature",
        "output_dir",
        "workers",
    ),
    "gates": tuple(f.name for f in fields(Gates)),
}


def load_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", "a readable config file", str(path)) from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", "valid TOML", str(exc)) from exc


# ---------------------------------------------------------------------------
# Typed getters
# ---------------------------------------------------------------------------


class _Section:
    def __init__(self, name: str, data: dict):
        self.name = name
        self.data = data

    def key(self, k: str) -> str:
        return f"{self.name}.{k}"

    def _raw(self, k, default):
        return self.data.get(k, default)

    def int(self, k: str, default, lo: int | None = None) -> int:
        v = self._raw(k, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.key(k), "an integer", v)
        if lo is not None and v < lo:
            raise ConfigError(self.key(k), f"an integer >= {lo}", v)
        return v

    def float(self, k: str, default, positive: bool = False, nonneg: bool = False) -> float:
        v = self._raw(k, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.key(k), "a number", v)
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise ConfigError(self.key(k), "a finite number", v)
        if positive and not v > 0:
            raise ConfigError(self.key(k), f"{k} > 0", v)
        if nonneg and v < 0:
            raise ConfigError(self.key(k), f"{k} >= 0", v)
        return v

    def bool(self, k: str, default) -> bool:
        v = self._raw(k, default)
        if not isinstance(v, bool):
            raise ConfigError(self.key(k), "true or false", v)
        return v

    def choice(self, k: str, default, options) -> str:
        v = self._raw(k, default)
        if v not in options:
            raise ConfigError(self.key(k), f"one of {list(options)}", v)
        return v

    def str(self, k: str, default) -> str:
        v = self._raw(k, default)
        if not isinstance(v, str) or not v:
            raise ConfigError(self.key(k), "a non-empty string", v)
        return v

    def list(self, k: str, default, kind: type) -> list:
        v = self._raw(k, default)
        if not isinstance(v, list):
            raise ConfigError(self.key(k), "a list", v)
        out = []
        for x in v:
            ok = not isinstance(x, bool) and (isinstance(x, int) if kind is int else isinstance(x, (int, float)))
            if not ok:
                raise ConfigError(self.key(k), f"a list of {kind.__name__}s", v)
            out.append(kind(x))
        return out


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


def resolve(raw: dict, seed: int | None = None, paths: int | None = None, out: str | None = None) -> dict:
    """Validate ``raw`` (parsed TOML), fill defaults and apply command-line overrides.

    Returns the fully resolved nested dict. Raises :class:`ConfigError` on the first
    violation.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "a table", raw)
    for sec, body in raw.items():
        if sec not in _SCHEMA:
            raise ConfigError(sec, f"a known section {sorted(_SCHEMA)}", sec)
        if not isinstance(body, dict):
            raise ConfigError(sec, "a table", body)
        for k in body:
            if k not in _SCHEMA[sec]:
                raise ConfigError(f"{sec}.{k}", f"a known key of [{sec}] {list(_SCHEMA[sec])}", k)
    raw = copy.deepcopy(raw)
    ex_raw = raw.setdefault("experiment", {})
    if seed is not None:
        raw.setdefault("noise", {})["seed"] = seed
    if paths is not None:
        ex_raw["paths"] = paths
    if out is not None:
        ex_raw["output_dir"] = str(out)

    g = _Section("grid", raw.get("grid", {}))
    it = _Section("integrator", raw.get("integrator", {}))
    ic = _Section("initial", raw.get("initial", {}))
    nz = _Section("noise", raw.get("noise", {}))
    ex = _Section("experiment", ex_raw)
    gt = _Section("gates", raw.get("gates", {}))

    res: dict = {}
    dim = g.int("dim", 2)
    if dim not in (2, 3):
        raise ConfigError("grid.dim", "2 or 3", dim)

    levels = ex.list("levels", [], int) if "levels" in ex.data else None
    if "cutoff" in g.data:
        cutoff = g.int("cutoff", None, lo=1)
    else:
        cutoff = max(levels) if levels else 16
    if levels is None:
        levels = sorted({max(1, cutoff // 4), max(1, cutoff // 2), cutoff})
    if not levels:
        raise ConfigError("experiment.levels", "a non-empty list", levels)
    if any(n < 1 for n in levels):
        raise ConfigError("experiment.levels", "positive cutoffs", levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("experiment.levels", "strictly increasing cutoffs", levels)
    if max(levels) > cutoff:
        raise ConfigError("experiment.levels", f"cutoffs <= grid.cutoff = {cutoff}", levels)
    res["grid"] = {"dim": dim, "cutoff": cutoff}

    rungs = ex.list("ladder_rungs", [2], int)
    if not rungs or min(rungs) < 1:
        raise ConfigError("experiment.ladder_rungs", "a non-empty list of rungs j >= 1", rungs)
    if sorted(set(rungs)) != list(range(min(rungs), max(rungs) + 1)):
        raise ConfigError("experiment.ladder_rungs", "consecutive rungs", rungs)
    rungs = sorted(rungs)

    dt = it.float("dt", 1e-3, positive=True)
    t_end = it.float("t_end", 1.0, positive=True)
    if dt > t_end:
        raise ConfigError("integrator.dt", f"dt <= t_end = {t_end}", dt)
    nu = it.float("nu", 0.05, positive=True)
    scheme = it.choice("scheme", "explicit", SCHEMES)
    need = max(rungs) + 1
    m_max = it.int("m_max", max(3, need), lo=0)
    if m_max < need:
        raise ConfigError("integrator.m_max", f"m_max >= {need} (top ladder rung + 1)", m_max)
    res["integrator"] = {
        "dt": dt,
        "t_end": t_end,
        "nu": nu,
        "scheme": scheme,
        "nonlinear": it.bool("nonlinear", True),
        "m_max": m_max,
        "snapshot_every": it.int("snapshot_every", 0, lo=0),
    }
    stab = dt * nu * dim * cutoff**2
    if scheme == "explicit" and stab > 1.0:
        raise ConfigError(
            "integrator.dt",
            f"dt * nu * dim * cutoff^2 <= 1 for the explicit scheme (dt <= {1.0 / (nu * dim * cutoff**2):.3g}),"
            " or set integrator.scheme = \"exponential\"",
            dt,
        )

    res["initial"] = {
        "kind": ic.choice("kind", "analytic", INITIAL_KINDS),
        "amplitude": ic.float("amplitude", 1.0, nonneg=True),
        "decay": ic.float("decay", 1.0, nonneg=True),
        "seed": ic.int("seed", 0, lo=0),
        "modes": ic.int("modes", 0, lo=0),
    }

    decay_q = nz.float("decay_q", 1.0)
    if not decay_q > 0.5:
        raise ConfigError("noise.decay_q", "decay_q > 1/2 (square-summable coefficients)", decay_q)
    res["noise"] = {
        "kind": nz.choice("kind", "linear_multiplicative", NOISE_KINDS),
        "n_modes": nz.int("n_modes", 16, lo=1),
        "c0": nz.float("c0", 0.1, nonneg=True),
        "decay_q": decay_q,
        "smoothing_order": nz.int("smoothing_order", 0, lo=0),
        "seed": nz.int("seed", 0, lo=0),
    }
    if res["noise"]["seed"] >= 2**64:
        raise ConfigError("noise.seed", "an unsigned 64-bit integer", res["noise"]["seed"])

    M = ex.float("M", 10.0)
    if not M > 1:
        raise ConfigError("experiment.M", "M > 1", M)
    t = ex.float("t", t_end)
    if not 0 <= t <= t_end:
        raise ConfigError("experiment.t", f"0 <= t <= t_end = {t_end}", t)
    deltas = ex.list("deltas", [0.2, 0.1, 0.05, 0.025], float)
    if not deltas or min(deltas) < 0:
        raise ConfigError("experiment.deltas", "a non-empty list of non-negative windows", deltas)
    # the window theta + max(deltas) <= t is checked by the equicontinuity run itself
    theta = ex.float("theta", 0.5, nonneg=True)
    sweep = ex.list("M_sweep", [], float)
    if any(m <= 1 for m in sweep):
        raise ConfigError("experiment.M_sweep", "every M > 1", sweep)
    res["experiment"] = {
        "levels": levels,
        "paths": ex.int("paths", 32, lo=1),
        "M": M,
        "t": t,
        "ladder_rungs": rungs,
        "theta": theta,
        "deltas": deltas,
        "R": ex.float("R", 20.0, positive=True),
        "M_sweep": sweep,
        "quadrature": ex.choice("quadrature", "left", QUADRATURES),
        "output_dir": ex.str("output_dir", "runs"),
        "workers": ex.int("workers", 0, lo=0),
    }

    defaults = Gates()
    res["gates"] = {f.name: gt.float(f.name, getattr(defaults, f.name), nonneg=True) for f in fields(Gates)}
    return res


def canonical(resolved: dict) -> dict:
    out = copy.deepcopy(resolved)
    for k in RUNTIME_KEYS:
        out["experiment"].pop(k, None)
    return out


def canonical_json(resolved: dict) -> str:
    return json.dumps(canonical(resolved), sort_keys=True, indent=2) + "\n"


def hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_config(resolved: dict) -> ExperimentConfig:
    """Turn a resolved dict (or a stored canonical one) into an :class:`ExperimentConfig`."""
    resolved = copy.deepcopy(resolved)
    ex = resolved["experiment"]
    ex.setdefault("output_dir", "runs")
    ex.setdefault("workers", 0)
    g, it, ic, nz = resolved["grid"], resolved["integrator"], resolved["initial"], resolved["noise"]
    u0 = initial_condition(
        ic["kind"],
        g["dim"],
        g["cutoff"],
        amplitude=ic["amplitude"],
        decay=ic["decay"],
        seed=ic["seed"],
        modes=ic["modes"] or None,
    )
    noise = NoiseModel.power_law(
        nz["kind"], nz["n_modes"], c0=nz["c0"], decay_q=nz["decay_q"], smoothing_order=nz["smoothing_order"]
    )
    base = IntegratorConfig(
        dim=g["dim"],
        cutoff=g["cutoff"],
        dt=it["dt"],
        t_end=it["t_end"],
        nu=it["nu"],
        noise=noise,
        initial_field=u0,
        seed=0,
        scheme=it["scheme"],
        nonlinear=it["nonlinear"],
        m_max=it["m_max"],
        snapshot_every=it["snapshot_every"] or None,
    )
    return ExperimentConfig(
        base=base,
        levels=tuple(ex["levels"]),
        n_paths=ex["paths"],
        M=ex["M"],
        t=ex["t"],
        ladder_rungs=tuple(ex["ladder_rungs"]),
        master_seed=nz["seed"],
        theta=ex["theta"],
        deltas=tuple(ex["deltas"]),
        R=ex["R"],
        M_sweep=tuple(ex["M_sweep"]),
        quadrature=ex["quadrature"],
        gates=Gates(**resolved["gates"]),
        output_dir=ex["output_dir"],
        workers=ex["workers"] or None,
        config_hash=hash_text(canonical_json(resolved)),
    )


def parse_config(
    path: str | Path, seed: int | None = None, paths: int | None = None, out: str | None = None
) -> ExperimentConfig:
    """Read, validate and build a config file; overrides mirror the CLI flags."""
    return build_config(resolve(load_toml(path), seed=seed, paths=paths, out=out))
