"""TOML run configuration: schema, defaults, validation and a stable content hash.

Keys carry their units in the name (``a_par_khz``, ``tau_us``). Every section is
optional except ``[system]``; missing keys take the defaults below.
"""
from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, replace
from typing import Any

from .circuits import BUDGET_KINDS, GATE_KINDS, QND_POLICIES, NoiseBudget
from .constants import ER1, ER2, J_COUPLING_KHZ, LARMOR_SCALE, NUCLEUS_TABLE
from .errors import ConfigError, MissingRequired, ParseError, UnknownKey
from .seqsim import PHASE_LABELS
from .spinsys import ElectronParams, HyperfineParams, SpinSystem

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

COMMANDS = ("eseem", "deer", "resonance", "chevron", "grass", "ramsey", "hahn-nuc", "circuit", "qnd", "pairstats",
            "budget")
FAMILIES = ("Hahn", "XY-2", "XY-4", "XY-8", "XY-N", "CPMG")
CIRCUIT_KINDS = ("bell_ee", "en_bell", "swap2") + tuple(f"gate:{k}" for k in GATE_KINDS)

# sweep variable and default grid (start, stop, points) per command
SWEEP_DEFAULTS = {
    "eseem": ("tau_us", (4.0, 8.0, 201)),
    "deer": ("delta_tau_us", (0.05, 5.5, 64)),
    "chevron": ("tau_us", (5.8, 6.6, 81)),
    "ramsey": ("wait_us", (0.0, 199.75, 800)),
    "hahn-nuc": ("wait_us", (0.0, 1000.0, 41)),
    "qnd": ("rounds", (1, 3, 3)),
    "pairstats": ("j_threshold_khz", (0.5, 20.0, 40)),
}


@dataclass(frozen=True)
class Key:
    kind: Any  # python type, or a tuple of allowed string values
    default: Any = None
    required: bool = False
    check: Any = None  # callable(value) -> error message or None


def _pos(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _prob(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _signed_prob(v):
    return None if -1 <= v <= 1 else "must lie in [-1, 1]"


def _all_nonneg(vs):
    for i, v in enumerate(vs):
        if v < 0:
            return f"[{i}] must be >= 0"
    return None


def _phase_labels(vs):
    bad = [v for v in vs if v not in PHASE_LABELS]
    return f"unknown pulse phases {bad}" if bad else None


def _interval(v):
    return None if len(v) == 2 and 0 < v[0] < v[1] else "must be [min, max] with 0 < min < max"


def _vec3(v):
    return None if len(v) == 3 and any(x != 0 for x in v) else "must be a nonzero 3-vector"


ELECTRON = {
    "mwg_freq_mhz": Key(float, None, check=_pos),
    "t2_us": Key(float, None, check=_pos),
    "stretch": Key(float, None),
    "readout_fidelity": Key(float, None, check=_prob),
}

NUCLEUS = {
    "name": Key(str, required=True),
    "owner": Key(int, None),
    "a_par_khz": Key(float, None),
    "a_perp_khz": Key(float, None, check=_nonneg),
    "omega_l_khz": Key(float, None, check=_pos),
    "larmor_scale": Key(float, None),
}

SCHEMA = {
    "command": Key(COMMANDS, None),
    "seed": Key(int, 0),
    "system": {
        "j_coupling_khz": Key(float, J_COUPLING_KHZ, check=_pos),
        "larmor_scale": Key(float, LARMOR_SCALE),
        "er1": ELECTRON,
        "er2": ELECTRON,
        "nuclei": [NUCLEUS],
    },
    "sequence": {
        "family": Key(FAMILIES, "XY-8"),
        "tau_us": Key(float, 6.21, check=_pos),
        "n_pulses": Key(int, None, check=_nonneg),
        "electron": Key(int, 1, check=lambda v: None if v in (0, 1) else "must be 0 or 1"),
        "nuclei": Key(list, None),
        "envelope": Key(bool, False),
        "spacings_us": Key(list, None, check=_all_nonneg),
        "phases": Key(list, None, check=_phase_labels),
    },
    "sweep": {
        "variable": Key(str, None),
        "start": Key(float, None),
        "stop": Key(float, None),
        "points": Key(int, None, check=_pos),
        "values": Key(list, None),
    },
    "noise": {
        "p_xy6_er1": Key(float, 0.87, check=_signed_prob),
        "p_xy8_er2": Key(float, 0.86, check=_signed_prob),
        "p_cz": Key(float, 0.93, check=_signed_prob),
        "p_cx": Key(float, 0.94, check=_signed_prob),
        "f_read1": Key(float, 0.94, check=_prob),
        "f_read2": Key(float, 0.94, check=_prob),
        "p_err": Key(float, 0.08, check=_prob),
    },
    "chevron": {
        "nucleus": Key(str, "Nuc-1"),
        "n_pulses": Key(list, [0, 2, 4, 8], check=_all_nonneg),
    },
    "resonance": {
        "window_us": Key(list, [0.5, 20.0], check=_interval),
        "alpha_target_pi": Key(float, 0.25),
    },
    "grass": {
        "target": Key(str, "Nuc-1"),
        "decouple": Key(list, ["Nuc-2"]),
        "static_weight": Key(float, 1.0, check=_nonneg),
        "n_pulses": Key(int, 8, check=_nonneg),
        "learning_rate": Key(float, 0.05, check=_pos),
        "max_iters": Key(int, 3000, check=_nonneg),
        "tol": Key(float, 1e-6, check=_pos),
        "n_starts": Key(int, 200, check=_pos),
        "bounds_us": Key(list, [0.2, 10.0], check=_interval),
        "threshold_t": Key(float, 3.96),
        "threshold_d": Key(float, 3.35),
        "threshold_s_us": Key(float, 0.05, check=_nonneg),
        "bath_filter": Key(bool, True),
        "bath_size": Key(int, 20, check=_nonneg),
        "bath_seed": Key(int, 1234),
        "bath_larmor_khz": Key(float, 142.0, check=_pos),
        "bath_min_contrast": Key(float, 0.75, check=_prob),
        "spacings_us": Key(list, None, check=_all_nonneg),
    },
    "circuit": {
        "kind": Key(CIRCUIT_KINDS, "bell_ee"),
        "noisy": Key(bool, False),
        "ideal": Key(bool, False),
        "couple_nucleus": Key(bool, True),
        "grass_spacings_us": Key(list, None, check=_all_nonneg),
    },
    "qnd": {
        "policy": Key(QND_POLICIES, "post_select"),
        "gate_contrast": Key(float, 1.0, check=_prob),
        "flip_before_read": Key(bool, False),
    },
    "deer": {
        "n_pulses": Key(int, 64, check=lambda v: None if v >= 2 else "must be >= 2"),
        "tau_us": Key(float, 6.0, check=_pos),
        "damping_us": Key(float, 200.0, check=_pos),
        "noise": Key(float, 0.0, check=_nonneg),
        "fit": Key(bool, True),
    },
    "ramsey": {
        "t2_us": Key(float, None, check=_pos),
        "stretch": Key(float, 1.0, check=_pos),
        "n_peaks": Key(int, 2, check=_pos),
    },
    "pairstats": {
        "areal_density_cm2": Key(float, 5e9, check=_pos),
        "layer_thickness_nm": Key(float, 20.0, check=_pos),
        "n_ions": Key(int, 100_000, check=_pos),
        "j_threshold_khz": Key(float, J_COUPLING_KHZ, check=_pos),
        "g_eff": Key(float, None, check=_pos),
        "cutoff_nm": Key(float, 150.0, check=_pos),
        "box_side_nm": Key(float, None, check=_pos),
        "field_axis": Key(list, [0.0, 0.0, 1.0], check=_vec3),
        "r_min_nm": Key(float, 10.0, check=_pos),
    },
    "budget": {
        "kinds": Key(list, list(BUDGET_KINDS)),
    },
    "output": {
        "format": Key(("csv", "jsonl"), "csv"),
        "path": Key(str, None),
    },
}

# sections that do not change results and stay out of the hash
UNHASHED = ("output",)


def _coerce(value, key: Key, where: str):
    kind = key.kind
    if isinstance(kind, tuple):
        if value not in kind:
            raise ConfigError(f"{where}: {value!r} is not one of {list(kind)}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    if key.check is not None:
        msg = key.check(value)
        if msg:
            raise ConfigError(f"{where}{msg if msg.startswith('[') else ' ' + msg}")
    return value


def _resolve(raw: dict, schema: dict, prefix: str) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise UnknownKey(f"unknown key {prefix}{unknown[0]}")
    out = {}
    for name, spec in schema.items():
        where = f"{prefix}{name}"
        if isinstance(spec, dict):
            sub = raw.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{where}: expected a table")
            out[name] = _resolve(sub, spec, where + ".")
        elif isinstance(spec, list):
            items = raw.get(name, [])
            if not isinstance(items, list) or not all(isinstance(x, dict) for x in items):
                raise ConfigError(f"{where}: expected an array of tables")
            out[name] = [_resolve(x, spec[0], f"{where}[{i}].") for i, x in enumerate(items)]
        elif name in raw:
            out[name] = _coerce(raw[name], spec, where)
        elif spec.required:
            raise MissingRequired(f"missing required key {where}")
        else:
            out[name] = spec.default
    return out


def _electron(block: dict, base: ElectronParams, where: str) -> ElectronParams:
    t2, n = base.t2_envelope
    try:
        return ElectronParams(
            mwg_freq=block["mwg_freq_mhz"] if block["mwg_freq_mhz"] is not None else base.mwg_freq,
            t2_envelope=(block["t2_us"] if block["t2_us"] is not None else t2,
                         block["stretch"] if block["stretch"] is not None else n),
            readout_fidelity=block["readout_fidelity"] if block["readout_fidelity"] is not None
            else base.readout_fidelity,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _build_system(sysblock: dict) -> tuple[SpinSystem, tuple[str, ...]]:
    nuclei, names = [], []
    for i, nb in enumerate(sysblock["nuclei"]):
        where = f"system.nuclei[{i}]"
        name = nb["name"]
        table = NUCLEUS_TABLE.get(name)
        vals = {}
        for key, idx in (("a_par_khz", 0), ("a_perp_khz", 1), ("omega_l_khz", 2), ("owner", 3)):
            if nb[key] is not None:
                vals[key] = nb[key]
            elif table is not None:
                vals[key] = table[idx]
            else:
                raise MissingRequired(f"{where}.{key} is required for nucleus {name!r} without tabulated values")
        if name in names:
            raise ConfigError(f"{where}.name: duplicate nucleus {name!r}")
        if vals["owner"] not in (0, 1):
            raise ConfigError(f"{where}.owner must be 0 (Er-1) or 1 (Er-2)")
        scale = nb["larmor_scale"] if nb["larmor_scale"] is not None else sysblock["larmor_scale"]
        try:
            hp = HyperfineParams(float(vals["a_par_khz"]), float(vals["a_perp_khz"]), float(vals["omega_l_khz"]),
                                 scale)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        nuclei.append((vals["owner"], hp))
        names.append(name)
    electrons = (_electron(sysblock["er1"], ER1, "system.er1"), _electron(sysblock["er2"], ER2, "system.er2"))
    return SpinSystem(electrons, sysblock["j_coupling_khz"], nuclei), tuple(names)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Fully resolved configuration. ``resolved`` is the defaults-applied nested dict."""

    resolved: dict
    system: SpinSystem
    nucleus_names: tuple[str, ...]
    noise: NoiseBudget
    command: str | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.resolved[name]

    def nucleus_index(self, name: str, where: str) -> int:
        if name not in self.nucleus_names:
            raise ConfigError(f"{where}: nucleus {name!r} is not defined in [system]")
        return self.nucleus_names.index(name)

    @property
    def output_format(self) -> str:
        return self.resolved["output"]["format"]

    @property
    def output_path(self) -> str | None:
        return self.resolved["output"]["path"]

    @property
    def config_hash(self) -> str:
        payload = {k: v for k, v in self.resolved.items() if k not in UNHASHED}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, resolved={**self.resolved, "seed": int(seed)}, seed=int(seed))

    def sweep_grid(self, command: str) -> tuple[str, list]:
        """(variable, values) of the sweep for ``command``, defaulting per command."""
        variable, (start, stop, points) = SWEEP_DEFAULTS[command]
        sw = self.resolved["sweep"]
        if sw["variable"] is not None and sw["variable"] != variable:
            raise ConfigError(f"sweep.variable: {command} sweeps {variable!r}, got {sw['variable']!r}")
        if sw["values"] is not None:
            values = sw["values"]
            if not values:
                raise ConfigError("sweep.values must be nonempty")
        else:
            start = sw["start"] if sw["start"] is not None else start
            stop = sw["stop"] if sw["stop"] is not None else stop
            points = sw["points"] if sw["points"] is not None else points
            if points == 1:
                values = [start]
            else:
                values = [round(start + (stop - start) * k / (points - 1), 12) for k in range(points)]
        if variable == "rounds":
            values = [int(round(v)) for v in values]
        else:
            values = [float(v) for v in values]
        return variable, values


_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a RunConfig, applying defaults and rejecting unknown keys."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        msg = _LOC.sub("", str(exc)).strip()
        raise ParseError(msg, int(m.group(1)), int(m.group(2))) if m else ParseError(msg) from exc
    if "system" not in raw:
        raise MissingRequired("missing required section [system]")
    resolved = _resolve(raw, SCHEMA, "")
    system, names = _build_system(resolved["system"])
    try:
        noise = NoiseBudget(**resolved["noise"])
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from exc
    seq = resolved["sequence"]
    if seq["spacings_us"] is not None:
        n = len(seq["spacings_us"]) - 1
        if n < 0:
            raise ConfigError("sequence.spacings_us must hold at least one window")
        if seq["phases"] is not None and len(seq["phases"]) != n:
            raise ConfigError(f"sequence.phases must hold {n} labels, one per pulse")
    if seq["family"] == "CPMG" or seq["family"] == "XY-N":
        if seq["n_pulses"] is None and seq["spacings_us"] is None:
            raise MissingRequired(f"sequence.n_pulses is required for family {seq['family']}")
    for listed in (seq["nuclei"] or []) + [resolved["chevron"]["nucleus"], resolved["grass"]["target"]] \
            + list(resolved["grass"]["decouple"]):
        if not isinstance(listed, str):
            raise ConfigError(f"nucleus references must be names, got {listed!r}")
    for kind in resolved["budget"]["kinds"]:
        if kind not in BUDGET_KINDS:
            raise ConfigError(f"budget.kinds: {kind!r} is not one of {list(BUDGET_KINDS)}")
    return RunConfig(resolved, system, names, noise, resolved["command"], resolved["seed"])


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
