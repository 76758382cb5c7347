"""Experiment commands, result records and their csv / json-lines serialisation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .circuits import (
    ER1,
    ER2,
    NUC,
    Register,
    apply_circuit,
    bell_ee_circuit,
    bell_fidelity,
    build_gate,
    circuit_unitary,
    correct_bell_fidelity,
    en_bell_circuit,
    en_local_frame,
    expectation,
    fidelity_budget,
    initial_state,
    local_z_infidelity,
    nuclear_correlation,
    product_state,
    qnd_analysis,
    spectrum_peaks,
    subspace_unitary,
)
from .config import SWEEP_DEFAULTS, RunConfig
from .constants import PUBLISHED_GRASS_SPACINGS
from .ensemble import G_EFF, ImplantModel, distance_bounds, pair_statistics
from .errors import ConfigError, ErspinError, IoError, NumericalFailure
from .fitting import fit_damped_cosine
from .grass import CU_MINUS, CU_PLUS, GrassConfig, cu_cost_spec, evaluate_sequence, grass_optimize
from .seqsim import (
    NamedSequence,
    PulseSequence,
    chevron_map,
    cz_resonance_tau,
    deer_pair,
    deer_trace,
    effective_interaction_time,
    eseem_contrast,
)


@dataclass(eq=True)
class ResultRecord:
    """Output of one command: per-point rows plus scalar fields (fits, summaries)."""

    command: str
    config_hash: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


# ---------------------------------------------------------------------------
# serialisation


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(record: ResultRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(record.columns)
    for row in record.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def to_jsonl(record: ResultRecord) -> str:
    head = {
        "kind": "record",
        "command": record.command,
        "config_hash": record.config_hash,
        "columns": list(record.columns),
        "fields": record.fields,
        "provenance": record.provenance,
    }
    lines = [json.dumps(head)]
    for row in record.rows:
        lines.append(json.dumps({"kind": "row", **dict(zip(record.columns, row))}))
    return "\n".join(lines) + "\n"


def parse_jsonl(text: str) -> ResultRecord:
    lines = [json.loads(s) for s in text.splitlines() if s.strip()]
    if not lines or lines[0].get("kind") != "record":
        raise ValueError("json-lines output must start with a record line")
    head = lines[0]
    cols = tuple(head["columns"])
    rows = [tuple(obj[c] for c in cols) for obj in lines[1:]]
    return ResultRecord(head["command"], head["config_hash"], cols, rows, head["fields"], head["provenance"])


def emit(record: ResultRecord, fmt: str = "csv", path=None) -> str:
    """Serialise ``record``; write it to ``path`` when given and return the text."""
    if fmt == "csv":
        text = to_csv(record)
    elif fmt in ("jsonl", "json-lines"):
        text = to_jsonl(record)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    return text


# ---------------------------------------------------------------------------
# helpers


def _f(x) -> float:
    return float(x)


def _nuclei_for(cfg: RunConfig, where: str = "sequence.nuclei") -> list[int]:
    seq = cfg.section("sequence")
    if seq["nuclei"] is not None:
        return [cfg.nucleus_index(n, where) for n in seq["nuclei"]]
    return [i for i, (owner, _) in enumerate(cfg.system.nuclei) if owner == seq["electron"]]


def _record(cfg: RunConfig, command: str, columns, rows, fields=None) -> ResultRecord:
    rows = [tuple(r) for r in rows]
    for r in rows:
        for v in r:
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericalFailure(f"{command}: non-finite value in output")
    return ResultRecord(command, cfg.config_hash, tuple(columns), rows, dict(fields or {}),
                        {"seed": cfg.seed, "version": __version__})


def _register(cfg: RunConfig) -> Register:
    circ = cfg.section("circuit")
    spacings = circ["grass_spacings_us"] or PUBLISHED_GRASS_SPACINGS
    return Register.from_system(cfg.system, spacings, couple_nucleus=circ["couple_nucleus"])


# ---------------------------------------------------------------------------
# commands


def cmd_eseem(cfg: RunConfig) -> ResultRecord:
    seq = cfg.section("sequence")
    frames = [cfg.system.frame(i) for i in _nuclei_for(cfg)]
    envelope = cfg.system.electrons[seq["electron"]].t2_envelope if seq["envelope"] else None
    if seq["spacings_us"] is not None:
        s = PulseSequence(tuple(seq["spacings_us"]), tuple(seq["phases"]) if seq["phases"] else None)
        row = (s.total_duration, eseem_contrast(s, frames, envelope))
        return _record(cfg, "eseem", ("total_us", "contrast"), [row])
    var, taus = cfg.sweep_grid("eseem")
    rows = []
    for tau in taus:
        s = NamedSequence(seq["family"], tau, seq["n_pulses"]).expand()
        rows.append((tau, s.total_duration, eseem_contrast(s, frames, envelope)))
    return _record(cfg, "eseem", (var, "total_us", "contrast"), rows)


def cmd_deer(cfg: RunConfig) -> ResultRecord:
    d = cfg.section("deer")
    var, deltas = cfg.sweep_grid("deer")
    t_int = np.array([effective_interaction_time(deer_pair(d["n_pulses"], d["tau_us"], dt)) for dt in deltas])
    signal = deer_trace(cfg.system.j_coupling, t_int, d["damping_us"])
    if d["noise"] > 0:
        signal = signal + d["noise"] * np.random.default_rng(cfg.seed).normal(size=signal.size)
    rows = [(dt, _f(t), _f(c)) for dt, t, c in zip(deltas, t_int, signal)]
    fields = {}
    if d["fit"]:
        order = np.argsort(t_int)
        fit = fit_damped_cosine(t_int[order], signal[order])
        err = fit.stderr
        fields = {"j_fit_khz": fit.frequency, "j_fit_err_khz": _f(err[0]), "decay_fit_us": fit.decay,
                  "decay_fit_err_us": _f(err[1]), "amplitude_fit": fit.amplitude, "phase_fit": fit.phase}
    return _record(cfg, "deer", (var, "t_int_us", "contrast"), rows, fields)


def cmd_resonance(cfg: RunConfig) -> ResultRecord:
    r = cfg.section("resonance")
    rows = []
    for i in _nuclei_for(cfg):
        res = cz_resonance_tau(cfg.system.frame(i), tuple(r["window_us"]), r["alpha_target_pi"] * np.pi)
        z = res.basis.z_prime
        rows.append((cfg.nucleus_names[i], res.tau0, res.alpha0 / np.pi, res.antiparallelity, *map(_f, z)))
    fields = {"tau0_us": rows[0][1], "alpha0_pi": rows[0][2]} if rows else {}
    return _record(cfg, "resonance",
                   ("nucleus", "tau0_us", "alpha0_pi", "antiparallel_deg", "zp_x", "zp_y", "zp_z"), rows, fields)


def cmd_chevron(cfg: RunConfig) -> ResultRecord:
    c = cfg.section("chevron")
    frame = cfg.system.frame(cfg.nucleus_index(c["nucleus"], "chevron.nucleus"))
    var, taus = cfg.sweep_grid("chevron")
    grid = chevron_map(frame, taus, c["n_pulses"])  # (n, tau)
    cols = (var,) + tuple(f"flip_n{n}" for n in c["n_pulses"])
    rows = [(tau, *map(_f, grid[:, k])) for k, tau in enumerate(taus)]
    return _record(cfg, "chevron", cols, rows)


def _grass_setup(cfg: RunConfig):
    g = cfg.section("grass")
    target = cfg.nucleus_index(g["target"], "grass.target")
    decouple = tuple(cfg.nucleus_index(n, "grass.decouple") for n in g["decouple"])
    spec = cu_cost_spec(cfg.system.frame(target), target, decouple, g["static_weight"])
    gc = GrassConfig(
        n_pulses=g["n_pulses"], learning_rate=g["learning_rate"], max_iters=g["max_iters"], tol=g["tol"],
        n_starts=g["n_starts"], bounds=tuple(g["bounds_us"]), seed=cfg.seed, threshold_t=g["threshold_t"],
        threshold_d=g["threshold_d"], threshold_s=g["threshold_s_us"], bath_filter=g["bath_filter"],
        bath_size=g["bath_size"], bath_seed=g["bath_seed"], bath_larmor_khz=g["bath_larmor_khz"],
        bath_min_contrast=g["bath_min_contrast"],
    )
    return spec, gc


GRASS_COLUMNS = ("rank", "start", "duration_us", "cost", "target_plus", "target_minus", "decouple", "static_us",
                 "bath_contrast", "feasible", "bath_ok", "spacings_us")


def _grass_row(rank, r) -> tuple:
    return (rank, int(r.start), r.total_duration, r.cost, _f(r.target_overlaps[0][0]), _f(r.target_overlaps[0][1]),
            _f(sum(r.decouple_overlaps)), r.static_residual,
            None if r.bath_contrast is None else _f(r.bath_contrast), r.feasible, r.bath_ok,
            " ".join(repr(float(t)) for t in r.spacings))


def cmd_grass(cfg: RunConfig) -> ResultRecord:
    g = cfg.section("grass")
    spec, gc = _grass_setup(cfg)
    if g["spacings_us"] is not None:
        r = evaluate_sequence(g["spacings_us"], cfg.system, spec, GrassConfig(
            n_pulses=len(g["spacings_us"]) - 1, threshold_t=gc.threshold_t, threshold_d=gc.threshold_d,
            threshold_s=gc.threshold_s, bath_filter=gc.bath_filter, bath_size=gc.bath_size, bath_seed=gc.bath_seed,
            bath_larmor_khz=gc.bath_larmor_khz, bath_min_contrast=gc.bath_min_contrast))
        return _record(cfg, "grass", GRASS_COLUMNS, [_grass_row(0, r)], {"best_cost": r.cost})
    search = grass_optimize(cfg.system, spec, gc)
    ref = evaluate_sequence(PUBLISHED_GRASS_SPACINGS, cfg.system, spec) if gc.n_pulses == 8 else None
    rows = [_grass_row(k, r) for k, r in enumerate(search.results)]
    fields = {"best_cost": search.best.cost, "best_duration_us": search.best.total_duration,
              "n_feasible": sum(r.feasible for r in search.results)}
    if ref is not None:
        fields["reference_cost"] = ref.cost
    return _record(cfg, "grass", GRASS_COLUMNS, rows, fields)


def _correlation(cfg: RunConfig, command: str, echo: bool) -> ResultRecord:
    r = cfg.section("ramsey")
    var, waits = cfg.sweep_grid(command)
    envelope = None if r["t2_us"] is None else (r["t2_us"], r["stretch"])
    signal = nuclear_correlation(_register(cfg), waits, echo=echo, envelope=envelope)
    rows = [(t, _f(s)) for t, s in zip(waits, signal)]
    fields = {}
    if not echo and len(waits) >= 8:
        peaks, bin_khz = spectrum_peaks(signal, waits[1] - waits[0], r["n_peaks"])
        fields = {f"peak_{k + 1}_khz": _f(p) for k, p in enumerate(peaks)}
        fields["bin_khz"] = bin_khz
    return _record(cfg, command, (var, "correlation"), rows, fields)


def cmd_ramsey(cfg: RunConfig) -> ResultRecord:
    return _correlation(cfg, "ramsey", echo=False)


def cmd_hahn_nuc(cfg: RunConfig) -> ResultRecord:
    return _correlation(cfg, "hahn-nuc", echo=True)


def _gate_metrics(kind: str, reg: Register, ideal: bool) -> list[tuple]:
    ops = build_gate(kind, reg, ideal=ideal)
    u = circuit_unitary(ops, reg)
    rows = [("n_ops", float(len(ops)))]
    if kind == "SWAP_en_zonly":
        up, dn = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        zn = reg.nuclear_paulis()[2]
        z = [expectation(apply_circuit(product_state(up, e, np.eye(2) / 2), ops, reg), {NUC: zn}) for e in (up, dn)]
        rows.append(("z_transfer", (z[0] - z[1]) / 2))
        return rows
    if kind in ("CZ_ee", "SWAP_ee"):
        # scored with the nucleus idle; a coupled nucleus leaves no two-qubit block
        idle_reg = Register(None, reg.basis, reg.tau0, reg.j_khz, reg.grass_spacings, reg.cz_ee)
        u4 = subspace_unitary(circuit_unitary(ops, idle_reg), idle=NUC)
    else:
        u4 = en_local_frame(subspace_unitary(u, idle=ER1), reg)
    cz = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
    targets = {
        "CZ_ee": cz,
        "CZ_en": cz,
        # Er-2 is flipped when the nucleus is in |up'>
        "CX_en": np.kron(np.array([[0, 1], [1, 0]]), np.diag([1.0, 0.0])) + np.kron(np.eye(2), np.diag([0.0, 1.0])),
        "CU_en": np.block([[CU_PLUS, np.zeros((2, 2))], [np.zeros((2, 2)), CU_MINUS]]),
        "SWAP_en": np.eye(4)[[0, 2, 1, 3]],
        "SWAP_ee": np.eye(4)[[0, 2, 1, 3]],
    }
    rows.append(("infidelity_local_z", local_z_infidelity(u4, targets[kind].astype(complex), both_sides=True)))
    return rows


def cmd_circuit(cfg: RunConfig) -> ResultRecord:
    c = cfg.section("circuit")
    reg = _register(cfg)
    budget = cfg.noise if c["noisy"] else None
    kind = c["kind"]
    fids = (cfg.system.electrons[0].readout_fidelity, cfg.system.electrons[1].readout_fidelity)
    if kind == "bell_ee":
        rho = apply_circuit(initial_state(), bell_ee_circuit(reg, budget), reg, noisy=c["noisy"])
        f, t = bell_fidelity(rho, ER1, ER2, reg)
        rows = [("fidelity", f), ("XX", _f(t[0, 0])), ("YY", _f(t[1, 1])), ("ZZ", _f(t[2, 2]))]
    elif kind == "en_bell":
        prep, back = en_bell_circuit(reg, budget)
        rho = apply_circuit(initial_state(), prep, reg, noisy=c["noisy"])
        f_en, t = bell_fidelity(rho, ER2, NUC, reg)
        rho2 = apply_circuit(rho, back, reg, noisy=c["noisy"])
        f_back, _ = bell_fidelity(rho2, ER1, ER2, reg)
        rows = [("fidelity_en", f_en), ("ZZ", _f(t[2, 2])), ("fidelity_readback", f_back)]
    elif kind == "swap2":
        s = en_local_frame(subspace_unitary(circuit_unitary(build_gate("SWAP_en", reg, ideal=c["ideal"]), reg)), reg)
        rows = [("infidelity_local_z", local_z_infidelity(s @ s, np.eye(4, dtype=complex))),
                ("budget_fidelity", fidelity_budget(cfg.noise, "swap2").value)]
    else:
        rows = _gate_metrics(kind.split(":", 1)[1], reg, c["ideal"])
    if kind == "bell_ee" and c["noisy"]:
        rows.append(("fidelity_readout_corrected", correct_bell_fidelity(rows[0][1], fids)))
    return _record(cfg, "circuit", ("metric", "value"), [(m, _f(v)) for m, v in rows], {"kind": kind})


def cmd_qnd(cfg: RunConfig) -> ResultRecord:
    q = cfg.section("qnd")
    var, rounds = cfg.sweep_grid("qnd")
    rows = []
    for n in rounds:
        r = qnd_analysis(n, cfg.noise.p_err, cfg.noise.f_read2, q["policy"], q["flip_before_read"],
                         q["gate_contrast"])
        rows.append((n, r.fidelity, r.acceptance, r.per_round[-1]))
    return _record(cfg, "qnd", (var, "fidelity", "acceptance", "last_round_fidelity"), rows, {"policy": q["policy"]})


def cmd_pairstats(cfg: RunConfig) -> ResultRecord:
    p = cfg.section("pairstats")
    g_eff = p["g_eff"] or G_EFF
    model = ImplantModel(p["areal_density_cm2"], p["layer_thickness_nm"], p["box_side_nm"], g_eff, cfg.seed,
                         tuple(p["field_axis"]), p["cutoff_nm"])
    prob, stats = pair_statistics(model, p["j_threshold_khz"], p["n_ions"])
    var, grid = cfg.sweep_grid("pairstats")
    rows = [(j, stats.prob_above(j)) for j in grid]
    r_min, r_max = distance_bounds(p["j_threshold_khz"], g_eff, p["r_min_nm"])
    fields = {"prob_above": prob, "prob_above_err": stats.stderr(p["j_threshold_khz"]), "r_max_nm": r_max,
              "r_min_nm": r_min, "box_side_nm": stats.box_side}
    return _record(cfg, "pairstats", (var, "prob_above"), rows, fields)


def cmd_budget(cfg: RunConfig) -> ResultRecord:
    b = cfg.section("budget")
    rows = []
    for kind in b["kinds"]:
        res = fidelity_budget(cfg.noise, kind)
        comp = res.components
        rows.append((kind, res.value, comp.get("XX"), comp.get("YY"), comp.get("ZZ")))
    return _record(cfg, "budget", ("kind", "fidelity", "XX", "YY", "ZZ"), rows)


COMMAND_TABLE = {
    "eseem": cmd_eseem,
    "deer": cmd_deer,
    "resonance": cmd_resonance,
    "chevron": cmd_chevron,
    "grass": cmd_grass,
    "ramsey": cmd_ramsey,
    "hahn-nuc": cmd_hahn_nuc,
    "circuit": cmd_circuit,
    "qnd": cmd_qnd,
    "pairstats": cmd_pairstats,
    "budget": cmd_budget,
}
assert set(COMMAND_TABLE) >= set(SWEEP_DEFAULTS)


def run_command(cfg: RunConfig, command: str | None = None) -> ResultRecord:
    """Run one command; module errors are re-raised with the command name prefixed."""
    command = command or cfg.command
    if command is None:
        raise ConfigError("no command given on the command line or in the config")
    if cfg.command is not None and cfg.command != command:
        raise ConfigError(f"config names command {cfg.command!r} but {command!r} was requested")
    if command not in COMMAND_TABLE:
        raise ConfigError(f"unknown command {command!r}")
    try:
        return COMMAND_TABLE[command](cfg)
    except ErspinError as exc:
        exc.args = (f"{command}: {exc}",) + exc.args[1:]
        raise
