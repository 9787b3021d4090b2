"""End-to-end Bell -> Cavendish pipeline.

Each trial draws settings, samples the quantum outcomes, relays each outcome
through its own torsion balance and records both bit layers. Trials are
seeded from ``SeedSequence(master_seed, spawn_key=(trial_id,))`` so the
ledger does not depend on chunking or worker count.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import causality
from .behavior import BehaviorTable
from .cavendish import FAST, CavendishConfig, Trajectory, integrate_pendulum, readout
from .errors import BellCavError, StageError, ValidationError
from .polytope import DEFAULT_TOL, NONLOCAL, LocalityCertificate, chsh_value, local_membership, nearest_no_signaling
from .quantum import MeasurementSettings, TwoQubitState, behavior_from_state, sample_outcomes
from .stats import (
    LAYERS,
    LEDGER_FIELDS,
    MACRO,
    QUANTUM,
    ChshSignificance,
    EstimatedBehavior,
    TrialRecord,
    chsh_significance,
    count_table,
    write_results_csv,
)

log = logging.getLogger(__name__)

REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration


def build_state(spec: dict[str, Any]) -> TwoQubitState:
    kind = spec.get("kind", "singlet")
    if kind == "singlet":
        return TwoQubitState.singlet()
    if kind == "werner":
        return TwoQubitState.werner(float(spec["visibility"]))
    if kind == "maximally_mixed":
        return TwoQubitState.maximally_mixed()
    if kind == "matrix":
        real = np.asarray(spec["real"], dtype=float)
        imag = np.asarray(spec.get("imag", np.zeros_like(real)), dtype=float)
        return TwoQubitState(real + 1j * imag)
    raise ValidationError(f"unknown state kind {kind!r}")


@dataclass(frozen=True)
class QuantumBlock:
    state: dict[str, Any] = field(default_factory=lambda: {"kind": "singlet"})
    alice_angles: tuple[float, float] = MeasurementSettings().alice_angles
    bob_angles: tuple[float, float] = MeasurementSettings().bob_angles

    def settings(self) -> MeasurementSettings:
        return MeasurementSettings(tuple(self.alice_angles), tuple(self.bob_angles))

    def behavior(self) -> BehaviorTable:
        return behavior_from_state(build_state(self.state), self.settings())

    def to_dict(self) -> dict[str, Any]:
        return {"state": dict(self.state), "alice_angles": list(self.alice_angles), "bob_angles": list(self.bob_angles)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> QuantumBlock:
        default = cls()
        block = cls(
            state=dict(d.get("state", default.state)),
            alice_angles=tuple(float(v) for v in d.get("alice_angles", default.alice_angles)),
            bob_angles=tuple(float(v) for v in d.get("bob_angles", default.bob_angles)),
        )
        block.behavior()  # validate eagerly
        return block


@dataclass(frozen=True)
class CausalityBlock:
    c: float = causality.SPEED_OF_LIGHT
    modes: tuple[str, ...] = causality.MODES
    separation: float = 20.0
    quantum_window: float = 10e-9
    relay_window: float = 1.0
    events: tuple[causality.SpacetimeEvent, ...] | None = None

    def schedule(self) -> list[causality.SpacetimeEvent]:
        if self.events is not None:
            return list(self.events)
        return causality.protocol_schedule(self.separation, self.quantum_window, self.relay_window)

    def audit(self) -> list[causality.AuditVerdict]:
        events = self.schedule()
        return [causality.audit_schedule(events, mode, self.c) for mode in self.modes]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "c": self.c,
            "modes": list(self.modes),
            "separation": self.separation,
            "quantum_window": self.quantum_window,
            "relay_window": self.relay_window,
        }
        if self.events is not None:
            d["events"] = [e.to_dict() for e in self.events]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CausalityBlock:
        default = cls()
        events = d.get("events")
        block = cls(
            c=float(d.get("c", default.c)),
            modes=tuple(d.get("modes", default.modes)),
            separation=float(d.get("separation", default.separation)),
            quantum_window=float(d.get("quantum_window", default.quantum_window)),
            relay_window=float(d.get("relay_window", default.relay_window)),
            events=None if events is None else tuple(causality.schedule_from_records(events)),
        )
        block.audit()
        return block


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 20240517
    trials: int = 100_000
    relay_noise: float = 0.0
    quantum: QuantumBlock = field(default_factory=QuantumBlock)
    cavendish: CavendishConfig = FAST
    causality: CausalityBlock = field(default_factory=CausalityBlock)
    output_dir: str | None = None
    lp_tol: float = DEFAULT_TOL
    z_threshold: float = 5.0

    def __post_init__(self) -> None:
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValidationError(f"trials must be a positive integer, got {self.trials!r}")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValidationError(f"master_seed must be a non-negative integer, got {self.master_seed!r}")
        if not 0.0 <= self.relay_noise <= 0.5:
            raise ValidationError(f"relay_noise must lie in [0, 0.5], got {self.relay_noise!r}")
        if not self.lp_tol > 0:
            raise ValidationError("lp_tol must be positive")
        object.__setattr__(self, "cavendish", self.cavendish.with_noise(self.relay_noise))

    def to_dict(self) -> dict[str, Any]:
        cav = self.cavendish.to_dict()
        cav.pop("relay_noise")
        return {
            "master_seed": self.master_seed,
            "trials": self.trials,
            "relay_noise": self.relay_noise,
            "quantum": self.quantum.to_dict(),
            "cavendish": cav,
            "causality": self.causality.to_dict(),
            "output_dir": self.output_dir,
            "tolerances": {"lp_tol": self.lp_tol, "z_threshold": self.z_threshold},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        known = {"master_seed", "trials", "relay_noise", "quantum", "cavendish", "causality", "output_dir", "tolerances"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        default = cls()
        cav = dict(d.get("cavendish", {"preset": "fast"}))
        if "relay_noise" in cav:
            raise ValidationError("set relay_noise at the top level of the config, not in the cavendish block")
        tol = d.get("tolerances", {})
        return cls(
            master_seed=int(d.get("master_seed", default.master_seed)),
            trials=int(d.get("trials", default.trials)),
            relay_noise=float(d.get("relay_noise", default.relay_noise)),
            quantum=QuantumBlock.from_dict(d.get("quantum", {})),
            cavendish=CavendishConfig.from_dict(cav),
            causality=CausalityBlock.from_dict(d.get("causality", {})),
            output_dir=d.get("output_dir", default.output_dir),
            lp_tol=float(tol.get("lp_tol", default.lp_tol)),
            z_threshold=float(tol.get("z_threshold", default.z_threshold)),
        )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Trials


def trial_seed(master_seed: int, trial_id: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial_id,))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class _TrialContext:
    behavior: BehaviorTable
    cavendish: CavendishConfig
    master_seed: int
    _trajectories: dict[tuple[str, int], Trajectory] = field(default_factory=dict)

    def trajectory(self, party: str, bit: int) -> Trajectory:
        # Each party's balance starts from rest, so its trajectory depends only on the bit.
        key = (party, bit)
        if key not in self._trajectories:
            self._trajectories[key] = integrate_pendulum(self.cavendish, orientation_bit=bit)
        return self._trajectories[key]


def run_trial(ctx: _TrialContext, trial_id: int) -> TrialRecord:
    stage = "settings"
    try:
        seed = trial_seed(ctx.master_seed, trial_id)
        rng = np.random.default_rng(seed)
        x, y = int(rng.integers(2)), int(rng.integers(2))
        stage = "quantum"
        a, b = sample_outcomes(ctx.behavior, x, y, rng)
        macro = []
        for party, bit in (("alice", a), ("bob", b)):
            stage = f"cavendish:{party}"
            traj = ctx.trajectory(party, bit)
            stage = f"readout:{party}"
            macro.append(readout(traj, ctx.cavendish, rng).output_bit)
    except BellCavError as exc:
        raise StageError(trial_id, stage, exc) from exc
    return TrialRecord(trial_id, x, y, a, b, macro[0], macro[1], seed)


def _run_chunk(ctx: _TrialContext, start: int, stop: int) -> tuple[list[TrialRecord], StageError | None]:
    out = []
    for tid in range(start, stop):
        try:
            out.append(run_trial(ctx, tid))
        except StageError as err:
            return out, err
    return out, None


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def simulate_trials(config: ExperimentConfig, workers: int = 1) -> tuple[list[TrialRecord], StageError | None]:
    """Run every trial; returns records sorted by id and the earliest failure."""
    ctx = _TrialContext(config.quantum.behavior(), config.cavendish, config.master_seed)
    workers = max(1, int(workers))
    if workers == 1:
        results = [_run_chunk(ctx, 0, config.trials)]
    else:
        spans = _chunks(config.trials, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, ctx, lo, hi) for lo, hi in spans]
            results = [f.result() for f in futures]
    records = sorted((r for chunk, _ in results for r in chunk), key=lambda r: r.trial_id)
    errors = [e for _, e in results if e is not None]
    if not errors:
        return records, None
    first = min(errors, key=lambda e: e.trial_id)
    return [r for r in records if r.trial_id < first.trial_id], first


def ledger_lines(records: Sequence[TrialRecord], error: StageError | None = None) -> list[str]:
    lines = [",".join(LEDGER_FIELDS)]
    lines.extend(",".join(str(v) for v in r.to_row()) for r in records)
    if error is not None:
        lines.append(f"# TRUNCATED trial_id={error.trial_id} stage={error.stage} error={error.cause}")
    return lines


def write_ledger(path: str | Path, records: Sequence[TrialRecord], error: StageError | None = None) -> None:
    Path(path).write_text("\n".join(ledger_lines(records, error)) + "\n")


def read_ledger(path: str | Path) -> tuple[list[TrialRecord], bool]:
    """Parse a ledger; the flag reports a truncation marker."""
    records, truncated = [], False
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != LEDGER_FIELDS:
            raise ValidationError(f"{path}: unexpected ledger header {header}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# TRUNCATED"):
                truncated = True
                continue
            records.append(TrialRecord.from_row(line.split(",")))
    return records, truncated


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True, eq=False)
class LayerResult:
    layer: str
    estimate: EstimatedBehavior
    certificate: LocalityCertificate
    significance: ChshSignificance
    signaling_gap: float
    z_threshold: float

    @property
    def nonlocal_claim(self) -> bool:
        """Nonlocal only when the LP and the CHSH z-test agree."""
        return self.certificate.verdict == NONLOCAL and self.significance.z >= self.z_threshold

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer": self.layer,
            "n": self.estimate.n,
            "counts": self.estimate.counts.tolist(),
            "table": self.estimate.table.to_list(),
            "stderr": self.estimate.stderr.tolist(),
            "signaling_gap": self.signaling_gap,
            "certificate": self.certificate.to_dict(),
            "chsh": self.significance.to_dict(),
            "z_threshold": self.z_threshold,
            "nonlocal_claim": self.nonlocal_claim,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LayerResult:
        return cls(
            layer=d["layer"],
            estimate=EstimatedBehavior.from_counts(np.asarray(d["counts"])),
            certificate=LocalityCertificate.from_dict(d["certificate"]),
            significance=ChshSignificance(**d["chsh"]),
            signaling_gap=float(d["signaling_gap"]),
            z_threshold=float(d["z_threshold"]),
        )


def analyze_layer(
    records: Sequence[TrialRecord], layer: str, lp_tol: float, z_threshold: float
) -> LayerResult | None:
    counts = count_table(records, layer)
    if np.any(counts.sum(axis=(0, 1)) == 0):
        return None
    est = EstimatedBehavior.from_counts(counts)
    # Finite samples signal slightly; the LP sees the nearest no-signaling table.
    projected = nearest_no_signaling(est.table)
    return LayerResult(
        layer=layer,
        estimate=est,
        certificate=local_membership(projected, lp_tol),
        significance=chsh_significance(est),
        signaling_gap=est.table.signaling_gap(),
        z_threshold=z_threshold,
    )


@dataclass(frozen=True, eq=False)
class RunReport:
    config: dict[str, Any]
    n_records: int
    model_chsh: float
    quantum: LayerResult | None
    macro: LayerResult | None
    audits: tuple[causality.AuditVerdict, ...]
    truncated: bool = False
    wall_clock_s: float | None = None

    def layer(self, name: str) -> LayerResult | None:
        return {QUANTUM: self.quantum, MACRO: self.macro}[name]

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        d = {
            "version": REPORT_VERSION,
            "config": self.config,
            "n_records": self.n_records,
            "truncated": self.truncated,
            "model_chsh": self.model_chsh,
            "layers": {name: (None if r is None else r.to_dict()) for name, r in ((QUANTUM, self.quantum), (MACRO, self.macro))},
            "audits": [a.to_dict() for a in self.audits],
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunReport:
        if d.get("version") != REPORT_VERSION:
            raise ValidationError(f"unsupported report version {d.get('version')!r}")
        layers = {k: (None if v is None else LayerResult.from_dict(v)) for k, v in d["layers"].items()}
        return cls(
            config=d["config"],
            n_records=int(d["n_records"]),
            model_chsh=float(d["model_chsh"]),
            quantum=layers.get(QUANTUM),
            macro=layers.get(MACRO),
            audits=tuple(causality.AuditVerdict.from_dict(a) for a in d["audits"]),
            truncated=bool(d.get("truncated", False)),
            wall_clock_s=d.get("wall_clock_s"),
        )


def _fmt_layer(r: LayerResult | None, name: str) -> list[str]:
    if r is None:
        return [f"[{name}] insufficient trials: at least one setting pair has no records"]
    s = r.significance
    c = r.certificate
    e = r.estimate.table.correlators()
    return [
        f"[{name}] N = {r.estimate.n}",
        f"  correlators E(x,y): E00={e[0, 0]:+.5f} E01={e[0, 1]:+.5f} E10={e[1, 0]:+.5f} E11={e[1, 1]:+.5f}",
        f"  CHSH S = {s.s_hat:+.5f} +/- {s.sigma:.5f}   z = {s.z:.2f} (threshold {r.z_threshold:g})",
        f"  LP verdict: {c.verdict}   distance = {c.distance:.3e} (tol {c.tol:g})",
        f"  sample signaling gap: {r.signaling_gap:.3e}",
        f"  nonlocal claim: {'yes' if r.nonlocal_claim else 'no'}",
    ]


def emit_report(report: RunReport, fmt: str = "structured", include_timing: bool = False) -> str:
    """Serialize a report; ``structured`` is JSON, ``text`` is for people."""
    if fmt == "structured":
        return json.dumps(report.to_dict(include_timing=include_timing), indent=2) + "\n"
    if fmt != "text":
        raise ValidationError(f"unknown report format {fmt!r}")
    cfg = report.config
    lines = [
        "Bell -> Cavendish relay run",
        f"trials: {report.n_records}{' (TRUNCATED)' if report.truncated else ''}   "
        f"master_seed: {cfg['master_seed']}   relay_noise: {cfg['relay_noise']}",
        f"model CHSH (exact): {report.model_chsh:+.6f}",
        "",
    ]
    lines += _fmt_layer(report.quantum, QUANTUM)
    lines.append("")
    lines += _fmt_layer(report.macro, MACRO)
    lines.append("")
    for a in report.audits:
        status = "loophole-free" if a.loophole_free else f"{len(a.violating_pairs)} timelike pair(s)"
        lines.append(f"[causality:{a.mode}] {status}")
        for p in a.violating_pairs[:4]:
            lines.append(f"  {p.alice_event} ~ {p.bob_event}: slack {p.slack_m:.3e} m ({p.slack_s:.3e} s)")
        for premise in a.premises:
            lines.append(f"  premise: {premise}")
    if include_timing and report.wall_clock_s is not None:
        lines += ["", f"wall clock: {report.wall_clock_s:.2f} s"]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> RunReport:
    return RunReport.from_dict(json.loads(text))


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    out_dir: str | Path | None = None,
    export_trajectories: bool = False,
) -> RunReport:
    """Simulate, persist the ledger, analyze both layers and audit the schedule.

    A failing trial aborts the run with :class:`StageError` after the ledger
    of the trials before it is written with a truncation marker.
    """
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else (Path(config.output_dir) if config.output_dir else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records, error = simulate_trials(config, workers)
    if out is not None:
        write_ledger(out / "ledger.csv", records, error)
    if error is not None:
        raise error
    log.info("simulated %d trials", len(records))

    behavior = config.quantum.behavior()
    layers = {name: analyze_layer(records, name, config.lp_tol, config.z_threshold) for name in LAYERS}
    report = RunReport(
        config=config.to_dict(),
        n_records=len(records),
        model_chsh=chsh_value(behavior),
        quantum=layers[QUANTUM],
        macro=layers[MACRO],
        audits=tuple(config.causality.audit()),
        wall_clock_s=time.perf_counter() - t0,
    )
    if out is not None:
        write_outputs(report, out)
        if export_trajectories:
            ctx = _TrialContext(behavior, config.cavendish, config.master_seed)
            tdir = out / "trajectories"
            tdir.mkdir(exist_ok=True)
            for bit in (0, 1):
                ctx.trajectory("alice", bit).write_csv(tdir / f"bit{bit}.csv")
    return report


def write_outputs(report: RunReport, out: str | Path) -> None:
    out = Path(out)
    (out / "report.json").write_text(emit_report(report, "structured"))
    (out / "report.txt").write_text(emit_report(report, "text"))
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": report.wall_clock_s}) + "\n")
    present = {name: report.layer(name) for name in LAYERS if report.layer(name) is not None}
    if present:
        write_results_csv(
            out / "results.csv",
            {k: v.estimate for k, v in present.items()},
            {k: v.significance for k, v in present.items()},
        )


def noise_law_prediction(s_input: float, relay_noise: float) -> float:
    """Independent bit flips on both sides scale every correlator by (1 - 2 eps)^2."""
    return (1.0 - 2.0 * relay_noise) ** 2 * s_input
