"""Command line entry point: ``kljnsim run|validate|sweep --config cfg.json --out dir``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .circuit import Emf, dc_loop_current, dc_wire_voltage, loop_current_variance, solve_single_loop, wire_voltage_variance
from .config import (
    Choice,
    DetectorConfig,
    PartyConfig,
    PhysicsConfig,
    Quantity,
    ScenarioConfig,
    Variant,
)
from .harness import CSV_COLUMNS, SWEEP_PARAMETERS, Experiment, run_monte_carlo, sweep
from .protocol import exchange_key
from .signals import RngStream, ac_variance, gaussian_noise

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3
VARIANTS = tuple(v.value for v in Variant)


class ConfigError(Exception):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhysicsSection(_Section):
    noise_scale_D: float = 1e-6
    samples_per_bep: int = 2000
    classify_by: Literal["current", "voltage"] = "voltage"


class AliceSection(_Section):
    r_low_ohm: float = 1e3
    r_high_ohm: float = 1e4
    dc_volt: float = 0.005


class BobSection(AliceSection):
    dc_volt: float = -0.005


class ScenarioSection(_Section):
    variant: Literal["none", "mitm_resistor", "twin_current", "twin_voltage", "injection"] = "none"
    dc_compensation: bool = False
    committed_emulation: Optional[Union[Literal["random"], dict[Literal["alice", "bob"], Literal["equal", "L", "H"]]]] = None
    injection_rms_amp: Optional[float] = None
    series_dc_volt: float = 0.0
    eve_knows_dc: bool = True
    eve_threshold: float = 0.0


class DetectorSection(_Section):
    epsilon: Optional[float] = None
    kappa: float = 5.0
    measurement_noise_rms: float = 0.0
    enabled: List[Literal["instant", "dc", "ac"]] = ["instant", "dc", "ac"]


class RunSection(_Section):
    trials: int = 1000
    seed: int = Field(0, ge=0, lt=2**64)
    target_bits: int = 128
    horizons: List[int] = [1, 2, 5, 10, 20]
    workers: int = 1


class RunConfig(_Section):
    physics: PhysicsSection = PhysicsSection()
    alice: AliceSection = AliceSection()
    bob: BobSection = BobSection()
    scenario: ScenarioSection = ScenarioSection()
    detectors: DetectorSection = DetectorSection()
    run: RunSection = RunSection()

    def experiment(self) -> Experiment:
        return Experiment(
            physics=PhysicsConfig(self.physics.noise_scale_D, self.physics.samples_per_bep,
                                  self.detectors.measurement_noise_rms, Quantity(self.physics.classify_by)),
            alice=PartyConfig(self.alice.r_low_ohm, self.alice.r_high_ohm, self.alice.dc_volt),
            bob=PartyConfig(self.bob.r_low_ohm, self.bob.r_high_ohm, self.bob.dc_volt),
            scenario=ScenarioConfig(
                variant=Variant(self.scenario.variant),
                dc_compensation=self.scenario.dc_compensation,
                committed_emulation=self.scenario.committed_emulation,
                injection_rms=self.scenario.injection_rms_amp,
                series_dc_volt=self.scenario.series_dc_volt,
                eve_knows_dc=self.scenario.eve_knows_dc,
                eve_threshold=self.scenario.eve_threshold,
            ),
            detectors=DetectorConfig(self.detectors.epsilon, self.detectors.kappa,
                                     frozenset(self.detectors.enabled)),
            trials=self.run.trials,
            seed=self.run.seed,
            horizons=tuple(self.run.horizons),
        )


def _semantic_errors(cfg: RunConfig) -> list:
    errors = []
    if not cfg.physics.noise_scale_D > 0:
        errors.append(f"physics.noise_scale_D: must be > 0, got {cfg.physics.noise_scale_D}")
    if cfg.physics.samples_per_bep < 2:
        errors.append(f"physics.samples_per_bep: must be >= 2, got {cfg.physics.samples_per_bep}")
    for name in ("alice", "bob"):
        p = getattr(cfg, name)
        if not p.r_low_ohm > 0:
            errors.append(f"{name}.r_low_ohm: must be > 0, got {p.r_low_ohm}")
        if not p.r_low_ohm < p.r_high_ohm:
            errors.append(f"{name}.r_low_ohm: must be < {name}.r_high_ohm, got {p.r_low_ohm} >= {p.r_high_ohm}")
    s = cfg.scenario
    if s.dc_compensation and s.variant not in ("mitm_resistor", "twin_voltage"):
        errors.append(f"scenario.dc_compensation: only valid for mitm_resistor or twin_voltage, not {s.variant!r}")
    if s.committed_emulation is not None and not (s.variant == "twin_voltage" and s.dc_compensation):
        errors.append("scenario.committed_emulation: requires variant twin_voltage with dc_compensation")
    if s.committed_emulation is None and s.variant == "twin_voltage" and s.dc_compensation:
        errors.append("scenario.committed_emulation: required with twin_voltage dc_compensation "
                      "(per-end map or 'random')")
    if s.injection_rms_amp is not None and not s.injection_rms_amp >= 0:
        errors.append(f"scenario.injection_rms_amp: must be >= 0, got {s.injection_rms_amp}")
    if s.series_dc_volt != 0 and s.variant != "twin_current":
        errors.append("scenario.series_dc_volt: only valid for twin_current")
    d = cfg.detectors
    if d.epsilon is not None and not d.epsilon > 0:
        errors.append(f"detectors.epsilon: must be > 0, got {d.epsilon}")
    if not d.kappa > 0:
        errors.append(f"detectors.kappa: must be > 0, got {d.kappa}")
    if d.measurement_noise_rms < 0:
        errors.append(f"detectors.measurement_noise_rms: must be >= 0, got {d.measurement_noise_rms}")
    r = cfg.run
    if r.trials < 1:
        errors.append(f"run.trials: must be >= 1, got {r.trials}")
    if r.target_bits < 1:
        errors.append(f"run.target_bits: must be >= 1, got {r.target_bits}")
    if not r.horizons or any(h < 1 for h in r.horizons):
        errors.append("run.horizons: must be a non-empty list of positive sample counts")
    if r.workers < 1:
        errors.append(f"run.workers: must be >= 1, got {r.workers}")
    return errors


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a JSON run configuration; raises ConfigError listing every problem."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc
    errors = _semantic_errors(cfg)
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _report_rows(scenario: str, rows):
    for r in rows:
        yield (scenario, r.trial, r.bep_index, r.alice_choice, r.partner_choice, r.state, r.secure,
               r.alice_classified, r.bob_classified, r.alice_bit, r.flag_instant, r.flag_dc_alice,
               r.flag_dc_bob, r.flag_ac, r.first_flag_index, r.mean_i_alice, r.mean_i_bob, r.var_i_alice,
               r.corr_toward_A, r.corr_toward_B, r.eve_guess)


def _prepare_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    probe.write_text("")
    probe.unlink()
    return path


def cmd_run(cfg: RunConfig, out: str, workers: int = 1) -> int:
    exp = cfg.experiment()
    out_dir = _prepare_out(out)
    report = run_monte_carlo(exp, workers=workers, keep_rows=True)
    key = exchange_key(cfg.run.target_bits, exp.scenario, exp.alice, exp.bob, exp.physics, exp.detectors,
                       RngStream(exp.seed, (2**32,)), max_beps=100 * cfg.run.target_bits)
    summary = report.summary()
    summary.update(key_aborted=key.aborted, key_beps=len(key.beps), key_bits=len(key.alice_key),
                   keys_equal=key.alice_key == key.bob_key)
    _write_csv(out_dir / "report.csv", CSV_COLUMNS, _report_rows(report.scenario, report.rows))
    _write_csv(out_dir / "summary.csv", list(summary), [list(summary.values())])
    for k, v in summary.items():
        print(f"{k}: {_fmt(v)}")
    print(f"wall_seconds: {report.wall_seconds:.3f}")
    return EXIT_OK


def validate_physics(physics: PhysicsConfig, alice: PartyConfig, bob: PartyConfig, seed: int,
                     samples: int = 1_000_000, variance_bias: float = 1.0, tolerance: float = 0.01):
    """Analytic vs simulated wire statistics for all four resistor states.

    Variance errors are relative to the analytic variance; DC errors are taken
    relative to the AC rms of the same quantity because the analytic DC level may be zero.
    ``variance_bias`` scales the simulated noise power (self-test hook).
    """
    D = physics.noise_scale_D
    rows = []
    for idx, (a, b) in enumerate((a, b) for a in Choice for b in Choice):
        R_A, R_B = alice.resistance(a), bob.resistance(b)
        stream = RngStream(seed, (idx,))
        e_A = Emf(gaussian_noise(stream.child(0), variance_bias * D * R_A, samples).samples, alice.dc_volt)
        e_B = Emf(gaussian_noise(stream.child(1), variance_bias * D * R_B, samples).samples, bob.dc_volt)
        sol = solve_single_loop(e_A, R_A, e_B, R_B)
        var_i, var_u = loop_current_variance(D, R_A, R_B), wire_voltage_variance(D, R_A, R_B)
        checks = (
            ("var_i", var_i, ac_variance(sol.i_wire), var_i),
            ("var_u", var_u, ac_variance(sol.u_wire), var_u),
            ("dc_i", dc_loop_current(alice.dc_volt, bob.dc_volt, R_A, R_B), float(sol.i_wire.samples.mean()),
             math.sqrt(var_i)),
            ("dc_u", dc_wire_voltage(alice.dc_volt, bob.dc_volt, R_A, R_B), float(sol.u_wire.samples.mean()),
             math.sqrt(var_u)),
        )
        for name, analytic, simulated, scale in checks:
            err = abs(simulated - analytic) / scale
            rows.append((a.value + b.value, name, analytic, simulated, err, err < tolerance))
    return rows


def cmd_validate(cfg: RunConfig, out: str, samples: int = 1_000_000, variance_bias: float = 1.0) -> int:
    exp = cfg.experiment()
    out_dir = _prepare_out(out)
    rows = validate_physics(exp.physics, exp.alice, exp.bob, exp.seed, samples, variance_bias)
    _write_csv(out_dir / "validate.csv", ("state", "quantity", "analytic", "simulated", "rel_error", "ok"), rows)
    for state, name, analytic, simulated, err, ok in rows:
        print(f"{state} {name:5s} analytic={analytic:.6e} simulated={simulated:.6e} "
              f"rel_error={err:.2e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_VALIDATION


def cmd_sweep(cfg: RunConfig, out: str, parameter: str, values, workers: int = 1) -> int:
    exp = cfg.experiment()
    out_dir = _prepare_out(out)
    reports = sweep(exp, parameter, values, workers)
    summaries = [r.summary() for r in reports]
    header = ["parameter", "value"] + list(summaries[0])
    _write_csv(out_dir / "sweep.csv", header,
               [[parameter, v] + list(s.values()) for v, s in zip(values, summaries)])
    for v, r in zip(values, reports):
        print(f"{parameter}={v}: detection_rate={r.detection_rate:.4f} dc_rate={r.dc_rate:.4f} "
              f"eve_accuracy={_fmt(r.eve_accuracy)}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kljnsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults used when omitted)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--trials", type=int, help="override run.trials")
        p.add_argument("--scenario", help=f"override scenario.variant ({', '.join(VARIANTS)})")
        p.add_argument("--workers", type=int, help="override run.workers")
        if name == "validate":
            p.add_argument("--samples", type=int, default=1_000_000, help="samples per state")
        if name == "sweep":
            p.add_argument("--parameter", required=True, choices=SWEEP_PARAMETERS)
            p.add_argument("--values", required=True, help="comma separated values")
    return parser


def _load(args) -> RunConfig:
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
    else:
        text = "{}"
    raw = json.loads(text) if text.strip() else {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a JSON object")
    for flag, section, key in (("seed", "run", "seed"), ("trials", "run", "trials"),
                               ("scenario", "scenario", "variant"), ("workers", "run", "workers")):
        value = getattr(args, flag)
        if value is not None:
            raw.setdefault(section, {})[key] = value
    return parse_config(json.dumps(raw))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except json.JSONDecodeError as exc:
        print(f"config error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    workers = cfg.run.workers
    try:
        if args.command == "run":
            return cmd_run(cfg, args.out, workers)
        if args.command == "validate":
            return cmd_validate(cfg, args.out, args.samples)
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            print(f"config error: --values must be comma separated numbers, got {args.values!r}", file=sys.stderr)
            return EXIT_CONFIG
        return cmd_sweep(cfg, args.out, args.parameter, values, workers)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
