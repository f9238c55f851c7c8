"""Experiment runner and CLI.

Reproduces the structure of the MSE and coded-BER comparisons: sweeps
over velocity, SNR, K-factor, parameter mismatch, data-augmented
estimation, and Eb/N0.  Within one sweep point every estimator sees
identical channel, noise and payload realizations (paired comparison);
channel-matched Wiener filters are rebuilt at each point's true
parameters while mediated and mismatched filters and neural models are
built or loaded once and reused across the sweep.

Seed derivation: the realizations of point ``p`` / frame ``f`` come from
``SeedSequence((master_seed, p, f))``, so reordering sweep points never
changes any other point's draws.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import io
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import channel as chan
from . import coding as cod
from . import estimators as est
from . import nn
from .ofdm import (
    GridSpec,
    apply_channel,
    assemble_frame,
    bits_per_symbol,
    build_pilot_pattern_80211p,
    map_bits,
    snr_to_noise_var,
)

CSV_COLUMNS = (
    "sweep_param", "sweep_value", "estimator", "metric",
    "mean", "stderr", "frames", "seed", "config_digest",
)

MSE_KINDS = ("mse-velocity", "mse-snr", "mse-k", "mse-mismatch", "mse-augmented")
ALL_KINDS = MSE_KINDS + ("ber-snr", "train")

KNOWN_ESTIMATORS = (
    "perfect", "ls",
    "lmmse-2d-matched", "lmmse-2x1d-matched",
    "lmmse-2d-mediated", "lmmse-2x1d-mediated",
    "lmmse-2d-mismatched",
    "rnn", "rnn-augmented",
)

DEFAULT_RANDOMIZED = {
    "velocity_kmh": [0.0, 300.0],
    "snr_db": [5.0, 30.0],
    "rician_k": [0.0, 5.0],
    "nlos_fraction": 0.2,
}

DEFAULT_MEDIATED = {
    "num_realizations": 10000,
    "velocity_kmh": [0.0, 300.0],
    "snr_db": [5.0, 30.0],
    "rician_k": [0.0, 5.0],
}


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""


def _fmt(value: float) -> str:
    """Canonical 9-significant-digit float formatting."""
    return f"{float(value):.9g}"


@dataclass
class SweepRow:
    sweep_param: str
    sweep_value: float
    estimator: str
    metric: str
    mean: float
    stderr: float
    frames: int
    seed: int
    config_digest: str
    wall_time: float = 0.0

    def csv_fields(self) -> list[str]:
        return [
            self.sweep_param, _fmt(self.sweep_value), self.estimator, self.metric,
            _fmt(self.mean), _fmt(self.stderr), str(self.frames), str(self.seed),
            self.config_digest,
        ]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows:
            buf.write(",".join(row.csv_fields()) + "\n")
        return buf.getvalue()

    def result_digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


class ExperimentConfig:
    """Normalized experiment description with a stable digest."""

    def __init__(self, raw: dict):
        self.echo = self._normalize(raw)
        exp = self.echo["experiment"]
        self.kind: str = exp["kind"]
        self.frames_per_point: int = exp["frames_per_point"]
        self.master_seed: int = exp["master_seed"]
        self.grid = GridSpec(**self.echo["grid"])
        ch = dict(self.echo["channel"])
        self.snr_db: float = ch.pop("snr_db")
        self.profile = chan.ChannelProfile.from_dict(ch)
        self.sweep_param: str = self.echo["sweep"]["param"]
        self.sweep_points: list[float] = list(self.echo["sweep"]["points"])
        self.estimators: list[str] = list(self.echo["estimators"]["roster"])
        self.mismatched: dict = self.echo["estimators"]["mismatched"]
        self.model_paths: dict = self.echo["estimators"]["models"]
        self.mediated: dict = self.echo["mediated"]
        self.randomized: dict = self.echo["randomized"]
        self.ber: dict = self.echo["ber"]
        self.train: dict = self.echo["train"]
        self._validate()

    @staticmethod
    def _normalize(raw: dict) -> dict:
        exp = dict(raw.get("experiment", {}))
        kind = exp.get("kind")
        if kind not in ALL_KINDS:
            raise ConfigError(f"experiment.kind must be one of {ALL_KINDS}, got {kind!r}")
        norm = {
            "experiment": {
                "kind": kind,
                "frames_per_point": int(exp.get("frames_per_point", 500)),
                "master_seed": int(exp.get("master_seed", 0)),
            },
            "grid": {
                "n_symbols": int(raw.get("grid", {}).get("n_symbols", 32)),
            },
        }
        ch_raw = dict(raw.get("channel", {}))
        snr_db = float(ch_raw.pop("snr_db", 15.0))
        profile = chan.ChannelProfile.from_dict(ch_raw)
        ch = profile.to_dict()
        ch["snr_db"] = snr_db
        norm["channel"] = ch

        sweep = dict(raw.get("sweep", {}))
        default_param = {
            "mse-velocity": "velocity_kmh", "mse-snr": "snr_db", "mse-k": "rician_k",
            "mse-mismatch": "velocity_kmh", "mse-augmented": "velocity_kmh",
            "ber-snr": "ebn0_db", "train": "none",
        }[kind]
        points = sweep.get("points", raw.get("ber", {}).get("ebn0_db_points"))
        if kind == "train":
            points = points or [0.0]
        if kind == "ber-snr" and points is None:
            points = [2.0, 4.0, 6.0, 8.0, 10.0]
        if points is None or len(points) == 0:
            raise ConfigError("sweep.points must be a non-empty list")
        norm["sweep"] = {
            "param": sweep.get("param", default_param),
            "points": [float(p) for p in points],
        }

        estimators = dict(raw.get("estimators", {}))
        norm["estimators"] = {
            "roster": list(estimators.get("roster", [])),
            "mismatched": dict(estimators.get("mismatched", {})) or {
                "velocity_kmh": ch["velocity_kmh"],
                "snr_db": snr_db,
                "rician_k": ch["rician_k"],
            },
            "models": dict(estimators.get("models", {})),
        }
        norm["mediated"] = {**DEFAULT_MEDIATED, **dict(raw.get("mediated", {}))}
        norm["randomized"] = {**DEFAULT_RANDOMIZED, **dict(raw.get("randomized", {}))}
        ber = dict(raw.get("ber", {}))
        norm["ber"] = {
            "modulations": list(ber.get("modulations", ["qpsk"])),
            "info_bits_per_point": int(ber.get("info_bits_per_point", 200000)),
            "paired": bool(ber.get("paired", True)),
        }
        norm["train"] = dict(raw.get("train", {}))
        return norm

    def _validate(self) -> None:
        if self.kind == "train":
            return
        if not self.estimators:
            raise ConfigError("estimators.roster must not be empty")
        for name in self.estimators:
            if name not in KNOWN_ESTIMATORS:
                raise ConfigError(
                    f"unknown estimator {name!r}; known: {', '.join(KNOWN_ESTIMATORS)}"
                )
        randomized_kinds = ("mse-augmented", "ber-snr")
        if self.kind in randomized_kinds:
            for name in self.estimators:
                if name.endswith("-matched"):
                    raise ConfigError(
                        f"{name} needs fixed per-point parameters and cannot run in "
                        f"a {self.kind} experiment with per-frame random parameters"
                    )
        if self.frames_per_point < 1:
            raise ConfigError("frames_per_point must be positive")
        if self.kind == "ber-snr" and not self.ber["modulations"]:
            raise ConfigError("ber.modulations must not be empty")

    def check_model_paths(self) -> None:
        import os

        for name in self.estimators:
            if name in ("rnn", "rnn-augmented"):
                key = "rnn" if name == "rnn" else "rnn_augmented"
                path = self.model_paths.get(key)
                if not path:
                    raise ConfigError(f"estimator {name!r} needs estimators.models.{key}")
                if not os.path.exists(path):
                    raise ConfigError(f"model file not found: {path}")

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}")
        return cls(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return cls(raw)

    def digest(self) -> str:
        payload = json.dumps(self.echo, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class _PointScenario:
    """Per-point truth; None fields are drawn per frame from ``randomized``."""

    velocity_mps: float | None
    rician_k: float | None
    snr_db: float | None


def _resolve_scenario(config: ExperimentConfig, point: float) -> _PointScenario:
    fixed = _PointScenario(
        velocity_mps=config.profile.velocity,
        rician_k=config.profile.rician_k,
        snr_db=config.snr_db,
    )
    param = config.sweep_param
    if config.kind == "mse-augmented":
        fixed.rician_k = None
        fixed.snr_db = None
    if param == "velocity_kmh":
        fixed.velocity_mps = chan.kmh_to_mps(point)
    elif param == "snr_db":
        fixed.snr_db = point
    elif param == "rician_k":
        fixed.rician_k = point
    elif param == "ebn0_db":
        pass
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    return fixed


def _draw_frame_params(
    scenario: _PointScenario, randomized: dict, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Fixed draw order: velocity, K, SNR."""
    v = scenario.velocity_mps
    if v is None:
        lo, hi = randomized["velocity_kmh"]
        v = chan.kmh_to_mps(rng.uniform(lo, hi))
    k = scenario.rician_k
    if k is None:
        if rng.random() < randomized["nlos_fraction"]:
            k = 0.0
        else:
            k = rng.uniform(*randomized["rician_k"])
    snr = scenario.snr_db
    if snr is None:
        snr = rng.uniform(*randomized["snr_db"])
    return v, k, snr


class _SharedEstimators:
    """Estimators built or loaded once and reused across all sweep points."""

    def __init__(self, config: ExperimentConfig, spec: GridSpec, pattern):
        self.config = config
        roster = config.estimators
        self.models: dict[str, nn.RnnEstimatorModel] = {}
        self.filters: dict[str, object] = {}

        if "rnn" in roster:
            model = nn.load_model(config.model_paths["rnn"])
            if model.augmented:
                raise ConfigError("estimators.models.rnn points at a data-augmented model")
            self.models["rnn"] = model
        if "rnn-augmented" in roster:
            model = nn.load_model(config.model_paths["rnn_augmented"])
            if not model.augmented:
                raise ConfigError(
                    "estimators.models.rnn_augmented points at a non-augmented model"
                )
            self.models["rnn-augmented"] = model

        needs_mediated = any(name.endswith("-mediated") for name in roster)
        if needs_mediated:
            med = config.mediated
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=config.master_seed, spawn_key=(901,))
            )
            acf, assumed_noise = est.mediated_covariance(
                spec,
                tuple(chan.kmh_to_mps(v) for v in med["velocity_kmh"]),
                tuple(med["snr_db"]),
                tuple(med["rician_k"]),
                int(med["num_realizations"]),
                rng,
                profile_template=config.profile,
            )
            if "lmmse-2d-mediated" in roster:
                cov = est.build_covariance(acf)
                self.filters["lmmse-2d-mediated"] = est.build_2d_lmmse(
                    cov, pattern.flat_indices, assumed_noise,
                    (spec.n_symbols, spec.n_used), provenance=acf.provenance,
                )
            if "lmmse-2x1d-mediated" in roster:
                self.filters["lmmse-2x1d-mediated"] = est.build_2x1d_lmmse(
                    acf.temporal, acf.spectral, pattern, assumed_noise,
                    provenance=acf.provenance,
                )

        if "lmmse-2d-mismatched" in roster:
            mis = config.mismatched
            profile = config.profile.replace(
                velocity=chan.kmh_to_mps(mis["velocity_kmh"]),
                rician_k=mis["rician_k"],
            )
            acf = est.analytic_acf(profile, spec)
            cov = est.build_covariance(acf)
            self.filters["lmmse-2d-mismatched"] = est.build_2d_lmmse(
                cov, pattern.flat_indices, snr_to_noise_var(mis["snr_db"]),
                (spec.n_symbols, spec.n_used),
                provenance={"kind": "mismatched", **mis},
            )


def _build_roster(
    config: ExperimentConfig,
    spec: GridSpec,
    pattern,
    shared: _SharedEstimators,
    scenario: _PointScenario,
) -> dict:
    """Estimator callables (y, pattern, h_true, noise_var) -> h_hat."""
    fns = {}
    matched_acf = None
    if any(name.endswith("-matched") for name in config.estimators):
        if scenario.velocity_mps is None or scenario.rician_k is None or scenario.snr_db is None:
            raise ConfigError("matched filters need fixed per-point parameters")
        profile = config.profile.replace(
            velocity=scenario.velocity_mps, rician_k=scenario.rician_k
        )
        matched_acf = est.analytic_acf(profile, spec)
        point_noise = snr_to_noise_var(scenario.snr_db)

    for name in config.estimators:
        if name == "perfect":
            fns[name] = lambda y, pat, h, nv: h
        elif name == "ls":
            def ls_fn(y, pat, h, nv):
                h_p = est.ls_pilot_estimate(y[pat.mask], pat.pilot_values)
                return est.ls_interpolate(h_p, pat)
            fns[name] = ls_fn
        elif name == "lmmse-2d-matched":
            cov = est.build_covariance(matched_acf)
            filt = est.build_2d_lmmse(
                cov, pattern.flat_indices, point_noise,
                (spec.n_symbols, spec.n_used), provenance=matched_acf.provenance,
            )
            def lmmse2d_fn(y, pat, h, nv, _filt=filt):
                h_p = est.ls_pilot_estimate(y[pat.mask], pat.pilot_values)
                return est.apply_lmmse(_filt, h_p)
            fns[name] = lmmse2d_fn
        elif name == "lmmse-2x1d-matched":
            filt = est.build_2x1d_lmmse(
                matched_acf.temporal, matched_acf.spectral, pattern, point_noise,
                provenance=matched_acf.provenance,
            )
            def lmmse21_fn(y, pat, h, nv, _filt=filt):
                h_p = est.ls_pilot_estimate(y[pat.mask], pat.pilot_values)
                return est.apply_2x1d(_filt, h_p)
            fns[name] = lmmse21_fn
        elif name in ("lmmse-2d-mediated", "lmmse-2d-mismatched"):
            filt = shared.filters[name]
            def lmmse2d_shared_fn(y, pat, h, nv, _filt=filt):
                h_p = est.ls_pilot_estimate(y[pat.mask], pat.pilot_values)
                return est.apply_lmmse(_filt, h_p)
            fns[name] = lmmse2d_shared_fn
        elif name == "lmmse-2x1d-mediated":
            filt = shared.filters[name]
            def lmmse21_shared_fn(y, pat, h, nv, _filt=filt):
                h_p = est.ls_pilot_estimate(y[pat.mask], pat.pilot_values)
                return est.apply_2x1d(_filt, h_p)
            fns[name] = lmmse21_shared_fn
        elif name in ("rnn", "rnn-augmented"):
            model = shared.models[name]
            def rnn_fn(y, pat, h, nv, _model=model):
                return nn.estimate(_model, y, pat, spec)
            fns[name] = rnn_fn
        else:
            raise ConfigError(f"unknown estimator {name!r}")
    return fns


def _run_frames(n_frames: int, frame_fn, threads: int) -> None:
    if threads <= 1:
        for fi in range(n_frames):
            frame_fn(fi)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(frame_fn, range(n_frames)))


def run_sweep(config: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Run an MSE sweep experiment; see the module docstring for pairing."""
    if config.kind not in MSE_KINDS:
        raise ConfigError(f"run_sweep cannot run kind {config.kind!r}")
    config.check_model_paths()
    spec = config.grid
    config.profile.validate_against(spec)
    pattern0 = build_pilot_pattern_80211p(spec)
    shared = _SharedEstimators(config, spec, pattern0)
    digest = config.digest()
    modulation = "qpsk"
    m_bits = bits_per_symbol(modulation)
    n_data = spec.n_cells - pattern0.n_pilots

    rows: list[SweepRow] = []
    point_digests = {}
    for pi, point in enumerate(config.sweep_points):
        scenario = _resolve_scenario(config, point)
        roster = _build_roster(config, spec, pattern0, shared, scenario)
        names = list(roster)
        n_frames = config.frames_per_point
        mse_acc = {name: np.empty(n_frames) for name in names}
        wall_acc = {name: np.zeros(n_frames) for name in names}
        frame_digests = [b""] * n_frames

        def frame_fn(fi, _pi=pi, _scenario=scenario, _roster=roster,
                     _mse=mse_acc, _wall=wall_acc, _digests=frame_digests):
            rng = np.random.default_rng(
                np.random.SeedSequence((config.master_seed, _pi, fi))
            )
            v, k, snr = _draw_frame_params(_scenario, config.randomized, rng)
            profile = config.profile.replace(velocity=v, rician_k=k)
            noise_var = snr_to_noise_var(snr)
            pattern = build_pilot_pattern_80211p(spec, frame_index=fi)
            gains = chan.sample_tap_gains(profile, spec.n_symbols, spec.symbol_duration, rng)
            h = chan.taps_to_frequency_response(
                gains, profile.tap_delays, spec.n_used, spec.subcarrier_spacing
            )
            bits = rng.integers(0, 2, size=n_data * m_bits)
            x = assemble_frame(map_bits(bits, modulation), pattern, spec)
            y = apply_channel(x, h, noise_var, rng)
            sha = hashlib.sha256()
            for arr in (h, x, y):
                sha.update(np.ascontiguousarray(arr).tobytes())
            _digests[fi] = sha.digest()
            for name, fn in _roster.items():
                t0 = time.perf_counter()
                h_hat = fn(y, pattern, h, noise_var)
                _wall[name][fi] = time.perf_counter() - t0
                _mse[name][fi] = est.mse(h_hat, h)

        _run_frames(n_frames, frame_fn, threads)
        sha = hashlib.sha256()
        for d in frame_digests:
            sha.update(d)
        point_digests[_fmt(point)] = sha.hexdigest()[:16]
        for name in names:
            samples = mse_acc[name]
            stderr = float(samples.std(ddof=1) / np.sqrt(n_frames)) if n_frames > 1 else 0.0
            rows.append(SweepRow(
                sweep_param=config.sweep_param,
                sweep_value=point,
                estimator=name,
                metric="mse",
                mean=float(samples.mean()),
                stderr=stderr,
                frames=n_frames,
                seed=config.master_seed,
                config_digest=digest,
                wall_time=float(wall_acc[name].sum()),
            ))

    result = SweepResult(rows=rows, metadata={
        "config": config.echo,
        "config_digest": digest,
        "code_version": __version__,
        "realization_digests": point_digests,
    })
    result.metadata["result_digest"] = result.result_digest()
    return result


def run_ber_sweep(config: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Run the coded BER sweep over Eb/N0 points."""
    if config.kind != "ber-snr":
        raise ConfigError(f"run_ber_sweep cannot run kind {config.kind!r}")
    config.check_model_paths()
    spec = config.grid
    config.profile.validate_against(spec)
    pattern0 = build_pilot_pattern_80211p(spec)
    shared = _SharedEstimators(config, spec, pattern0)
    scenario = _PointScenario(velocity_mps=None, rician_k=None, snr_db=0.0)
    roster = _build_roster(config, spec, pattern0, shared, scenario)
    code = cod.LdpcCode()
    digest = config.digest()
    n_data = spec.n_cells - pattern0.n_pilots
    rho = n_data / spec.n_cells
    info_bits = config.ber["info_bits_per_point"]
    rate = code.k / code.n
    randomized = config.randomized

    def profile_sampler(rng):
        v, k, _ = _draw_frame_params(
            _PointScenario(None, None, 0.0), randomized, rng
        )
        return config.profile.replace(velocity=v, rician_k=k)

    rows: list[SweepRow] = []
    for pi, ebn0 in enumerate(config.sweep_points):
        for mi, modulation in enumerate(config.ber["modulations"]):
            m_bits = bits_per_symbol(modulation)
            snr_db = cod.ebn0_to_snr_db(ebn0, rate, m_bits, rho)
            noise_var = snr_to_noise_var(snr_db)
            seed = (config.master_seed, pi) if config.ber["paired"] else (
                config.master_seed, pi, 7000 + mi
            )
            for name in config.estimators:
                fn = roster[name]
                t0 = time.perf_counter()
                errors, total = cod.run_coded_link(
                    code, spec, profile_sampler, noise_var, modulation, fn,
                    info_bits, seed,
                )
                wall = time.perf_counter() - t0
                ber = errors / total
                stderr = float(np.sqrt(max(ber * (1.0 - ber), 1e-12) / total))
                rows.append(SweepRow(
                    sweep_param="ebn0_db",
                    sweep_value=ebn0,
                    estimator=f"{name}@{modulation}",
                    metric="ber",
                    mean=ber,
                    stderr=stderr,
                    frames=total,
                    seed=config.master_seed,
                    config_digest=digest,
                    wall_time=wall,
                ))

    result = SweepResult(rows=rows, metadata={
        "config": config.echo,
        "config_digest": digest,
        "code_version": __version__,
    })
    result.metadata["result_digest"] = result.result_digest()
    return result


def emit(result: SweepResult, fmt: str, path) -> None:
    """Write a result as CSV (pinned schema) or JSON (schema + config echo)."""
    if not result.rows:
        raise ConfigError("refusing to emit an empty result")
    if fmt == "csv":
        payload = result.to_csv()
    elif fmt == "json":
        payload = json.dumps({
            "schema": list(CSV_COLUMNS),
            "rows": [dict(zip(CSV_COLUMNS, row.csv_fields())) for row in result.rows],
            "metadata": result.metadata,
        }, indent=2, sort_keys=True) + "\n"
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IOError(f"cannot write result to {path}: {exc}") from exc


def load_result_csv(path) -> SweepResult:
    """Parse an emitted CSV back into rows (round-trip safe)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    if header != list(CSV_COLUMNS):
        raise ConfigError(f"unexpected CSV header in {path}")
    rows = []
    for line in lines[1:]:
        f = line.split(",")
        rows.append(SweepRow(
            sweep_param=f[0], sweep_value=float(f[1]), estimator=f[2], metric=f[3],
            mean=float(f[4]), stderr=float(f[5]), frames=int(f[6]), seed=int(f[7]),
            config_digest=f[8],
        ))
    return SweepResult(rows=rows)


def rerun_from_json(path, threads: int = 1) -> SweepResult:
    """Re-run the experiment recorded in a JSON result's config echo."""
    with open(path) as fh:
        payload = json.load(fh)
    config = ExperimentConfig.from_dict(payload["metadata"]["config"])
    if config.kind == "ber-snr":
        return run_ber_sweep(config, threads=threads)
    return run_sweep(config, threads=threads)


def _train_from_config(config: ExperimentConfig, out_path, progress: bool = True):
    t = config.train
    if not t:
        raise ConfigError("train experiments need a [train] table")
    vr = t.get("velocity_kmh", [0.0, 300.0])
    recipe = nn.TrainingConfig(
        epochs=int(t.get("epochs", 100)),
        iterations_per_epoch=int(t.get("iterations_per_epoch", 1000)),
        batch_size=int(t.get("batch_size", 200)),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        velocity_range=(chan.kmh_to_mps(vr[0]), chan.kmh_to_mps(vr[1])),
        snr_db_range=tuple(t.get("snr_db", [5.0, 30.0])),
        k_range=tuple(t.get("k_factor", [0.0, 5.0])),
        nlos_fraction=float(t.get("nlos_fraction", 0.5)),
        optimizer=t.get("optimizer", "adam"),
        seed=config.master_seed,
        hidden_size=int(t.get("hidden_size", 64)),
        augmented=bool(t.get("augmented", False)),
        modulation=t.get("modulation", "qpsk"),
    )
    model = nn.train(recipe, spec=config.grid, profile_template=config.profile,
                     progress=progress)
    out = out_path or t.get("out")
    if not out:
        raise ConfigError("no output path: set train.out or pass --out")
    nn.save_model(model, out)
    return model, out


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=False, help="TOML experiment config")
    sub.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub.add_argument("--out", default=None, help="output path")
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--deterministic", action="store_true",
                     help="force serial single-threaded execution")


def _load_config(args, expect_kinds) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    config = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        echo = json.loads(json.dumps(config.echo))
        echo["experiment"]["master_seed"] = args.seed
        config = ExperimentConfig.from_dict(echo)
    if config.kind not in expect_kinds:
        raise ConfigError(
            f"this command expects kinds {expect_kinds}, config has {config.kind!r}"
        )
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chestsim",
        description="OFDM channel-estimation MSE and coded-BER experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a recurrent estimator from a config file"),
        ("sweep", "run an MSE sweep experiment"),
        ("ber", "run a coded BER sweep"),
        ("make-mediated", "precompute a mediated autocorrelation model"),
    ):
        _add_common_flags(sub.add_parser(name, help=help_text))
    inspect = sub.add_parser("inspect-model", help="print model metadata")
    inspect.add_argument("model", help="model file")

    args = parser.parse_args(argv)
    try:
        if args.command == "inspect-model":
            meta = nn.inspect_model(args.model)
            arch = meta["architecture"]
            print(f"hidden_size: {arch['hidden_size']}")
            print(f"in_channels: {arch['in_channels']}")
            print(f"augmented: {arch['augmented']}")
            print(f"axis_order: {' -> '.join(arch['axis_order'])}")
            prov = meta.get("provenance", {})
            if prov:
                print(f"final_loss: {prov.get('final_loss')}")
                print(f"iterations: {prov.get('iterations')}")
                print(f"config_digest: {prov.get('config_digest')}")
            return 0

        threads = 1 if args.deterministic else max(1, args.threads)
        if args.command == "train":
            config = _load_config(args, ("train",))
            _, out = _train_from_config(config, args.out)
            print(f"model written to {out}")
            return 0
        if args.command == "sweep":
            config = _load_config(args, MSE_KINDS)
            result = run_sweep(config, threads=threads)
        elif args.command == "ber":
            config = _load_config(args, ("ber-snr",))
            result = run_ber_sweep(config, threads=threads)
        elif args.command == "make-mediated":
            config = _load_config(args, MSE_KINDS + ("ber-snr",))
            med = config.mediated
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=config.master_seed, spawn_key=(901,))
            )
            acf, assumed_noise = est.mediated_covariance(
                config.grid,
                tuple(chan.kmh_to_mps(v) for v in med["velocity_kmh"]),
                tuple(med["snr_db"]),
                tuple(med["rician_k"]),
                int(med["num_realizations"]),
                rng,
                profile_template=config.profile,
            )
            if not args.out:
                raise ConfigError("make-mediated needs --out")
            acf.save(args.out)
            print(f"mediated ACF written to {args.out} "
                  f"(assumed noise variance {assumed_noise:.6g})")
            return 0
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")

        if args.out:
            emit(result, args.format, args.out)
            print(f"result written to {args.out} (digest {result.result_digest()[:16]})")
        else:
            sys.stdout.write(result.to_csv())
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
