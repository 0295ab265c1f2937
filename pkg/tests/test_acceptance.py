"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained encoders are expensive, so they are cached per (alpha, seed) and
shared by the trade-off, ablation, adversary and attack criteria.  Each line
reports the criterion's own runtime and, separately, the time it spent
training shared encoders.  Run just this file with ``pytest -m slow -s``.
"""
import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from bdq import cli
from bdq import encoder as E
from bdq import harness as H
from bdq.events import THRESHOLDS, event_sweep
from bdq.nn.tensor import Tensor
from bdq.synth import SynthConfig, generate
from bdq.trainer import TrainConfig, identity_transform, validate_frozen, validate_transform
from helpers import ACCEPTANCE_LINES, numeric_grad, rel_error

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
ALPHAS = (0.0, 1.0, 2.0, 8.0)
TRAINED_ALPHA = 2.0


class Shared:
    """Lazily trained encoders and raw baselines on the default dataset."""

    def __init__(self):
        self.seconds = 0.0
        self._ds = None
        self._cells = {}
        self._raw = {}

    @contextmanager
    def _clock(self):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds += time.perf_counter() - t0

    @property
    def dataset(self):
        if self._ds is None:
            with self._clock():
                self._ds = generate(SynthConfig())
        return self._ds

    def cell(self, alpha, seed) -> H.SweepCell:
        key = (float(alpha), seed)
        if key not in self._cells:
            ds = self.dataset
            with self._clock():
                self._cells[key] = H.alpha_cell(ds, TrainConfig(alpha=float(alpha), seed=seed))
        return self._cells[key]

    def raw(self, seed) -> H.TradeoffRow:
        if seed not in self._raw:
            ds = self.dataset
            with self._clock():
                self._raw[seed] = H.raw_baseline(ds, TrainConfig(seed=seed))
        return self._raw[seed]


SHARED = Shared()


class Criterion:
    def __init__(self, number, name, budget_s):
        self.number, self.name, self.budget = number, name, budget_s

    def __enter__(self):
        self.t0 = time.perf_counter()
        self.shared0 = SHARED.seconds
        return self

    def __exit__(self, *exc):
        return False

    def finish(self, ok: bool, detail: str):
        """Record and print the line; the runtime budget is part of the verdict."""
        total = time.perf_counter() - self.t0
        shared = SHARED.seconds - self.shared0
        own = total - shared
        in_budget = own < self.budget
        passed = ok and in_budget
        line = (f"[{'PASS' if passed else 'FAIL'}] criterion {self.number} {self.name}: {detail}; "
                f"runtime {own:.0f}s (budget {self.budget:.0f}s{'' if in_budget else ', EXCEEDED'})"
                f" + shared training {shared:.0f}s")
        ACCEPTANCE_LINES.append(line)
        print("\n" + line, flush=True)
        assert ok, line
        assert in_budget, line


def mean(values):
    return float(np.mean(list(values)))


def non_increasing(values, tol):
    return all(b <= a + tol for a, b in zip(values, values[1:]))


def fmt(values):
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


# ---------------------------------------------------------------------------
# 1-3: encoder properties
# ---------------------------------------------------------------------------

def test_c1_gradient_correctness():
    with Criterion(1, "encoder gradients vs central differences", 60) as c:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(20):
            t, h, w = rng.integers(2, 5), rng.integers(5, 9), rng.integers(5, 9)
            x = rng.random((1, 1, t, h, w))
            sigma = np.array(rng.uniform(0.4, 3.0))
            b = np.sort(E.default_boundaries(np.float64) + rng.normal(0, 0.3, E.NUM_BOUNDARIES))
            weights = rng.normal(size=(1, 1, t - 1, h, w))

            def loss():
                return float((E.encode_tensor(Tensor(x), Tensor(sigma), Tensor(b), E.DEFAULT_HARDNESS).data
                              * weights).sum())

            xt, st, bt = (Tensor(a.copy(), requires_grad=True) for a in (x, sigma, b))
            out = E.encode_tensor(xt, st, bt, E.DEFAULT_HARDNESS)
            (out * Tensor(weights)).sum().backward()
            for analytic, arr in ((xt.grad, x), (st.grad, sigma), (bt.grad, b)):
                worst = max(worst, rel_error(analytic, numeric_grad(loss, arr)))
        c.finish(worst < 1e-5, f"worst relative error {worst:.2e} over 20 fp64 configs (< 1e-5)")


def test_c2_quantizer_oracle():
    with Criterion(2, "soft quantizer at H=100 matches hard", 30) as c:
        b = E.default_boundaries(np.float64)
        grid = np.linspace(0.0, 15.0, 1500)
        keep = np.abs(grid[:, None] - b).min(axis=1) > 0.1
        xs = grid[keep]
        soft = E.quantize_soft(Tensor(xs), Tensor(b), 100.0).data
        hard = E.quantize_hard(xs, b)
        err = float(np.abs(soft - hard).max())
        at_72 = int(E.quantize_hard(np.array(7.2), b))
        c.finish(err < 0.01 and at_72 == 7,
                 f"max |soft-hard| {err:.2e} on {keep.sum()} grid points (< 0.01); hard(7.2) = {at_72}")


def test_c3_kernel_properties():
    with Criterion(3, "Gaussian kernel and blur", 30) as c:
        sums, symmetric = [], True
        for s in (0.3, 0.5, 1.0, 2.0, 5.0):
            k = E.gaussian_kernel(s).data
            sums.append(abs(k.sum() - 1.0))
            symmetric &= bool(np.array_equal(k, k[::-1]) and np.array_equal(k, k[:, ::-1])
                              and np.array_equal(k, k.T))
        frame = np.full((1, 1, 3, 9, 11), 0.37)
        exact = all(np.array_equal(E.blur(Tensor(frame), s).data, frame) for s in (0.3, 1.0, 5.0))
        worst = max(sums)
        c.finish(worst < 1e-12 and symmetric and exact,
                 f"max |sum-1| {worst:.1e}, symmetric {symmetric}, constant frames exact {exact}")


# ---------------------------------------------------------------------------
# synthetic-data oracles
# ---------------------------------------------------------------------------

def test_oracle_identity_and_motion_signals():
    with Criterion("O", "raw identity and temporal action signals", 30 * 60) as c:
        ds = SHARED.dataset
        raw = SHARED.raw(0)
        shuffled = validate_transform(ds, H.shuffle_transform(0), TrainConfig(seed=0), privacy=False)
        chance = 1.0 / ds.num_actions
        ok = raw.privacy_acc > 0.95 and raw.action_acc > 0.90 and shuffled.action_acc < raw.action_acc - 0.25
        c.finish(ok, f"raw privacy {raw.privacy_acc:.3f} (> 0.95), raw action {raw.action_acc:.3f} (> 0.90), "
                     f"frame-shuffled action {shuffled.action_acc:.3f} (chance {chance:.3f})")


# ---------------------------------------------------------------------------
# 4: static scenes
# ---------------------------------------------------------------------------

def test_c4_static_limitation():
    with Criterion(4, "static dataset privacy near chance", 10 * 60) as c:
        ds = generate(SynthConfig(static=True))
        res = validate_transform(ds, H.encoder_transform(E.EncoderParams.default(), E.FULL),
                                 TrainConfig(seed=0), action=False)
        chance = 1.0 / ds.num_identities
        c.finish(abs(res.privacy_acc - chance) <= 0.05,
                 f"privacy {res.privacy_acc:.3f} vs chance {chance:.3f} (within 0.05)")


# ---------------------------------------------------------------------------
# 5-8: trained encoders
# ---------------------------------------------------------------------------

def test_c5_alpha_tradeoff():
    with Criterion(5, "alpha trade-off trend", 2 * 3600) as c:
        c.shared0 = SHARED.seconds  # this criterion owns the shared training time
        priv, act = [], []
        for a in ALPHAS:
            cells = [SHARED.cell(a, s) for s in SEEDS]
            priv.append(mean(x.row.privacy_acc for x in cells))
            act.append(mean(x.row.action_acc for x in cells))
        raw_p = mean(SHARED.raw(s).privacy_acc for s in SEEDS)
        raw_a = mean(SHARED.raw(s).action_acc for s in SEEDS)
        i0, i2 = ALPHAS.index(0.0), ALPHAS.index(TRAINED_ALPHA)
        trend = non_increasing(priv, 0.03)
        ok = (trend and abs(priv[i0] - raw_p) <= 0.05 and priv[i2] <= raw_p - 0.25
              and act[i2] >= raw_a - 0.15)
        c.finish(ok, f"alphas {list(ALPHAS)} privacy {fmt(priv)} action {fmt(act)}; raw privacy {raw_p:.3f} "
                     f"action {raw_a:.3f}; non-increasing (tol 0.03) {trend}")


def test_c6_ablation_ordering():
    with Criterion(6, "ablation ordering", 3600) as c:
        ds = SHARED.dataset
        masks = {m: E.ModuleMask.parse(m) for m in ("d", "q", "b", "dq")}
        priv = {k: [] for k in ("bdq", *masks)}
        act = {k: [] for k in ("bdq", *masks)}
        for seed in SEEDS:
            cell = SHARED.cell(TRAINED_ALPHA, seed)
            priv["bdq"].append(cell.row.privacy_acc)
            act["bdq"].append(cell.row.action_acc)
            for name, mask in masks.items():
                row = H.validate_encoder(cell.encoder, ds, TrainConfig(seed=seed), mask)
                priv[name].append(row.privacy_acc)
                act[name].append(row.action_acc)
        p = {k: mean(v) for k, v in priv.items()}
        a = {k: mean(v) for k, v in act.items()}
        order = p["bdq"] <= p["dq"] + 0.02 and p["dq"] <= p["d"] + 0.02
        d_best = a["d"] >= max(a["b"], a["q"])
        c.finish(order and d_best,
                 "privacy " + ", ".join(f"{k} {v:.3f}" for k, v in p.items())
                 + "; action " + ", ".join(f"{k} {v:.3f}" for k, v in a.items())
                 + f"; ordering (tol 0.02) {order}; D best single-module action {d_best}")


def test_c7_adversary_transfer():
    with Criterion(7, "held-out adversaries", 3600) as c:
        ds = SHARED.dataset
        specs = H.adversary_specs(ds.num_identities)
        gaps = {s.name: [] for s in specs}
        for seed in SEEDS:
            enc = SHARED.cell(TRAINED_ALPHA, seed).encoder
            for r in H.multi_adversary_probe(enc, ds, specs, TrainConfig(seed=seed)):
                gaps[r.adversary].append(r.gap)
        means = {k: mean(v) for k, v in gaps.items()}
        ok = all(v >= 0.20 for v in means.values())
        c.finish(ok, "mean raw-minus-encoded privacy gap "
                 + ", ".join(f"{k} {v:.3f} {fmt(gaps[k])}" for k, v in means.items()) + " (each >= 0.20)")


def test_c8_reconstruction_attack():
    with Criterion(8, "reconstruction attack", 3600) as c:
        ds = SHARED.dataset
        results = []
        for seed in SEEDS:
            trained = SHARED.cell(TRAINED_ALPHA, seed).encoder
            reference = SHARED.cell(0.0, seed).encoder
            results.append(H.reconstruction_attack(trained, ds, TrainConfig(seed=seed),
                                                   H.AttackConfig(seed=seed), reference=reference))
        gap = mean(r.gap for r in results)
        ok = gap >= 2.0
        c.finish(ok, f"PSNR alpha=0 {fmt([r.psnr_reference for r in results])} dB, alpha={TRAINED_ALPHA:g} "
                     f"{fmt([r.psnr_trained for r in results])} dB; mean gap {gap:.2f} dB (>= 2)")


# ---------------------------------------------------------------------------
# 9: event camera
# ---------------------------------------------------------------------------

def test_c9_event_threshold_trend():
    with Criterion(9, "event threshold trend", 3600) as c:
        ds = SHARED.dataset
        rows = [event_sweep(ds, THRESHOLDS, TrainConfig(seed=s)) for s in SEEDS]
        act = [mean(r[i]["action_acc"] for r in rows) for i in range(len(THRESHOLDS))]
        priv = [mean(r[i]["privacy_acc"] for r in rows) for i in range(len(THRESHOLDS))]
        ok = non_increasing(act, 0.02) and non_increasing(priv, 0.02)
        c.finish(ok, f"thresholds {list(THRESHOLDS)} action {fmt(act)} privacy {fmt(priv)} "
                     "(non-increasing, tol 0.02)")


# ---------------------------------------------------------------------------
# 10: determinism
# ---------------------------------------------------------------------------

SMALL = ["--actions", "2", "--identities", "2", "--clips-per-pair", "4", "--frames", "5"]
FAST = ["--seed", "5", "--epochs", "1", "--t", "5"]


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism(tmp_path, capsys):
    with Criterion(10, "bit-identical reruns", 30 * 60) as c:
        data = tmp_path / "data"
        enc = tmp_path / "train" / "encoder.bdqp"
        clip = data / "clips" / "a00_p00_r000.bdqv"
        commands = {
            "synth": ["synth", "--out", data, "--seed", "7", *SMALL],
            "train": ["train", "--data", data, "--out", tmp_path / "train", "--alpha", "2", *FAST],
            "encode": ["encode", "--params", enc, "--in", clip, "--out", tmp_path / "enc" / "c.bdqv"],
            "validate": ["validate", "--data", data, "--out", tmp_path / "validate", "--params", enc, *FAST],
            "ablate": ["ablate", "--data", data, "--out", tmp_path / "ablate", "--params", enc, *FAST],
            "alpha-sweep": ["alpha-sweep", "--data", data, "--out", tmp_path / "sweep", "--alphas", "0,2",
                            *FAST],
            "adversaries": ["adversaries", "--data", data, "--out", tmp_path / "adv", "--params", enc, *FAST],
            "attack": ["attack", "--data", data, "--out", tmp_path / "attack", "--params", enc, "--seed", "5",
                       "--attack-epochs", "1", "--attack-frames", "3"],
            "events": ["events", "--data", data, "--out", tmp_path / "events", "--thresholds", "0.4,1.2",
                       *FAST],
            "downsample": ["downsample", "--data", data, "--out", tmp_path / "down", "--sizes", "8,4", *FAST],
            "report": ["report", "--rows", tmp_path / "validate" / "summary.csv", "--out", tmp_path / "report"],
        }
        differing, failed = [], []
        for name, argv in commands.items():
            out = tmp_path / ("enc" if name == "encode" else argv[argv.index("--out") + 1].name)
            snapshots = []
            for _ in range(2):
                code = cli.run([str(a) for a in argv])
                capsys.readouterr()
                if code != 0:
                    failed.append(name)
                snapshots.append(_tree(out))
            if snapshots[0] != snapshots[1] or not snapshots[0]:
                differing.append(name)
        ok = not differing and not failed
        c.finish(ok, f"{len(commands)} subcommands rerun twice; failed {failed or 'none'}, "
                     f"non-identical outputs {differing or 'none'}")
