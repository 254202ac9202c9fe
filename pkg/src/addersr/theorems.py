"""Empirical checks of the two adder-filter impossibility results.

* Identity: a bare adder layer only produces non-positive values, so it
  cannot reproduce a positive input; shifting a positive input by +1 moves
  every output by -d^2 c instead of +1.
* High-pass: the response of an adder filter to a constant image s*E is
  affine in s with slope -d^2 c, so it can never be a constant, whereas a
  zero-sum convolution kernel cancels flat areas exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .layers import AdderLayerParams, adder_correlate, conv2d, self_shortcut_block
from .metrics import psnr
from .models import build_tiny_vdsr
from .tensor import Tape, Tensor
from .training import Adam, ParamGroup, TrainConfig, build_dataset, evaluate_psnr, loss, train

SLOPE_TOL = 1e-9
PLATEAU_REL_ERROR = 0.5
SHORTCUT_TOL = 1e-6
HIGH_PASS_2X2 = np.array([[-1.0, 1.0], [1.0, -1.0]])


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def trial_seeds(root: int, n: int) -> list[int]:
    out, state = [], root
    for _ in range(n):
        state = splitmix64(state)
        out.append(state)
    return out


@dataclass
class TheoremReport:
    theorem: str
    params: dict
    measurements: dict = field(default_factory=dict)

    @property
    def checks(self) -> dict[str, bool]:
        return _JUDGES[self.theorem](self.measurements)

    @property
    def verdict(self) -> str:
        return "pass" if all(self.checks.values()) else "fail"

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "params": self.params,
                "measurements": self.measurements, "checks": self.checks,
                "verdict": self.verdict}

    def format(self) -> str:
        lines = [f"[{self.verdict.upper()}] {self.theorem}  {json.dumps(self.params)}"]
        for k, v in self.measurements.items():
            lines.append(f"    {k}: {v}")
        for k, ok in self.checks.items():
            lines.append(f"    check {k}: {'ok' if ok else 'VIOLATED'}")
        return "\n".join(lines)


def _judge_identity(m):
    return {
        "outputs_nonpositive": m["positive_outputs"] == 0,
        "residual_at_least_min_input": m["min_residual_margin"] >= 0.0,
        "shift_slope_is_minus_d2c": m["max_slope_error"] <= SLOPE_TOL,
        "fit_plateaus": m["best_relative_error"] >= PLATEAU_REL_ERROR,
        "shortcut_reaches_identity": m["shortcut_residual"] < SHORTCUT_TOL,
    }


def _judge_highpass(m):
    return {
        "slope_is_minus_d2c": m["max_slope_error"] <= SLOPE_TOL,
        "conv_high_pass_cancels": m["conv_max_abs_response"] == 0.0,
    }


def _judge_nonpositive(m):
    return {"outputs_nonpositive": m["positive_outputs"] == 0}


_JUDGES = {"identity": _judge_identity, "high_pass": _judge_highpass,
           "nonpositivity": _judge_nonpositive}


def fully_connected_adder(weight: np.ndarray) -> AdderLayerParams:
    """Adder layer with one d x d x c filter per output unit and no padding.

    Applied to a (c, d, d) input it yields d*d*c outputs, the fully-connected
    form in which the identity question is posed.
    """
    return AdderLayerParams(Tensor(weight, requires_grad=True), stride=1, padding=0)


def _fc_apply(x: np.ndarray, p: AdderLayerParams) -> Tensor:
    return adder_correlate(Tensor(x), p, grad_mode="sign")


def verify_identity_impossibility(d: int = 3, c: int = 2, trials: int = 50, opt_steps: int = 2000,
                                  seed: int = 0, restarts: int = 10, lr: float = 1e-2,
                                  batch: int = 32) -> TheoremReport:
    """Sign/shift obstruction on random filters plus a bounded identity-fit search."""
    if d < 1 or c < 1:
        raise ParameterError("d and c must be at least 1")
    n_out = d * d * c
    seeds = trial_seeds(seed, trials + restarts + 1)
    positive, evaluated = 0, 0
    margin = math.inf
    slope_err = 0.0
    for s in seeds[:trials]:
        rng = np.random.default_rng(s)
        w = rng.uniform(-1.0, 1.0, size=(n_out, c, d, d))
        wmax = np.abs(w).max()
        x = wmax + rng.uniform(0.1, 1.1, size=(1, c, d, d))
        p = fully_connected_adder(w)
        y = _fc_apply(x, p).data.reshape(1, c, d, d)
        y1 = _fc_apply(x + 1.0, p).data.reshape(1, c, d, d)
        positive += int((y > 0).sum())
        evaluated += y.size
        margin = min(margin, float(np.abs(x - y).max() - x.min()))
        slope_err = max(slope_err, float(np.abs((y1 - y) + n_out).max()))

    best_rel = math.inf
    for s in seeds[trials:trials + restarts]:
        rng = np.random.default_rng(s)
        p = fully_connected_adder(rng.uniform(-1.0, 1.0, size=(n_out, c, d, d)))
        x_train = rng.uniform(0.0, 1.0, size=(batch, c, d, d))
        x_test = rng.uniform(0.0, 1.0, size=(batch, c, d, d))
        opt = Adam([ParamGroup([p.weight], lr)])
        target = x_train.reshape(batch, n_out, 1, 1)
        for _ in range(opt_steps):
            with Tape() as tape:
                value = loss(_fc_apply(x_train, p), Tensor(target), "l2")
            if not math.isfinite(value.item()):
                raise NumericalError("identity fit diverged", layer="adder")
            opt.zero_grad()
            tape.backward(value)
            opt.step()
        y = _fc_apply(x_test, p).data.reshape(x_test.shape)
        rel = float(np.linalg.norm(y - x_test) / np.linalg.norm(x_test))
        best_rel = min(best_rel, rel)

    k = d if d % 2 else d + 1
    rng = np.random.default_rng(seeds[-1])
    blk = AdderLayerParams.create(c, c, k, seeds[-1] % (2 ** 32), padding="same",
                                  batch_norm=True, gamma_init=0.0)
    x = rng.uniform(0.0, 1.0, size=(4, c, max(d, 4), max(d, 4)))
    y = self_shortcut_block(Tensor(x), blk, None, training=True).data
    shortcut_residual = float(np.abs(y - x).max())

    return TheoremReport("identity", {"d": d, "c": c, "trials": trials, "opt_steps": opt_steps,
                                      "restarts": restarts, "lr": lr, "seed": seed},
                         {"evaluated_outputs": evaluated, "positive_outputs": positive,
                          "min_residual_margin": margin, "max_slope_error": slope_err,
                          "expected_slope": -n_out, "best_relative_error": best_rel,
                          "shortcut_residual": shortcut_residual})


def nonpositivity_sweep(n_evaluations: int = 10 ** 6, seed: int = 0) -> TheoremReport:
    """Count positive adder outputs over random inputs, filters and shapes."""
    rng = np.random.default_rng(seed)
    positive = evaluated = 0
    while evaluated < n_evaluations:
        k = int(rng.choice([1, 3, 5]))
        c_in, c_out = (int(v) for v in rng.integers(1, 5, size=2))
        size = int(rng.integers(k, 33))
        n = 8
        x = rng.normal(0.0, rng.uniform(0.1, 10.0), size=(n, c_in, size, size))
        p = AdderLayerParams(Tensor(rng.normal(0.0, rng.uniform(0.1, 10.0), size=(c_out, c_in, k, k))),
                             padding=int(rng.integers(0, k)))
        y = adder_correlate(Tensor(x), p).data
        positive += int((y > 0).sum())
        evaluated += y.size
    return TheoremReport("nonpositivity", {"n_evaluations": n_evaluations, "seed": seed},
                         {"evaluated_outputs": evaluated, "positive_outputs": positive})


def constant_response(s: float, w: np.ndarray) -> float:
    """Adder response of a d x d filter bank (1, c, d, d) to the constant image s*E."""
    x = np.full((1,) + w.shape[1:], float(s))
    return adder_correlate(Tensor(x), AdderLayerParams(Tensor(w))).item()


def high_pass_conv_response(s: float, d: int, c: int = 1) -> np.ndarray:
    """Zero-sum 2x2 kernel applied per channel to a constant image of side max(d, 2)."""
    side = max(d, 2)
    w = np.broadcast_to(HIGH_PASS_2X2, (1, c, 2, 2)).copy()
    x = np.full((1, c, side, side), float(s))
    return conv2d(Tensor(x), AdderLayerParams(Tensor(w))).data


def verify_highpass_impossibility(d: int = 3, trials: int = 100, seed: int = 0, c: int = 1) -> TheoremReport:
    if d < 1 or c < 1:
        raise ParameterError("d and c must be at least 1")
    slope_err = 0.0
    slopes = []
    conv_max = 0.0
    for s_ in trial_seeds(seed, trials):
        rng = np.random.default_rng(s_)
        w = rng.uniform(-1.0, 1.0, size=(1, c, d, d))
        s = float(np.abs(w).max() + rng.uniform(0.0, 5.0))
        r0, r1 = constant_response(s, w), constant_response(s + 1.0, w)
        slopes.append(r1 - r0)
        slope_err = max(slope_err, abs((r1 - r0) + d * d * c))
        conv_max = max(conv_max, float(np.abs(high_pass_conv_response(s, d, c)).max()),
                       float(np.abs(high_pass_conv_response(s + 1.0, d, c)).max()))
    return TheoremReport("high_pass", {"d": d, "c": c, "trials": trials, "seed": seed},
                         {"expected_slope": -d * d * c, "min_slope": min(slopes),
                          "max_slope": max(slopes), "max_slope_error": slope_err,
                          "conv_max_abs_response": conv_max})


ABLATION_CELLS = ((True, True), (True, False), (False, True), (False, False))


@dataclass
class AblationTable:
    bicubic_psnr: float
    cells: dict  # (shortcut, power) -> val PSNR, or None if training diverged
    histories: dict = field(default_factory=dict)

    def ordering_ok(self, slack: float = 0.1, gap: float = 0.1) -> bool:
        """Qualitative ranking of the four cells.

        Adjacent cells of (+,+) >= (+,-) > (-,+) >= (-,-) may invert by at most
        ``slack`` dB, the full configuration must be best and the bare adder
        worst (same slack), and best minus worst must reach ``gap`` dB.
        """
        if any(self.cells.get(k) is None for k in ABLATION_CELLS):
            return False
        chain = [self.cells[k] for k in ABLATION_CELLS]
        adjacent = all(a >= b - slack for a, b in zip(chain, chain[1:]))
        best, worst = chain[0], chain[-1]
        return (adjacent and all(best >= v - slack for v in chain)
                and all(worst <= v + slack for v in chain) and best - worst >= gap)

    def format(self) -> str:
        lines = [f"{'shortcut':>9}{'power':>7}{'val PSNR':>11}{'vs bicubic':>12}"]
        for (sc, pw), v in self.cells.items():
            if v is None:
                lines.append(f"{'+' if sc else '-':>9}{'+' if pw else '-':>7}{'diverged':>11}")
            else:
                lines.append(f"{'+' if sc else '-':>9}{'+' if pw else '-':>7}{v:>11.3f}{v - self.bicubic_psnr:>+12.3f}")
        lines.append(f"bicubic {self.bicubic_psnr:.3f} dB")
        return "\n".join(lines)


def ablation_contrast(cfg=None, seed: int = 0) -> AblationTable:
    """Train the four shortcut/power combinations on one synthetic corpus."""
    cfg = cfg or TrainConfig(seed=seed)
    patches, val_pairs = build_dataset(cfg)
    bic = float(np.mean([psnr(np.clip(lr, 0.0, 1.0), hr, 1.0, cfg.scale) for lr, hr in val_pairs]))
    cells, histories = {}, {}
    for shortcut, power in ABLATION_CELLS:
        model = build_tiny_vdsr("adder", cfg.depth, cfg.width, cfg.scale, cfg.seed,
                                shortcut=shortcut, power=power, shortcut_gamma=cfg.shortcut_gamma)
        try:
            result = train(model, patches, cfg, val_pairs=val_pairs)
            cells[(shortcut, power)] = result.history.val_psnr[-1] if cfg.epochs else \
                evaluate_psnr(model, val_pairs, cfg.scale)
            histories[(shortcut, power)] = result.history
        except NumericalError:
            cells[(shortcut, power)] = None
    return AblationTable(bic, cells, histories)
