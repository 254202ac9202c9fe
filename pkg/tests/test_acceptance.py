"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from addersr.cli import main
from addersr.config import format_config
from addersr.energy import LayerCount, count_ops, energy
from addersr.layers import AdderLayerParams, PowerActParams, adder_correlate, batch_norm, conv2d, power_activation
from addersr.metrics import psnr, ssim
from addersr.models import vdsr_spec
from addersr.tensor import Tape, Tensor, mul, sum_all
from addersr.theorems import nonpositivity_sweep, verify_highpass_impossibility, verify_identity_impossibility
from addersr.training import TrainConfig, loss

from oracles import adder_loop, central_difference, conv_loop

H, W = 720, 1280


def rel(value, target):
    return abs(value - target) / abs(target)


def test_criterion_1_op_counts(acceptance):
    t0 = time.perf_counter()
    conv = count_ops(vdsr_spec("conv"), H, W)
    adder = count_ops(vdsr_spec("adder"), H, W, include_overhead=False)
    elapsed = time.perf_counter() - t0
    c_mul = sum(r.n_mul for r in conv) / 1e9
    a_mul = sum(r.n_mul for r in adder) / 1e9
    a_add = sum(r.n_add for r in adder) / 1e9
    checks = {"conv_mul": rel(c_mul, 612.6) <= 0.005, "adder_mul": rel(a_mul, 1.1) <= 0.01,
              "adder_add": rel(a_add, 1224.1) <= 0.01, "runtime": elapsed < 1.0}
    detail = (f"conv #Mul {c_mul:.4f}G ({rel(c_mul, 612.6):.3%}), adder #Mul {a_mul:.4f}G "
              f"({rel(a_mul, 1.1):.2%} vs 1.1G), adder #Add {a_add:.4f}G ({rel(a_add, 1224.1):.3%}), "
              f"{elapsed * 1e3:.1f} ms; failed: {[k for k, v in checks.items() if not v]}")
    assert acceptance(1, "op-count reproduction", all(checks.values()), detail)


def test_criterion_2_energy(acceptance):
    t0 = time.perf_counter()
    vdsr_ann = energy(count_ops(vdsr_spec("adder"), H, W, include_overhead=False)).pj / 1e9
    vdsr_cnn = energy(count_ops(vdsr_spec("conv"), H, W), cnn_convention="mul-only").pj / 1e9
    edsr_ann = energy([LayerCount("edsr", "adder_plain", int(7.9e9), int(18489.8e9))]).pj / 1e9
    edsr_cnn = energy([LayerCount("edsr", "conv", int(9248.9e9), int(9248.9e9))],
                      cnn_convention="mul-only").pj / 1e9
    elapsed = time.perf_counter() - t0
    got = {"VDSR ANN": (vdsr_ann, 1105.6), "EDSR ANN": (edsr_ann, 16670.3),
           "VDSR CNN": (vdsr_cnn, 2266.6), "EDSR CNN": (edsr_cnn, 34220.8)}
    ok = all(rel(v, t) <= 1e-3 for v, t in got.values()) and elapsed < 1.0
    detail = ", ".join(f"{k} {v:.2f}G pJ ({rel(v, t):.4%})" for k, (v, t) in got.items())
    assert acceptance(2, "energy reproduction", ok, f"{detail}, {elapsed * 1e3:.1f} ms")


def test_criterion_3_identity(acceptance):
    t0 = time.perf_counter()
    sweep = nonpositivity_sweep(10 ** 6, seed=0)
    ident = verify_identity_impossibility(d=3, c=2, trials=50, opt_steps=2000, seed=0, restarts=10)
    elapsed = time.perf_counter() - t0
    m = ident.measurements
    ok = (sweep.verdict == "pass" and sweep.measurements["evaluated_outputs"] >= 10 ** 6
          and m["best_relative_error"] >= 0.5 and m["shortcut_residual"] < 1e-6
          and ident.verdict == "pass" and elapsed < 120)
    detail = (f"{sweep.measurements['positive_outputs']} positive of "
              f"{sweep.measurements['evaluated_outputs']} outputs, best fit rel. error "
              f"{m['best_relative_error']:.3f} over 10 restarts, shortcut residual "
              f"{m['shortcut_residual']:.1e}, {elapsed:.1f} s")
    assert acceptance(3, "identity-mapping impossibility", ok, detail)


def test_criterion_4_highpass(acceptance):
    t0 = time.perf_counter()
    reports = [verify_highpass_impossibility(d, trials=100, seed=7 * d + c, c=c)
               for d in (1, 2, 3) for c in (1, 2)]
    elapsed = time.perf_counter() - t0
    worst = max(r.measurements["max_slope_error"] for r in reports)
    conv = max(r.measurements["conv_max_abs_response"] for r in reports)
    ok = all(r.verdict == "pass" for r in reports) and worst <= 1e-9 and conv == 0.0 and elapsed < 10
    detail = f"max slope error {worst:.1e} over 6x100 filters, conv response {conv}, {elapsed:.2f} s"
    assert acceptance(4, "high-pass impossibility", ok, detail)


def _rel_grad_error(run, analytic, arr, step=1e-6):
    num = central_difference(lambda: run().item(), arr, step)
    return float(np.linalg.norm(analytic - num) / max(np.linalg.norm(num), 1e-12))


def _tape_grads(run, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = run()
    tape.backward(out)
    return [t.grad.copy() for t in tensors]


def _worst(run, tensors):
    grads = _tape_grads(run, tensors)
    return max(_rel_grad_error(run, g, t.data) for g, t in zip(grads, tensors))


def _gradient_cases(rng):
    n_case = 20
    errs = {k: 0.0 for k in ("power", "bn", "conv", "loss", "adder_sign")}
    for _ in range(n_case):
        shape = (2, 2, 3, 3)
        coef = Tensor(rng.normal(size=shape))
        y = Tensor(rng.uniform(0.05, 2.0, shape) * rng.choice([-1.0, 1.0], shape), requires_grad=True)
        a = PowerActParams(Tensor(np.full((1, 1, 1, 1), rng.uniform(0.5, 2.0)), requires_grad=True))
        errs["power"] = max(errs["power"], _worst(lambda: sum_all(mul(power_activation(y, a), coef)),
                                                  [y, a.alpha]))

        p = AdderLayerParams.create(2, 2, 1, seed=int(rng.integers(1 << 31)), batch_norm=True)
        p.bn_gamma.data[...] = rng.normal(size=(1, 2, 1, 1))
        p.bn_beta.data[...] = rng.normal(size=(1, 2, 1, 1))
        x = Tensor(rng.normal(size=shape), requires_grad=True)
        stats = (p.bn_running_mean.copy(), p.bn_running_var.copy())

        def bn_run():
            p.bn_running_mean[...], p.bn_running_var[...] = stats
            return sum_all(mul(batch_norm(x, p, training=True), coef))
        errs["bn"] = max(errs["bn"], _worst(bn_run, [x, p.bn_gamma, p.bn_beta]))

        cp = AdderLayerParams(Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True), padding=1)
        xc = Tensor(rng.normal(size=shape), requires_grad=True)
        errs["conv"] = max(errs["conv"], _worst(lambda: sum_all(mul(conv2d(xc, cp), coef)),
                                                [xc, cp.weight]))

        pred = Tensor(rng.normal(size=shape), requires_grad=True)
        target = Tensor(rng.normal(size=shape))
        errs["loss"] = max(errs["loss"], _worst(lambda: loss(pred, target, "l2"), [pred]))

        while True:
            xa = rng.normal(size=(1, 2, 4, 4))
            wa = rng.normal(size=(2, 2, 3, 3))
            patches = sliding_window_view(xa[0], (3, 3), axis=(1, 2))
            gap = np.abs(patches[None] - wa[:, :, None, None]).min()
            if gap > 1e-3:
                break
        xt = Tensor(xa, requires_grad=True)
        ap = AdderLayerParams(Tensor(wa, requires_grad=True))
        ca = Tensor(rng.normal(size=(1, 2, 2, 2)))
        errs["adder_sign"] = max(errs["adder_sign"], _worst(
            lambda: sum_all(mul(adder_correlate(xt, ap, grad_mode="sign"), ca)), [xt, ap.weight]))
    return errs


def test_criterion_5_gradients(acceptance):
    t0 = time.perf_counter()
    errs = _gradient_cases(np.random.default_rng(55))
    elapsed = time.perf_counter() - t0
    ok = all(e <= 1e-4 for e in errs.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f" (max rel. error, 20 cases each), {elapsed:.1f} s"
    assert acceptance(5, "gradient suite", ok, detail)


def test_criterion_6_desk_scale_training(acceptance, default_ablation):
    table, elapsed = default_ablation
    full = table.cells[(True, True)]
    gain = None if full is None else full - table.bicubic_psnr
    sep = None if full is None or table.cells[(False, False)] is None else full - table.cells[(False, False)]
    ok = gain is not None and gain >= 0.3 and table.ordering_ok(slack=0.1, gap=0.1) and elapsed < 1200
    cells = ", ".join(f"({'+' if s else '-'}sc,{'+' if p else '-'}pw) "
                      f"{'diverged' if v is None else f'{v - table.bicubic_psnr:+.3f}'}"
                      for (s, p), v in table.cells.items())
    detail = (f"bicubic {table.bicubic_psnr:.3f} dB; gain over bicubic {cells}; best-worst "
              f"{'n/a' if sep is None else f'{sep:.3f}'} dB; {elapsed:.0f} s")
    assert acceptance(6, "desk-scale training and ablation ordering", ok, detail)


def test_criterion_7_oracle_equivalence(acceptance):
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst_a = worst_c = 0.0
    for _ in range(100):
        k = int(rng.choice([1, 3, 5]))
        c_in, c_out = (int(v) for v in rng.integers(1, 5, size=2))
        h, w = (int(v) for v in rng.integers(k, 9, size=2))
        pad = int(rng.integers(0, (k - 1) // 2 + 1))
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(int(rng.integers(1, 3)), c_in, h, w))
        wt = rng.normal(size=(c_out, c_in, k, k))
        p = AdderLayerParams(Tensor(wt), stride=stride, padding=pad)
        worst_a = max(worst_a, float(np.abs(adder_correlate(Tensor(x), p).data - adder_loop(x, wt, stride, pad)).max()))
        worst_c = max(worst_c, float(np.abs(conv2d(Tensor(x), p).data - conv_loop(x, wt, stride, pad)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_a <= 1e-12 and worst_c <= 1e-12 and elapsed < 30
    detail = f"max |adder - loop| {worst_a:.1e}, max |conv - loop| {worst_c:.1e}, {elapsed:.2f} s"
    assert acceptance(7, "oracle equivalence", ok, detail)


def test_criterion_8_determinism(acceptance, tmp_path):
    cfg_path = tmp_path / "default.ini"
    cfg_path.write_text(format_config(TrainConfig(epochs=2)))
    codes = [main(["train", "--config", str(cfg_path), "--output-dir", str(tmp_path / f"run{i}")])
             for i in (1, 2)]
    same_ckpt = (tmp_path / "run1" / "model.adsr").read_bytes() == (tmp_path / "run2" / "model.adsr").read_bytes()
    same_csv = (tmp_path / "run1" / "history.csv").read_bytes() == (tmp_path / "run2" / "history.csv").read_bytes()
    ok = codes == [0, 0] and same_ckpt and same_csv
    detail = f"exit codes {codes}, checkpoints identical {same_ckpt}, CSVs identical {same_csv}"
    assert acceptance(8, "determinism", ok, detail)


def test_criterion_9_metric_sanity(acceptance):
    rng = np.random.default_rng(9)
    a = rng.uniform(1, 254, size=(32, 32))
    uniform_one = psnr(a, a + 1.0)
    full = psnr(np.zeros((16, 16)), np.full((16, 16), 255.0))
    selfs = [ssim(img, img.copy()) for img in (a, rng.uniform(0, 255, (20, 30)), np.full((12, 12), 7.0))]
    ok = abs(uniform_one - 20 * math.log10(255)) <= 1e-6 and abs(full) <= 1e-6 and all(s == 1.0 for s in selfs)
    detail = f"uniform-1 {uniform_one:.7f} dB, full-range {full:.1e} dB, SSIM self {selfs}"
    assert acceptance(9, "metric sanity", ok, detail)
