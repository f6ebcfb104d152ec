"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criteria 5, 6, 8 and 9 train many models at full length and take tens of
minutes in total; the others run in seconds.
"""

from dataclasses import replace

import numpy as np
import pytest

from mixfunn import autodiff as ad
from mixfunn import harness
from mixfunn.checkpoint import load_checkpoint, save_checkpoint
from mixfunn.expression import extract_expression, render, verify_expression
from mixfunn.harness import ExperimentConfig, run_experiment
from mixfunn.network import (SecondOrderNeuron, build_model, fold_full_matrix, make_spec,
                             second_order_forward, softmax_weights)
from mixfunn.physics import FunctionModel, LossContext, jcos, jexp, jsin, total_loss
from mixfunn.problems import (BurgersParams, OscillatorParams, WellParams, burgers_reference,
                              damped_oscillator, forced_oscillator, quantum_well, steady_state_coeffs,
                              well_eigenvalues)
from mixfunn.prune import magnitude_prune
from mixfunn.train import train

SMALL_MODELS = {"mixfunn": {}, "mix2funn": {}, "mlp": {"hidden": [4, 4]}, "hybrid": {"hidden": [2, 3]}}
KINK_MARGIN = 0.1


def _fd4(f, h):
    a, b, c, d = (f(k * h) for k in (-2, -1, 1, 2))
    return (a - 8 * b + 8 * c - d) / (12 * h)


def _fd6_input(model, t, h):
    """Sixth-order central first and second derivatives of the scalar forward pass."""
    f = [float(model.forward(np.array([[t + k * h]]))[0]) for k in range(-3, 4)]
    d1 = (-f[0] + 9 * f[1] - 45 * f[2] + 45 * f[4] - 9 * f[5] + f[6]) / (60 * h)
    d2 = (2 * f[0] - 27 * f[1] + 270 * f[2] - 490 * f[3] + 270 * f[4] - 27 * f[5] + 2 * f[6]) / (180 * h * h)
    return d1, d2


def _loss_value(model, prob, X, theta):
    tape = ad.Tape()
    return float(total_loss(model, prob, X, LossContext(tape, tape.variable(theta))).value)


def _kink_free_model(variant, kw, seed, X):
    """Random small model whose pre-activations stay KINK_MARGIN away from 0 at X and t = 0."""
    model = build_model(make_spec(variant, 1, **kw), seed)
    if not model.spec.is_mixed:
        return model
    rng = np.random.default_rng(seed)
    b = model.view("preact_bias", 0)
    b[:] = rng.choice([-1.0, 1.0], b.size) * rng.uniform(0.2, 1.0, b.size)
    pts = np.vstack([X, [[0.0]]])
    s = b + pts @ model.view("preact_lin", 0)
    return model if np.min(np.abs(s)) >= KINK_MARGIN else None


def test_criterion_1_autodiff(acceptance):
    prob = damped_oscillator(OscillatorParams(t_train=(0.0, 3.0)))
    worst_grad = worst_jet = 0.0
    counts = {}
    for variant, kw in SMALL_MODELS.items():
        n, seed = 0, 0
        while n < 100:
            seed += 1
            rng = np.random.default_rng(seed)
            X = rng.uniform(0.1, 3.0, (8, 1))
            model = _kink_free_model(variant, kw, seed, X)
            if model is None:
                continue
            n += 1
            tape = ad.Tape()
            th = tape.variable(model.params)
            (g,) = tape.backward(total_loss(model, prob, X, LossContext(tape, th)), [th])
            for _ in range(4):
                d = rng.normal(size=g.size)
                num = _fd4(lambda s: _loss_value(model, prob, X, model.params + s * d), 1e-3)
                worst_grad = max(worst_grad, abs(g @ d - num) / abs(g @ d))
            t = float(X[0, 0])
            jv = ad.eval_jet(model, [t], order=2)
            d1, d2 = _fd6_input(model, t, 1e-2)
            worst_jet = max(worst_jet, abs(jv.d1[0] - d1) / abs(jv.d1[0]),
                            abs(jv.second(0, 0) - d2) / abs(jv.second(0, 0)))
        counts[variant] = n
    ok = worst_grad <= 1e-4 and worst_jet <= 1e-5 and min(counts.values()) >= 100
    acceptance(1, "autodiff gradients and jets vs finite differences", ok,
               f"models per variant {counts}; worst gradient rel {worst_grad:.2e} (<=1e-4), "
               f"worst jet rel {worst_jet:.2e} (<=1e-5)")


def test_criterion_2_triangular_reduction(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        N = int(rng.integers(1, 9))
        x = rng.normal(size=N)
        U_full = rng.normal(size=(N, N))
        b, W = rng.normal(), rng.normal(size=N)
        full = b + W @ x + x @ U_full @ x
        reduced = second_order_forward(SecondOrderNeuron(b, W, fold_full_matrix(U_full)), x)
        worst = max(worst, abs(full - reduced) / max(1.0, abs(full)))
    acceptance(2, "lower-triangular second-order form equals full quadratic form", worst <= 1e-12,
               f"1000 trials, N<=8, worst deviation {worst:.2e} (<=1e-12)")


def test_criterion_3_softmax(acceptance):
    rng = np.random.default_rng(3)
    worst_sum, negatives, argmax_breaks = 0.0, 0, 0
    for _ in range(1000):
        a = rng.normal(scale=3.0, size=int(rng.integers(2, 36)))
        T1, T2 = np.exp(rng.uniform(-3, 3, 2))
        w1, w2 = softmax_weights(a, T1), softmax_weights(a, T2)
        worst_sum = max(worst_sum, abs(w1.sum() - 1.0), abs(w2.sum() - 1.0))
        negatives += int(np.any(w1 < 0) or np.any(w2 < 0))
        argmax_breaks += int(not (np.argmax(w1) == np.argmax(w2) == np.argmax(a)))
    ok = worst_sum <= 1e-12 and negatives == 0 and argmax_breaks == 0
    acceptance(3, "softmax unit sum, nonnegativity, temperature-invariant argmax", ok,
               f"1000 trials; worst |sum-1| {worst_sum:.1e}, negatives {negatives}, argmax changes {argmax_breaks}")


def _damped_stub(p):
    mu, wd = p.gamma / (2 * p.m), np.sqrt(p.k / p.m - (p.gamma / (2 * p.m)) ** 2)
    c2 = (p.v0 + mu * p.x0) / wd
    return FunctionModel(lambda c: jexp(c[0] * (-mu)) * (jcos(c[0] * wd) * p.x0 + jsin(c[0] * wd) * c2))


def _forced_stub(p):
    A, B = steady_state_coeffs(p)
    mu, wd = p.gamma / (2 * p.m), np.sqrt(p.k / p.m - (p.gamma / (2 * p.m)) ** 2)
    x0, v0 = p.x0 - B, p.v0 - A * p.omega
    c2 = (v0 + mu * x0) / wd

    def fn(c):
        t = c[0]
        transient = jexp(t * (-mu)) * (jcos(t * wd) * x0 + jsin(t * wd) * c2)
        return transient + jsin(t * p.omega) * A + jcos(t * p.omega) * B

    return FunctionModel(fn)


def test_criterion_4_oracle_annihilation(acceptance):
    X = np.linspace(0.0, 20.0, 400)[:, None]
    p = OscillatorParams()
    damped = _loss_value(_damped_stub(p), damped_oscillator(p), X, np.zeros(0))
    pf = OscillatorParams(F0=1.0, omega=0.9)
    forced = _loss_value(_forced_stub(pf), forced_oscillator(pf), X, np.zeros(0))
    well = 0.0
    for n in WellParams().train_states:
        k = well_eigenvalues(n)
        stub = FunctionModel(lambda c, k=k: jsin((c[0] + 1.0) * k), 2)
        Xw = np.column_stack([np.linspace(-1, 1, 200), np.full(200, k)])
        well = max(well, _loss_value(stub, quantum_well(sqrt_e=k), Xw, np.zeros(0)))
    bp = BurgersParams()
    sol = burgers_reference(bp, bp.t_train[1])
    burg = float(np.mean(sol.grid_residual(bp.k) ** 2))
    ic_err = float(np.max(np.abs(sol.u[0] - bp.ic(sol.x))))
    bc_err = float(np.max(np.abs(sol.u[:, [0, -1]] - np.array(bp.bc))))
    burg_total = burg + ic_err**2 + bc_err**2
    ok = damped < 1e-8 and forced < 1e-8 and well < 1e-8 and burg_total < 1e-3
    acceptance(4, "reference solutions annihilate the losses", ok,
               f"damped {damped:.1e}, forced {forced:.1e}, well {well:.1e} (<1e-8); "
               f"Burgers FD grid {burg_total:.1e} (<1e-3)")


# --------------------------------------------------------------------------
# long-running criteria


@pytest.fixture(scope="module")
def oscillator_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("oscillator")
    cfg = ExperimentConfig(problem="damped_oscillator", seeds=[0, 1, 2, 3, 4])
    mix = run_experiment(cfg.with_updates(variant="mix2funn", out_dir=str(base / "mix2funn")))
    mlp = run_experiment(cfg.with_updates(variant="mlp", out_dir=str(base / "mlp")))
    return mix, mlp


def test_criterion_5_damped_oscillator(acceptance, oscillator_runs):
    mix, mlp = oscillator_runs
    mix_te, mlp_te = mix.column("test_error"), mlp.column("test_error")
    best_mix, best_mlp = float(np.min(mix_te)), float(np.min(mlp_te))
    selected = mix.best_row
    ok = len(mix_te) == 5 and best_mix <= 1e-2 and best_mix < best_mlp
    acceptance(5, "damped oscillator: best-of-5 test MSE <= 1e-2 and below the MLP baseline", ok,
               f"Mix2Funn test MSE per seed {np.array2string(mix_te, precision=3)}; "
               f"MLP {np.array2string(mlp_te, precision=3)}; best Mix2Funn {best_mix:.3e}, best MLP {best_mlp:.3e}; "
               f"residual-selected Mix2Funn run {selected.run_id} test {selected.test_error:.3e}")


def test_criterion_6_data_size_trend(acceptance, tmp_path):
    cfg = ExperimentConfig(problem="damped_oscillator", variant="mix2funn", seeds=[0, 1, 2, 3, 4],
                           out_dir=str(tmp_path / "data_size"))
    rows = harness.data_size_sweep(cfg, t_max=(10, 80), test_domain=(80.0, 150.0))
    mean10, mean80 = rows[0][1], rows[1][1]
    ok = rows[0][4] == rows[1][4] and mean80 < mean10
    acceptance(6, "mean test error on [80,150] drops from T_max=10 to T_max=80", ok,
               f"mean test MSE T_max=10 {mean10:.3e}, T_max=80 {mean80:.3e}")


def test_criterion_7_pruning_endpoint(acceptance, oscillator_runs):
    mix, _ = oscillator_runs
    model = mix.best_model
    cfg = ExperimentConfig(problem="damped_oscillator")
    prob = harness.build_problem(cfg)
    rep = magnitude_prune(model, 34 / 35)
    ft_cfg = replace(harness.train_config_for(cfg, 0), epochs=1000)
    tuned, hist = train(rep.model, prob, ft_cfg)
    expr = extract_expression(tuned)
    dev = verify_expression(expr, tuned, 1000, 0, [(0.0, 20.0)])
    effective = tuned.count_effective_params()
    ok = rep.mix_kept == 1 and not hist.failed and dev < 1e-9 and effective <= 8
    acceptance(7, "34/35 pruning leaves one mixing weight; expression verifies; effective params <= 8", ok,
               f"mixing weights kept {rep.mix_kept}, deviation {dev:.1e} (<1e-9), effective {effective} (<=8); "
               f"expression {render(expr, 3)}")


def test_criterion_8_burgers(acceptance, tmp_path):
    bp = BurgersParams()
    ref = burgers_reference(bp, 0.2, nx=2048)
    errs = []
    for nx in (64, 128, 256):
        s = burgers_reference(bp, 0.2, nx=nx)
        errs.append(float(np.max(np.abs(s.u[-1] - ref.u[-1][:: 2048 // nx]))))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    cfg = ExperimentConfig(problem="burgers", variant="mix2funn", seeds=[0, 1, 2, 3, 4],
                           out_dir=str(tmp_path / "burgers"))
    res = run_experiment(cfg)
    tr = res.column("train_error")
    best = float(np.min(tr))
    ok = all(3.5 <= r <= 4.5 for r in ratios) and best <= 0.3 and res.rows[0].params == 56
    acceptance(8, "Burgers: best-of-5 train MSE <= 0.3 with 56 parameters; FD oracle 2nd-order convergent", ok,
               f"train MSE per seed {np.array2string(tr, precision=3)}, best {best:.3e}; "
               f"FD error ratios {ratios[0]:.2f}, {ratios[1]:.2f} (3.5-4.5)")


def test_criterion_9_eigenvalue_scan(acceptance, tmp_path):
    cfg = ExperimentConfig(problem="quantum_well", variant="mix2funn", seeds=[0], out_dir=str(tmp_path / "scan"))
    grid = np.linspace(1.0, 7.0, 60)
    rows, minima = harness.energy_scan(cfg, grid)
    found = [x for _, x in minima]
    targets = well_eigenvalues([1, 2, 3, 4])
    matched = [min((abs(x - e) / e for x in found), default=np.inf) for e in targets]
    spurious = [x for x in found if np.min(np.abs(x - targets) / targets) > 0.02]
    ok = len(rows) == 60 and all(m <= 0.02 for m in matched) and not spurious
    acceptance(9, "energy scan minima within 2% of n*pi/2, n=1..4", ok,
               f"detected {', '.join(f'{x:.4f}' for x in found)}; relative offsets "
               f"{', '.join(f'{m:.2%}' for m in matched)}; spurious {len(spurious)}")


def test_criterion_10_determinism_persistence(acceptance, tmp_path):
    cfg = ExperimentConfig(problem="damped_oscillator", seeds=[0, 1], train={"epochs": 200}, n_test=128)
    a = run_experiment(cfg.with_updates(out_dir=str(tmp_path / "a")))
    run_experiment(cfg.with_updates(out_dir=str(tmp_path / "b")))
    same_csv = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                   for f in ("metrics.csv", "history_seed0.csv", "history_seed1.csv", "solution_seed0.csv"))
    model = a.models[0]
    back = load_checkpoint(save_checkpoint(model, tmp_path / "ck.json"))
    X = np.random.default_rng(10).uniform(0, 20, (100, 1))
    ulp = int(np.max(np.abs(back.forward(X).view(np.int64) - model.forward(X).view(np.int64))))
    ok = same_csv and ulp == 0
    acceptance(10, "identical configs give byte-identical CSVs; checkpoint round trip at 0 ulp", ok,
               f"CSVs identical {same_csv}, max ulp difference {ulp}")
