"""Acceptance suite: eleven end-to-end checks, one verdict line each.

Checks 1-8 are exact or tolerance-pinned oracles (reduction identities,
finite-difference gradients, optimizer hand traces, serialization round
trips). Checks 9-11 reproduce directional findings on a synthetic
five-center task with a noisy final center: regularized transfer keeps
accuracy monotone where plain fine-tuning forgets, pooled training beats
any transfer schedule which beats isolated per-center models, and a
per-center multi-head classifier forgets far more than a shared head.
"""

import time

import numpy as np
import pytest

from itlsim.checkpoint import encode_checkpoint, load_checkpoint
from itlsim.data import apply_noise, make_synthetic_task
from itlsim.federation import (ResumeState, RunSettings, run_cwt,
                               run_individual, run_joint, run_swt)
from itlsim.metrics import AccuracyMatrix, mean_accuracy, monotonicity
from itlsim.nn import (CrossEntropy, Dense, Dice, Conv2D, Flatten, MaxPool2D,
                       ModelSpec, MultiHead, ReLU, SingleHead, clone_params,
                       init_params, loss_and_grad, params_equal)
from itlsim.optim import AdamState, adam_step, inject_regularized_gradient, optimizer_step
from itlsim.regularizers import (EncoderState, ImmArchive, ImmEntry,
                                 ebll_code_loss, imm_merge_mean,
                                 imm_merge_mode, imm_mode_weights,
                                 importance_penalty_gradient,
                                 inverse_importance_gradient, kd_loss,
                                 l2_transfer_gradient, make_strategy)

N_SEEDS = 10
TREND_METHODS = ("ft", "lwf", "imm-mean", "imm-mode")


@pytest.fixture
def announce(capsys):
    def _announce(n: int, ok: bool, desc: str, detail: str = "") -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {desc}"
        if detail:
            line += f" [{detail}]"
        with capsys.disabled():
            print(f"\n{line}", flush=True)
        assert ok, line
    return _announce


# ---------------------------------------------------------------------------
# shared synthetic scenario: five centers, Gaussian noise on center 5
# ---------------------------------------------------------------------------


def make_noisy_task():
    datasets = make_synthetic_task(num_classes=10, dim=16,
                                   per_center_counts=(30, 10, 10),
                                   n_centers=5, seed=0, cluster_std=0.22)
    datasets[4] = apply_noise(datasets[4], 25.0, seed=0)
    return datasets


def make_model(head=None):
    return ModelSpec(feature_layers=(Dense(16, 32), ReLU()),
                     head_layers=(Dense(32, 10),),
                     head_setting=head if head is not None else SingleHead())


@pytest.fixture(scope="module")
def trend_results():
    """Ten-seed means for every transfer method plus both reference baselines."""
    datasets = make_noisy_task()
    model = make_model()
    started = time.monotonic()
    out = {}
    for method in TREND_METHODS:
        accs, monos = [], []
        for seed in range(N_SEEDS):
            result = run_cwt(model, datasets, method, RunSettings(seed=seed))
            assert not result.failed, result.failure
            accs.append(mean_accuracy(result.matrix))
            monos.append(monotonicity(result.matrix))
        out[method] = {"acc": float(np.mean(accs)),
                       "mono": float(np.mean(monos))}
    joint, isolated = [], []
    for seed in range(N_SEEDS):
        # same epoch budget as one full transfer schedule (5 x 5 x 10)
        j = run_joint(model, datasets, RunSettings(seed=seed), epochs=250)
        joint.append(mean_accuracy(j.matrix))
        per_center = run_individual(model, datasets, RunSettings(seed=seed),
                                    epochs=250)
        isolated.append(float(np.mean([r.matrix.values.mean()
                                       for r in per_center])))
    out["joint"] = float(np.mean(joint))
    out["it-global"] = float(np.mean(isolated))
    out["_elapsed"] = time.monotonic() - started
    return out


# ---------------------------------------------------------------------------
# 1. zero-strength regularizers reduce to plain fine-tuning
# ---------------------------------------------------------------------------


def test_criterion_01_zero_lambda_reduces_to_ft(tmp_path, announce):
    datasets = make_noisy_task()
    model = make_model()
    # 5 centers x 15 epochs x 3 batches = 225 optimizer steps, no early stop
    settings = RunSettings(lam=0.0, e_stop=10 ** 6, seed=0)
    runs = {}
    for method in ("ft", "ewc", "si", "mas"):
        runs[method] = run_swt(model, datasets, method, settings,
                               epochs_per_center=15,
                               checkpoint_dir=tmp_path / method)
    ft = runs["ft"]
    assert ft.resume.checkpoint.provenance.epoch == 15  # full budget ran
    ok, worst = True, ""
    for method in ("ewc", "si", "mas"):
        r = runs[method]
        same_matrix = np.array_equal(ft.matrix.values, r.matrix.values,
                                     equal_nan=True)
        same_params = params_equal(ft.final_params, r.final_params)
        same_visits = True
        for v in range(1, 6):
            a = load_checkpoint(tmp_path / "ft" / f"visit-{v:03d}.itlc")
            b = load_checkpoint(tmp_path / method / f"visit-{v:03d}.itlc")
            if not (params_equal(a.params, b.params)
                    and a.optimizer.t == b.optimizer.t
                    and params_equal(a.optimizer.m, b.optimizer.m)
                    and params_equal(a.optimizer.v, b.optimizer.v)):
                same_visits = False
        if not (same_matrix and same_params and same_visits):
            ok, worst = False, method
    announce(1, ok, "zero-strength ewc/si/mas trajectories are bit-identical "
                    "to ft over 225 optimizer steps",
             worst and f"first divergence: {worst}")


# ---------------------------------------------------------------------------
# 2. analytic gradients match central finite differences
# ---------------------------------------------------------------------------


def _fd_scalar(f, array, eps=1e-5):
    grad = np.zeros_like(array, dtype=np.float64)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def _rel_err(numeric, analytic):
    num = np.linalg.norm((numeric - analytic).ravel())
    den = max(np.linalg.norm(numeric.ravel()), 1e-12)
    return num / den


def _fd_params(loss_fn, params):
    worst = 0.0
    value_and_grad = loss_fn()
    _, analytic = value_and_grad
    for name in params:
        numeric = _fd_scalar(lambda: loss_fn()[0], params[name])
        worst = max(worst, _rel_err(numeric, analytic[name]))
    return worst


def test_criterion_02_gradient_oracles(announce):
    tol, instances = 1e-5, 20
    worst = {"dense-ce": 0.0, "conv-ce": 0.0, "dense-dice": 0.0,
             "kd": 0.0, "code": 0.0, "imp": 0.0, "inv": 0.0, "l2": 0.0}

    for i in range(instances):
        rng = np.random.default_rng([2, i])

        model = ModelSpec(feature_layers=(Dense(5, 4), ReLU()),
                          head_layers=(Dense(4, 3),))
        params = init_params(model, i)
        for k in params:  # break symmetry of zero biases
            params[k] = params[k] + rng.normal(0, 0.3, size=params[k].shape)
        x = rng.normal(0.5, 0.4, size=(6, 5))
        y = rng.integers(0, 3, size=6)
        worst["dense-ce"] = max(worst["dense-ce"], _fd_params(
            lambda: loss_and_grad(model, params, x, y), params))

        masks = rng.uniform(0, 1, size=(6, 3))
        worst["dense-dice"] = max(worst["dense-dice"], _fd_params(
            lambda: loss_and_grad(model, params, x, masks, Dice()), params))

        conv = ModelSpec(
            feature_layers=(Conv2D(1, 2, 2), ReLU(), MaxPool2D(2), Flatten()),
            head_layers=(Dense(8, 3),))
        cparams = init_params(conv, i)
        for k in cparams:
            cparams[k] = cparams[k] + rng.normal(0, 0.3,
                                                 size=cparams[k].shape)
        cx = rng.normal(0, 1, size=(4, 1, 5, 5))
        cy = rng.integers(0, 3, size=4)
        worst["conv-ce"] = max(worst["conv-ce"], _fd_params(
            lambda: loss_and_grad(conv, cparams, cx, cy), cparams))

        teacher = rng.normal(0, 2, size=(5, 4))
        student = rng.normal(0, 2, size=(5, 4))
        temperature = rng.uniform(1.0, 4.0)
        numeric = _fd_scalar(
            lambda: kd_loss(teacher, student, temperature)[0], student)
        worst["kd"] = max(worst["kd"], _rel_err(
            numeric, kd_loss(teacher, student, temperature)[1]))

        encoder = EncoderState(
            enc_weight=rng.normal(0, 0.5, size=(6, 3)),
            enc_bias=rng.normal(0, 0.5, size=3),
            dec_weight=rng.normal(0, 0.5, size=(3, 6)),
            dec_bias=rng.normal(0, 0.5, size=6),
            alpha=rng.uniform(0.1, 2.0))
        feats_now = rng.normal(0, 1, size=(4, 6))
        feats_prev = rng.normal(0, 1, size=(4, 6))
        numeric = _fd_scalar(
            lambda: ebll_code_loss(encoder, feats_now, feats_prev)[0],
            feats_now)
        worst["code"] = max(worst["code"], _rel_err(
            numeric, ebll_code_loss(encoder, feats_now, feats_prev)[1]))

        theta = {"w": rng.normal(0, 1, size=(3, 2)),
                 "b": rng.normal(0, 1, size=4)}
        prev = {k: v + rng.normal(0, 0.5, size=v.shape)
                for k, v in theta.items()}
        omega = {k: rng.uniform(0, 3, size=v.shape)
                 for k, v in theta.items()}
        lam, beta = rng.uniform(0.1, 5.0), rng.uniform(0.01, 1.0)

        def imp_pen():
            return sum(float((lam * omega[k] * (theta[k] - prev[k]) ** 2).sum())
                       for k in theta)

        def inv_pen():
            return sum(float((lam * (theta[k] - prev[k]) ** 2
                              / (1.0 + omega[k])).sum()) for k in theta)

        def l2_pen():
            return sum(float((beta * (theta[k] - prev[k]) ** 2).sum())
                       for k in theta)

        grads = importance_penalty_gradient(theta, prev, omega, lam)
        for k in theta:
            worst["imp"] = max(worst["imp"], _rel_err(
                _fd_scalar(imp_pen, theta[k]), grads[k]))
        grads = inverse_importance_gradient(theta, prev, omega, lam)
        for k in theta:
            worst["inv"] = max(worst["inv"], _rel_err(
                _fd_scalar(inv_pen, theta[k]), grads[k]))
        grads = l2_transfer_gradient(theta, prev, beta)
        for k in theta:
            worst["l2"] = max(worst["l2"], _rel_err(
                _fd_scalar(l2_pen, theta[k]), grads[k]))

    ok = all(v <= tol for v in worst.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    announce(2, ok, f"all analytic gradients within {tol:g} of central "
                    f"finite differences ({instances} instances each)",
             detail)


# ---------------------------------------------------------------------------
# 3. Adam matches a hand-written trace, including injected penalty terms
# ---------------------------------------------------------------------------


def test_criterion_03_adam_hand_trace(announce):
    curvature, target, lr = 2.0, -0.7, 0.05
    params = {"w": np.array([1.3])}
    state = AdamState(lr=lr)

    x, m, v = 1.3, 0.0, 0.0
    worst = 0.0
    for step in range(10):
        g = curvature * (x - target)
        if step >= 5:  # anchoring term joins the gradient mid-run
            g = g + 0.4 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        t = step + 1
        m_hat = m / (1.0 - 0.9 ** t)
        v_hat = v / (1.0 - 0.999 ** t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + 1e-8)

        grad = {"w": curvature * (params["w"] - target)}
        if step >= 5:
            grad = inject_regularized_gradient(grad, {"w": 0.4 * params["w"]})
        state, params = adam_step(state, params, grad)
        worst = max(worst, abs(float(params["w"][0]) - x))

    ok = worst <= 1e-12 and state.t == 10
    announce(3, ok, "ten Adam steps on a scalar quadratic match the hand "
                    "trace to 1e-12, with the regularized gradient injected",
             f"max |diff| = {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. path-integral importance: online accumulation equals post-hoc recompute
# ---------------------------------------------------------------------------


def test_criterion_04_si_path_integral(announce):
    datasets = make_synthetic_task(num_classes=4, dim=6,
                                   per_center_counts=(20, 6, 6), n_centers=1,
                                   seed=7, cluster_std=0.2)
    x, y = datasets[0].train.inputs, datasets[0].train.labels
    model = ModelSpec(feature_layers=(Dense(6, 8), ReLU()),
                      head_layers=(Dense(8, 4),))
    params = init_params(model, 0)
    strategy = make_strategy("si")
    strategy.on_center_start(params)
    state = AdamState(lr=0.01)
    rng = np.random.default_rng(11)
    trajectory = []
    for _ in range(50):
        idx = rng.choice(x.shape[0], size=8, replace=False)
        _, grads = loss_and_grad(model, params, x[idx], y[idx])
        before = clone_params(params)
        state, params = optimizer_step(state, params, grads)
        after = clone_params(params)
        strategy.on_step(grads, before, after)
        trajectory.append((grads, before, after))

    posthoc = {k: np.zeros_like(p) for k, p in params.items()}
    for grads, before, after in trajectory:
        for k in posthoc:
            posthoc[k] += grads[k] * (after[k] - before[k])
    online = strategy.acc.w
    w_err = max(np.abs(online[k] - posthoc[k]).max() for k in posthoc)

    theta_start = clone_params(strategy.acc.start)
    w_snapshot = clone_params(online)
    strategy.on_center_end(model, params, x, y, CrossEntropy(), None)
    omega_err = 0.0
    for k in params:
        expected = np.maximum(
            w_snapshot[k] / ((params[k] - theta_start[k]) ** 2 + 1e-3), 0.0)
        omega_err = max(omega_err,
                        float(np.abs(strategy.omega[k] - expected).max()))

    ok = w_err <= 1e-10 and omega_err <= 1e-12
    announce(4, ok, "online path integral equals the post-hoc sum over a "
                    "50-step trajectory and the importance update matches "
                    "direct evaluation",
             f"w err = {w_err:.2e}, importance err = {omega_err:.2e}")


# ---------------------------------------------------------------------------
# 5. model-merging identities
# ---------------------------------------------------------------------------


def test_criterion_05_merge_identities(announce):
    rng = np.random.default_rng(5)
    shapes = {"w": (4, 3), "b": (5,)}
    n = 4

    def random_params(scale=1.0):
        return {k: rng.normal(0, scale, size=s) for k, s in shapes.items()}

    models = [random_params() for _ in range(n)]
    fishers = [{k: rng.uniform(0.0, 2.0, size=s) for k, s in shapes.items()}
               for _ in range(n)]
    archive = ImmArchive(entries={
        i + 1: ImmEntry(models[i], fishers[i], produced_after=i + 1)
        for i in range(n)})

    merged = imm_merge_mean(archive)
    mean_err = 0.0
    for k in shapes:
        loop = np.zeros(shapes[k])
        for m in models:
            loop = loop + m[k]
        loop /= n
        mean_err = max(mean_err, float(np.abs(merged[k] - loop).max()))

    shared = {k: rng.uniform(0.1, 2.0, size=s) for k, s in shapes.items()}
    equal_archive = ImmArchive(entries={
        i + 1: ImmEntry(models[i], clone_params(shared), produced_after=i + 1)
        for i in range(n)})
    mode_equal = imm_merge_mode(equal_archive)
    mean_equal = imm_merge_mean(equal_archive)
    equal_exact = all(np.array_equal(mode_equal[k], mean_equal[k])
                      for k in shapes)

    weights, _ = imm_mode_weights(archive)
    sum_err = 0.0
    for k in shapes:
        total = np.zeros(shapes[k])
        for i in range(n):
            total = total + weights[i][k]
        sum_err = max(sum_err, float(np.abs(total - 1.0).max()))
    constant_archive = ImmArchive(entries={
        i + 1: ImmEntry({k: np.full(s, 3.25) for k, s in shapes.items()},
                        fishers[i], produced_after=i + 1)
        for i in range(n)})
    constant_merge = imm_merge_mode(constant_archive)
    const_err = max(float(np.abs(constant_merge[k] - 3.25).max())
                    for k in shapes)

    ok = mean_err <= 1e-15 and equal_exact and sum_err <= 1e-12 \
        and const_err <= 1e-12
    announce(5, ok, "mean merge equals the scalar loop, equal-importance "
                    "mode merge equals mean exactly, and mode weights sum "
                    "to one per parameter",
             f"mean err = {mean_err:.1e}, weight-sum err = {sum_err:.1e}")


# ---------------------------------------------------------------------------
# 6. evaluation metrics against brute-force loops
# ---------------------------------------------------------------------------


def test_criterion_06_metric_oracles(announce):
    rng = np.random.default_rng(6)
    worst_acc, worst_mono = 0.0, 0.0
    for case in range(100):
        centers = int(rng.integers(1, 7))
        visits = int(rng.integers(2, 8))
        values = rng.uniform(0.0, 100.0, size=(centers, visits))
        if case % 2:  # half the cases carry missing early cells
            holes = rng.random(size=(centers, visits)) < 0.15
            holes[:, -1] = False
            holes[0, :] = False
            values = np.where(holes, np.nan, values)
        matrix = AccuracyMatrix(values)

        total = count = 0.0
        for mu in range(centers):
            total += values[mu, visits - 1]
            count += 1
        worst_acc = max(worst_acc,
                        abs(mean_accuracy(matrix) - total / count))

        pairs = kept = 0
        for mu in range(centers):
            for v in range(visits - 1):
                a, b = values[mu, v], values[mu, v + 1]
                if np.isnan(a) or np.isnan(b):
                    continue
                pairs += 1
                if b >= a:
                    kept += 1
        worst_mono = max(worst_mono,
                         abs(monotonicity(matrix) - kept / pairs))

    exact = (
        monotonicity(AccuracyMatrix(np.array([[1.0, 2.0, 3.0]]))) == 1.0
        and monotonicity(AccuracyMatrix(np.array([[3.0, 2.0, 1.0]]))) == 0.0
        and monotonicity(AccuracyMatrix(np.array([[1.0, 2.0, 1.0]]))) == 0.5)

    ok = worst_acc <= 1e-12 and worst_mono <= 1e-12 and exact
    announce(6, ok, "accuracy and monotonicity match brute-force loops on "
                    "100 random matrices and the three canonical rows",
             f"acc err = {worst_acc:.1e}, mono err = {worst_mono:.1e}")


# ---------------------------------------------------------------------------
# 7. one cyclic iteration with the full budget reproduces the single pass
# ---------------------------------------------------------------------------


def test_criterion_07_single_iteration_cycle_equals_single_pass(announce):
    datasets = make_synthetic_task(num_classes=4, dim=8,
                                   per_center_counts=(15, 6, 6), n_centers=3,
                                   seed=2, cluster_std=0.2)
    model = ModelSpec(feature_layers=(Dense(8, 12), ReLU()),
                      head_layers=(Dense(12, 4),))
    ok, detail = True, []
    for method in ("ft", "lwf"):
        settings = RunSettings(seed=1, batch_size=20)
        swt = run_swt(model, datasets, method, settings, epochs_per_center=6)
        cwt = run_cwt(model, datasets, method, settings, e_transfer=6,
                      iterations=1)
        same = (np.array_equal(swt.matrix.values, cwt.matrix.values,
                               equal_nan=True)
                and params_equal(swt.final_params, cwt.final_params)
                and params_equal(swt.final_eval_params,
                                 cwt.final_eval_params))
        detail.append(f"{method}: {'identical' if same else 'diverged'}")
        ok = ok and same
    announce(7, ok, "a one-iteration cycle with the single-pass epoch budget "
                    "is bit-identical to the single pass for ft and lwf",
             "; ".join(detail))


# ---------------------------------------------------------------------------
# 8. serialize, restore, resume: bit-exact continuation
# ---------------------------------------------------------------------------


def test_criterion_08_checkpoint_resume_round_trip(announce):
    datasets = make_synthetic_task(num_classes=5, dim=10,
                                   per_center_counts=(20, 8, 8), n_centers=2,
                                   seed=3, cluster_std=0.2)
    model = ModelSpec(feature_layers=(Dense(10, 12), ReLU()),
                      head_layers=(Dense(12, 5),))
    # 4 visits x 13 epochs x 2 batches = 104 optimizer steps
    settings = RunSettings(seed=0, batch_size=50, e_stop=10 ** 6)
    kwargs = dict(e_transfer=13, iterations=2)

    full = run_cwt(model, datasets, "ewc", settings, **kwargs)
    half = run_cwt(model, datasets, "ewc", settings, stop_after_visits=2,
                   **kwargs)
    blob = encode_checkpoint(half.resume.checkpoint)
    from itlsim.checkpoint import decode_checkpoint
    resumed = run_cwt(model, datasets, "ewc", settings,
                      resume_state=ResumeState(
                          checkpoint=decode_checkpoint(blob),
                          visits_done=half.visits_completed,
                          matrix_values=half.matrix.values), **kwargs)

    no_stop = full.resume.checkpoint.provenance.epoch == 13
    same_matrix = np.array_equal(full.matrix.values, resumed.matrix.values,
                                 equal_nan=True)
    same_params = params_equal(full.final_params, resumed.final_params)
    # byte equality covers Adam moments and the importance maps verbatim
    same_bytes = encode_checkpoint(full.resume.checkpoint) == \
        encode_checkpoint(resumed.resume.checkpoint)
    ok = no_stop and same_matrix and same_params and same_bytes
    announce(8, ok, "encode, decode, resume reproduces the uninterrupted "
                    "104-step run bit-exactly, optimizer moments and "
                    "importance maps included",
             f"matrix={same_matrix}, params={same_params}, "
             f"bytes={same_bytes}")


# ---------------------------------------------------------------------------
# 9. regularized transfer keeps accuracy monotone on the noisy-center task
# ---------------------------------------------------------------------------


def test_criterion_09_noisy_center_regularization_trend(trend_results,
                                                        announce):
    ft = trend_results["ft"]
    holds, parts = [], []
    for method in ("lwf", "imm-mean", "imm-mode"):
        r = trend_results[method]
        trend = r["mono"] > ft["mono"] and r["acc"] >= ft["acc"] - 0.5
        holds.append(trend)
        parts.append(f"{method} mono {r['mono']:.3f} acc {r['acc']:.2f} "
                     f"{'holds' if trend else 'fails'}")
    within_budget = trend_results["_elapsed"] < 900.0
    ok = sum(holds) >= 2 and within_budget
    announce(9, ok, "lwf/imm-mean/imm-mode beat ft on monotonicity without "
                    "losing accuracy (>= 2 of 3, 10 seeds)",
             f"ft mono {ft['mono']:.3f} acc {ft['acc']:.2f}; "
             + "; ".join(parts)
             + f"; elapsed {trend_results['_elapsed']:.0f}s")


# ---------------------------------------------------------------------------
# 10. pooled > best transfer > isolated per-center models
# ---------------------------------------------------------------------------


def test_criterion_10_baseline_ordering(trend_results, announce):
    best_method = max(TREND_METHODS, key=lambda m: trend_results[m]["acc"])
    best = trend_results[best_method]["acc"]
    joint = trend_results["joint"]
    isolated = trend_results["it-global"]
    ok = joint > best > isolated and (joint - isolated) >= 1.0
    announce(10, ok, "pooled training beats the best transfer method, which "
                     "beats isolated per-center models, with >= 1 point "
                     "between the extremes (10 seeds)",
             f"joint {joint:.2f} > {best_method} {best:.2f} > "
             f"isolated {isolated:.2f}")


# ---------------------------------------------------------------------------
# 11. per-center heads forget much more than a shared head
# ---------------------------------------------------------------------------


def test_criterion_11_multi_head_forgetting(announce):
    datasets = make_noisy_task()
    means = {}
    for label, head in (("single", SingleHead()), ("multi", MultiHead(5))):
        accs = [mean_accuracy(
            run_swt(make_model(head), datasets, "ft", RunSettings(seed=seed),
                    epochs_per_center=50).matrix) for seed in range(N_SEEDS)]
        means[label] = float(np.mean(accs))
    gap = means["single"] - means["multi"]
    ok = gap >= 5.0
    announce(11, ok, "per-center heads end >= 5 points below the shared "
                     "head after a single pass (10 seeds)",
             f"single {means['single']:.2f}, multi {means['multi']:.2f}, "
             f"gap {gap:.2f}")
