"""Acceptance suite: every criterion gets a test that prints a pass line.

Benchmark thresholds marked "frozen reference" were recorded from the
deterministic seed-0 reference run of this implementation and guard
against regressions beyond the stated criteria.
"""

import json
import time
from dataclasses import replace
from itertools import combinations
from types import SimpleNamespace

import numpy as np
import pytest

from singlepos.cli import ExperimentConfig, config_from_dict, run_experiment
from singlepos.data import (
    NEGATIVE,
    apply_corruption,
    corrupt_single_positive,
    record_all_observed,
    split_train_val,
    synthesize_dataset,
)
from singlepos.evaluation import (
    average_precision,
    label_recovery_map,
    mean_average_precision,
    unobserved_positive_histogram,
)
from singlepos.kestimate import k_confidence_interval
from singlepos.losses import (
    EPSILON_CLAMP,
    build_coefficients,
    expected_count,
    loss_epr,
    loss_pairwise_ranking,
    pseudo_negative_draw,
    weighted_bce,
)
from singlepos.model import LinearModel, backward, forward, init_linear_model
from singlepos.role import loss_prime, loss_role
from singlepos.trainer import (
    TrainConfig,
    derive_seed,
    fit_with_validation,
    grid_search,
    make_grid,
)

from conftest import random_multilabel
from oracles import (
    finite_difference,
    gradient_rel_error,
    pairwise_counting_ap,
    scalar_bce_family,
    scalar_epr,
    scalar_pairwise_ranking,
    scalar_role,
)

GRAD_TOL = 1e-5
FD_STEP = 1e-6


# ---------------------------------------------------------------------------
# criterion 1: gradient suite
# ---------------------------------------------------------------------------

GRAD_MODES = [
    "bce", "bce_ls", "iu", "iun", "an", "wan", "an_ls", "an_ls_asym",
    "pr", "epr", "role_theta", "role_phi",
]


def _draw_instance(rng, mode):
    n_rows = int(rng.integers(1, 4))
    n_classes = int(rng.integers(3, 7))
    n_features = int(rng.integers(2, 6))
    full = random_multilabel(rng, n_rows, n_classes)
    observed = corrupt_single_positive(full, int(rng.integers(1 << 62)))
    if mode == "iu":
        observed = record_all_observed(full)  # needs observed negatives
    features = rng.normal(size=(n_rows, n_features))
    model = init_linear_model(n_features, n_classes, int(rng.integers(1 << 62)))
    predictions = rng.uniform(0.08, 0.92, (n_rows, n_classes))
    estimates = rng.uniform(0.15, 0.85, (n_rows, n_classes))
    k = float(rng.uniform(0.5, n_classes - 0.5))
    lam = float(rng.uniform(0.0, 2.0))
    return SimpleNamespace(**locals())


def _loss_closure(inst, mode):
    """value(predictions) plus the analytic prediction gradient."""
    if mode in ("pr",):
        fun = lambda f: loss_pairwise_ranking(f, inst.observed).value
        grad = loss_pairwise_ranking(inst.predictions, inst.observed).grad_predictions
    elif mode == "epr":
        fun = lambda f: loss_epr(f, inst.observed, inst.k, inst.lam).value
        grad = loss_epr(inst.predictions, inst.observed, inst.k, inst.lam).grad_predictions
    elif mode == "role_theta":
        fun = lambda f: 0.5 * loss_prime(f, inst.estimates, inst.observed, inst.k, inst.lam).value
        grad = loss_role(inst.predictions, inst.estimates, inst.observed,
                         inst.k, inst.lam).grad_predictions
    elif mode == "role_phi":
        fun = lambda y: 0.5 * loss_prime(y, inst.predictions, inst.observed, inst.k, inst.lam).value
        grad = loss_role(inst.predictions, inst.estimates, inst.observed,
                         inst.k, inst.lam).grad_estimates
        return fun, grad, inst.estimates
    else:
        coeffs = build_coefficients(mode, inst.observed, inst.full)
        fun = lambda f: weighted_bce(f, coeffs).value
        grad = weighted_bce(inst.predictions, coeffs).grad_predictions
    return fun, grad, inst.predictions


def _kink_free(predictions):
    margins = 1.0 - predictions[..., :, None] + predictions[..., None, :]
    return np.abs(margins).min() > 1e-4


def test_criterion_1_gradient_suite():
    started = time.perf_counter()
    n_instances = 100
    for mode in GRAD_MODES:
        rng = np.random.default_rng(100 + GRAD_MODES.index(mode))
        for _ in range(n_instances):
            inst = _draw_instance(rng, mode)
            while mode == "pr" and not (
                _kink_free(inst.predictions) and _kink_free(forward(inst.model, inst.features))
            ):
                inst = _draw_instance(rng, mode)
            # loss-level gradient with respect to the prediction argument
            fun, analytic, point = _loss_closure(inst, mode)
            numeric = finite_difference(fun, point, h=FD_STEP)
            assert gradient_rel_error(analytic, numeric) <= GRAD_TOL, mode

            # end-to-end through the linear model (theta side)
            if mode == "role_phi":
                continue
            model_predictions = forward(inst.model, inst.features)
            fun_e2e, _, _ = _loss_closure(
                SimpleNamespace(**{**vars(inst), "predictions": model_predictions}), mode
            )
            grad_w, grad_b = backward(
                inst.model, inst.features, None,
                _analytic_grad_at(inst, mode, model_predictions),
            )
            numeric_w = finite_difference(
                lambda w: fun_e2e(forward(LinearModel(w, inst.model.bias), inst.features)),
                inst.model.weights, h=FD_STEP,
            )
            numeric_b = finite_difference(
                lambda b: fun_e2e(forward(LinearModel(inst.model.weights, b), inst.features)),
                inst.model.bias, h=FD_STEP,
            )
            assert gradient_rel_error(grad_w, numeric_w) <= GRAD_TOL, mode
            assert gradient_rel_error(grad_b, numeric_b) <= GRAD_TOL, mode

    # phi-side end-to-end: gradient through the sigmoid lookup table
    rng = np.random.default_rng(999)
    from scipy.special import expit

    for _ in range(n_instances):
        inst = _draw_instance(rng, "role_phi")
        phi = rng.normal(size=inst.estimates.shape)
        estimates = np.clip(expit(phi), EPSILON_CLAMP, 1 - EPSILON_CLAMP)
        result = loss_role(inst.predictions, estimates, inst.observed, inst.k, inst.lam)
        grad_phi = result.grad_estimates * estimates * (1 - estimates)
        numeric = finite_difference(
            lambda p: 0.5 * loss_prime(
                np.clip(expit(p), EPSILON_CLAMP, 1 - EPSILON_CLAMP),
                inst.predictions, inst.observed, inst.k, inst.lam,
            ).value,
            phi, h=FD_STEP,
        )
        assert gradient_rel_error(grad_phi, numeric) <= GRAD_TOL

    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"
    print(f"[criterion 1] PASS gradient suite: {len(GRAD_MODES)} modes x "
          f"{n_instances} instances, rel err <= {GRAD_TOL}, {elapsed:.1f}s")


def _analytic_grad_at(inst, mode, predictions):
    if mode == "pr":
        return loss_pairwise_ranking(predictions, inst.observed).grad_predictions
    if mode == "epr":
        return loss_epr(predictions, inst.observed, inst.k, inst.lam).grad_predictions
    if mode == "role_theta":
        return loss_role(predictions, inst.estimates, inst.observed,
                         inst.k, inst.lam).grad_predictions
    coeffs = build_coefficients(mode, inst.observed, inst.full)
    return weighted_bce(predictions, coeffs).grad_predictions


# ---------------------------------------------------------------------------
# criterion 2: closed-form scalar oracles
# ---------------------------------------------------------------------------

def test_criterion_2_closed_form_oracles():
    P, U = 1, -1
    z3 = np.array([[P, U, U]])
    f3 = np.array([[0.9, 0.1, 0.2]])
    z2 = np.array([[P, U]])
    f2 = np.array([[0.9, 0.1]])
    fe = np.array([[0.995, 0.5]])

    cases = [
        ("an", weighted_bce(f3, build_coefficients("an", z3)).value,
         scalar_bce_family(f3, z3, mode="an"), 0.144621527543287),
        ("wan", weighted_bce(f3, build_coefficients("wan", z3, gamma=0.5)).value,
         scalar_bce_family(f3, z3, mode="wan", gamma=0.5), 0.089870849714615),
        ("an_ls", weighted_bce(f2, build_coefficients("an_ls", z2, eps_p=0.1, eps_n=0.1)).value,
         scalar_bce_family(f2, z2, mode="an_ls", eps_p=0.1), 0.215221744524637),
        ("epr", loss_epr(fe, z2, k=1.0, epr_lambda=1.0).value,
         scalar_epr(fe, z2, k=1.0, lam=1.0), 0.066268791823544),
        ("role", loss_role(fe, fe, z2, k=1.0, epr_lambda=1.0).value,
         scalar_role(fe, fe, z2, k=1.0, lam=1.0), 0.428581915077100),
        ("pr", loss_pairwise_ranking(f3, z3).value,
         scalar_pairwise_ranking(f3, z3), 0.5),
    ]
    for name, library, oracle, frozen in cases:
        assert abs(library - oracle) <= 1e-9, name
        assert abs(library - frozen) <= 1e-9, name
    print("[criterion 2] PASS closed-form oracles: "
          + ", ".join(f"{n}={lib:.6f}" for n, lib, _, _ in cases))


# ---------------------------------------------------------------------------
# criterion 3: reduction identities
# ---------------------------------------------------------------------------

def test_criterion_3_reduction_identities():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n_rows, n_classes = int(rng.integers(1, 4)), int(rng.integers(2, 8))
        full = random_multilabel(rng, n_rows, n_classes)
        observed = corrupt_single_positive(full, int(rng.integers(1 << 62)))
        predictions = rng.uniform(0.05, 0.95, (n_rows, n_classes))

        def value(mode, z=observed, y=None, **kw):
            return weighted_bce(predictions, build_coefficients(mode, z, y, **kw)).value

        assert abs(value("an_ls", eps_p=0.0, eps_n=0.0) - value("an")) <= 1e-12
        eps = float(rng.uniform(0.0, 0.5))
        assert abs(value("an_ls_asym", eps_p=eps, eps_n=eps)
                   - value("an_ls", eps_p=eps, eps_n=eps)) <= 1e-12
        assert abs(value("wan", gamma=1.0) - value("an")) <= 1e-12

        # IUN == BCE when every row has exactly the one kept positive
        single = np.zeros((n_rows, n_classes), dtype=np.int8)
        single[np.arange(n_rows), rng.integers(0, n_classes, n_rows)] = 1
        kept = corrupt_single_positive(single, int(rng.integers(1 << 62)))
        assert abs(value("iun", z=kept, y=single) - value("bce", z=kept, y=single)) <= 1e-12
    print("[criterion 3] PASS reduction identities on 100 instances at 1e-12")


# ---------------------------------------------------------------------------
# criterion 4: pseudo-negative expectation equivalence
# ---------------------------------------------------------------------------

def test_criterion_4_wan_expectation_equivalence():
    started = time.perf_counter()
    n_draws = 100_000
    rng = np.random.default_rng(42)
    for instance in range(10):
        n_classes = int(rng.integers(3, 9))
        full = np.zeros((1, n_classes), dtype=np.int8)
        full[0, rng.integers(n_classes)] = 1
        observed = corrupt_single_positive(full, int(rng.integers(1 << 62)))
        predictions = rng.uniform(0.05, 0.95, (1, n_classes))
        wan = weighted_bce(predictions, build_coefficients("wan", observed)).value

        # one stacked call draws n_draws independent pseudo-negatives
        stacked = np.repeat(observed, n_draws, axis=0)
        drawn = pseudo_negative_draw(stacked, np.random.default_rng(1000 + instance))
        flipped = np.argmax(drawn == NEGATIVE, axis=1)
        per_candidate = np.full(n_classes, np.nan)
        for candidate in np.unique(flipped):
            with_neg = observed.copy()
            with_neg[0, candidate] = NEGATIVE
            per_candidate[candidate] = weighted_bce(
                predictions, build_coefficients("iu", with_neg)
            ).value
        values = per_candidate[flipped]
        mc_mean = values.mean()
        mc_se = values.std(ddof=1) / np.sqrt(n_draws)
        assert abs(mc_mean - wan) <= 3.0 * mc_se + 1e-12, instance
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"expectation check took {elapsed:.1f}s"
    print(f"[criterion 4] PASS pseudo-negative expectation: 10 instances x "
          f"{n_draws} draws within 3 SE, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 5: ranking metric against the pairwise-counting oracle
# ---------------------------------------------------------------------------

def test_criterion_5_map_oracle():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(3, 50))
        scores = rng.integers(0, 8, size=n).astype(float) if rng.random() < 0.5 \
            else rng.normal(size=n)
        labels = (rng.random(n) < 0.35).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        assert abs(average_precision(scores, labels)
                   - pairwise_counting_ap(scores, labels)) <= 1e-12
    # matrix-level macro average against per-class oracle values
    for _ in range(20):
        labels = random_multilabel(rng, 25, 5)
        predictions = rng.random((25, 5))
        report = mean_average_precision(predictions, labels)
        oracle = np.mean([
            pairwise_counting_ap(predictions[:, i], labels[:, i]) for i in range(5)
        ])
        assert abs(report.map - oracle) <= 1e-12
    print("[criterion 5] PASS AP/MAP equals the O(n^2) pairwise oracle on 1000 instances")


# ---------------------------------------------------------------------------
# criterion 6: synthetic benchmark
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    started = time.perf_counter()
    bundle = synthesize_dataset(3000, 32, 10, target_k=2.0, seed=0)
    trainval, held = split_train_val(bundle, 500 / 3000, derive_seed(0, 11))
    test = replace(held, split_tag="test")
    trainval = apply_corruption(trainval, "single_pos", seed=0)
    train, val = split_train_val(trainval, 500 / 2500, derive_seed(0, 12))
    k = float(train.full_labels.sum(axis=1).mean())

    def fit(loss, epr_lambda=1.0):
        base = TrainConfig(loss_mode=loss, learning_rate=1e-3, batch_size=16,
                           epochs=25, k=k, epr_lambda=epr_lambda, seed=0)
        return grid_search(train, val, make_grid(base, [1e-2, 1e-3]))

    searches = {loss: fit(loss) for loss in ("an", "an_ls")}
    # the count penalty needs enough weight to bind within 25 epochs;
    # 100.0 comes from the frozen reference run (val MAP stays within 0.02
    # of the unconstrained optimum there)
    searches["epr"] = fit("epr", epr_lambda=100.0)
    role_search = fit("role")
    top_decile = {}
    min_positive_estimate = []

    def hook(epoch, state):
        masses, _ = unobserved_positive_histogram(
            forward(state.model, train.features), train.full_labels,
            train.observed_labels, 10,
        )
        top_decile[epoch] = masses[-1]
        estimates = state.estimator.estimates()
        min_positive_estimate.append(estimates[train.observed_labels == 1].min())

    role_fit = fit_with_validation(train, val, role_search.best_config, epoch_hook=hook)
    searches["role"] = role_search

    def test_map(fit_result):
        return mean_average_precision(
            forward(fit_result.best_model, test.features), test.full_labels
        ).map

    def recovery(fit_result):
        return label_recovery_map(
            forward(fit_result.best_model, train.features), train.full_labels
        ).map

    elapsed = time.perf_counter() - started
    return SimpleNamespace(
        train=train, test=test, k=k, searches=searches, role_fit=role_fit,
        top_decile=top_decile, min_positive_estimate=min_positive_estimate,
        test_map=test_map, recovery=recovery, elapsed=elapsed,
    )


def test_criterion_6a_epr_count_constraint(benchmark):
    fit = benchmark.searches["epr"].best_fit
    k_hat = expected_count(forward(fit.final_model, benchmark.train.features))
    deviation = abs(k_hat - benchmark.k)
    assert deviation <= 0.25
    assert deviation <= 0.20  # frozen reference: 0.153
    print(f"[criterion 6a] PASS expected-count constraint: |k_hat - k| = {deviation:.3f}")


def test_criterion_6b_role_recovery_beats_an(benchmark):
    role = benchmark.recovery(benchmark.searches["role"].best_fit)
    an = benchmark.recovery(benchmark.searches["an"].best_fit)
    assert role > an
    assert role >= 0.95  # frozen reference: 0.9654
    print(f"[criterion 6b] PASS label recovery: role {role:.4f} > an {an:.4f}")


def test_criterion_6c_test_map_ordering(benchmark):
    an = benchmark.test_map(benchmark.searches["an"].best_fit)
    an_ls = benchmark.test_map(benchmark.searches["an_ls"].best_fit)
    role = benchmark.test_map(benchmark.searches["role"].best_fit)
    assert role >= an - 0.01
    assert an_ls >= an - 0.01
    assert an >= 0.93 and role >= 0.95  # frozen reference: 0.9453 / 0.9651
    print(f"[criterion 6c] PASS test MAP: an {an:.4f}, an_ls {an_ls:.4f}, role {role:.4f}")


def test_criterion_6d_histogram_mass_moves_up(benchmark):
    first, last = benchmark.top_decile[1], benchmark.top_decile[25]
    assert last > first
    assert last >= 0.5  # frozen reference: 0.714 vs 0.203 at epoch 1
    print(f"[criterion 6d] PASS hidden-positive top-decile mass: "
          f"epoch1 {first:.3f} -> epoch25 {last:.3f}")


def test_benchmark_observed_positive_estimates_stay_confident(benchmark):
    floor = min(benchmark.min_positive_estimate)
    assert floor >= 0.9  # frozen reference: 0.959
    print(f"[criterion 6 extra] PASS observed-positive estimates never drop "
          f"below {floor:.3f}")


def test_criterion_6_runtime(benchmark):
    assert benchmark.elapsed < 300.0
    print(f"[criterion 6] PASS benchmark runtime {benchmark.elapsed:.0f}s < 300s")


# ---------------------------------------------------------------------------
# criterion 7: k estimation
# ---------------------------------------------------------------------------

def test_criterion_7_k_estimation():
    started = time.perf_counter()

    # exhaustive-enumeration example
    counts = [1, 2, 1, 2]
    labels = np.zeros((4, 3), dtype=np.int8)
    for row, count in enumerate(counts):
        labels[row, :count] = 1
    estimate = k_confidence_interval(labels, 2, trials=100_000, level=0.9, seed=0)
    assert estimate.interval == (1.0, 2.0)
    subset_means = sorted(
        labels[list(c)].sum(axis=1).mean() for c in combinations(range(4), 2)
    )
    exact = np.percentile(subset_means, [5, 95])
    grid_step = 0.5  # spacing between adjacent distinct subset means
    assert abs(estimate.interval[0] - exact[0]) <= 2 * grid_step
    assert abs(estimate.interval[1] - exact[1]) <= 2 * grid_step

    # interval width monotone (median over 100 seeds) at M = 5, 10, 25
    rng = np.random.default_rng(3)
    labels = (rng.random((400, 10)) < 0.2).astype(np.int8)
    medians = []
    for sample_size in (5, 10, 25):
        widths = [
            np.diff(k_confidence_interval(labels, sample_size, trials=1500,
                                          level=0.95, seed=s).interval)[0]
            for s in range(100)
        ]
        medians.append(float(np.median(widths)))
    assert medians[0] >= medians[1] >= medians[2]

    # coverage of the population k over 500 synthetic datasets
    hits = 0
    for trial in range(500):
        rng = np.random.default_rng(10_000 + trial)
        density = rng.uniform(0.1, 0.45)
        population = (rng.random((2000, 8)) < density).astype(np.int8)
        k_population = population.sum(axis=1).mean()
        sample = population[rng.choice(2000, size=100, replace=False)]
        lo, hi = k_confidence_interval(sample, 50, trials=800, level=0.95,
                                       seed=10_000 + trial).interval
        hits += lo <= k_population <= hi
    coverage = hits / 500
    assert 0.92 <= coverage <= 0.98

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    print(f"[criterion 7] PASS k estimation: interval (1.0, 2.0), widths "
          f"{[round(m, 2) for m in medians]}, coverage {coverage:.3f}, {elapsed:.0f}s")


@pytest.mark.skipif(
    "SINGLEPOS_VOC12_LABELS" not in __import__("os").environ,
    reason="set SINGLEPOS_VOC12_LABELS to a real VOC12 full-label CSV to run",
)
def test_criterion_7_voc12_interval():
    """With real VOC12 training labels the size-5 interval lands on (1.0, 2.0)."""
    import os

    from singlepos.data import load_labels, validate_full_labels

    labels = validate_full_labels(load_labels(os.environ["SINGLEPOS_VOC12_LABELS"]))
    estimate = k_confidence_interval(labels, 5, trials=100_000, level=0.9, seed=0)
    # one percentile grid step at M=5 is 0.2
    assert abs(estimate.interval[0] - 1.0) <= 0.2
    assert abs(estimate.interval[1] - 2.0) <= 0.2
    print(f"[criterion 7 voc12] PASS interval {estimate.interval}")


# ---------------------------------------------------------------------------
# criterion 8: determinism
# ---------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    config = ExperimentConfig(
        out_dir=str(tmp_path / "run"),
        n_train=300, n_val=80, n_test=80, n_features=12, n_classes=8,
        target_k=2.0, epochs=5, learning_rate=1e-2, batch_size=16, loss="role",
    )
    run_experiment(config)
    first = (tmp_path / "run" / "results.json").read_bytes()
    persisted = json.loads((tmp_path / "run" / "config.json").read_text())
    run_experiment(config_from_dict(persisted))
    second = (tmp_path / "run" / "results.json").read_bytes()
    assert first == second
    print("[criterion 8] PASS determinism: rerun from persisted config is byte-identical")
