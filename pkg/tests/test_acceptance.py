"""Acceptance suite: one test per criterion, each at its stated tolerance.

Training-based criteria run at desk scale on synthetic data (5000 train /
1000 validation samples, 30 epochs) and take a few minutes in total.
"""

import time

import numpy as np
import pytest

from bindelta import binning, cli, metrics, models, selftest
from bindelta.data import SynthConfig, generate_synthetic, split

SEEDS = (0, 1, 2)


def desk_data(seed=0, symmetry_order=1):
    ds = generate_synthetic(SynthConfig(n_samples=6000, feature_dim=64, seed=seed, symmetry_order=symmetry_order))
    return split(ds, 1 / 6, seed=seed)


def val_mederr(tag, tr, va, seed, **cfg):
    params, _ = models.train(tag, tr, va, models.TrainConfig(seed=seed, **cfg))
    return models.evaluate(params, va.features, va.poses).mean_med_err, params


def test_criterion_1_so3_suite(verdict):
    t = time.perf_counter()
    results = [selftest.check_roundtrip(), selftest.check_trace_formula(), selftest.check_bi_invariance()]
    elapsed = time.perf_counter() - t
    ok = all(r.passed for r in results) and elapsed < 5.0
    detail = "; ".join(f"{r.name} {r.detail}" for r in results)
    assert verdict(1, ok, f"{detail}; {elapsed:.2f}s (limit 5s)")


def test_criterion_2_gradient_suite(verdict):
    t = time.perf_counter()
    results = {tag: selftest.gradient_probes(tag, n_probes=100) for tag in models.VARIANTS}
    elapsed = time.perf_counter() - t
    worst = max(err for err, _, _ in results.values())
    ok = all(err <= 1e-4 and probes >= 100 for err, probes, _ in results.values()) and elapsed < 60.0
    assert verdict(2, ok, f"11 variants x 100 probes, worst relative error {worst:.2e} (tol 1e-4); "
                          f"{elapsed:.1f}s (limit 60s)")


def test_criterion_3_composition_roundtrip(verdict):
    results = [selftest.check_composition(mode) for mode in binning.DELTA_MODES]
    assert verdict(3, all(r.passed for r in results), "; ".join(f"{r.name} {r.detail}" for r in results))


def test_criterion_4_quantization_floor(verdict):
    t = time.perf_counter()
    tr, va = desk_data()
    c_err, c_params = val_mederr("C", tr, va, 0, K=16)
    g_err, g_params = val_mederr("M_G", tr, va, 0, K=16)
    np.testing.assert_array_equal(c_params.key_poses, g_params.key_poses)
    floor = binning.quantization_floor(c_params.dictionary, va.poses)["median"]
    elapsed = time.perf_counter() - t
    ok = c_err >= floor - 0.5 and g_err <= 0.8 * floor and elapsed < 600
    assert verdict(4, ok, f"floor {floor:.2f} deg, C {c_err:.2f} deg (>= floor - 0.5), "
                          f"M_G {g_err:.2f} deg (<= {0.8 * floor:.2f}); {elapsed:.0f}s")


def test_criterion_5_multimodal_regression(verdict):
    r_g, m_g = [], []
    for seed in SEEDS:
        tr, va = desk_data(seed, symmetry_order=2)
        r_g.append(val_mederr("R_G", tr, va, seed)[0])
        m_g.append(val_mederr("M_G", tr, va, seed, K=16)[0])
    ok = np.mean(r_g) >= 1.5 * np.mean(m_g)
    assert verdict(5, ok, f"s=2: R_G {np.mean(r_g):.2f} deg {np.round(r_g, 2).tolist()}, "
                          f"M_G {np.mean(m_g):.2f} deg {np.round(m_g, 2).tolist()}; need R_G >= 1.5 x M_G")


def test_criterion_6_geodesic_beats_euclidean(verdict):
    r_g, r_e = [], []
    for seed in SEEDS:
        tr, va = desk_data(seed)
        r_g.append(val_mederr("R_G", tr, va, seed)[0])
        r_e.append(val_mederr("R_E", tr, va, seed)[0])
    ok = np.mean(r_g) < np.mean(r_e)
    assert verdict(6, ok, f"R_G {np.mean(r_g):.2f} deg vs R_E {np.mean(r_e):.2f} deg (mean of 3 seeds)")


def sweep(variant, key, values):
    cfg = cli.ExperimentConfig(variant=variant, sweep={key: list(values)}, n_seeds=len(SEEDS),
                               synthetic={"n_samples": 6000, "feature_dim": 64})
    t = time.perf_counter()
    table = cli.run_sweep(cfg)
    return table, time.perf_counter() - t


def test_criterion_7_ablation_trends(verdict):
    k_table, k_time = sweep("M_G", "K", (4, 16, 64))
    k_mean = [r["mean_med_err"] for r in k_table]
    k_std = [r["std_med_err"] for r in k_table]
    k_ok = all(k_mean[i + 1] <= k_mean[i] + max(k_std[i], k_std[i + 1]) for i in range(2)) and k_time < 1800

    a_table, a_time = sweep("M_G+", "alpha", (0.1, 1.0, 10.0))
    a_mean = [r["mean_med_err"] for r in a_table]
    a_ok = int(np.argmin(a_mean)) == 2 and a_time < 1800

    k_text = ", ".join(f"K={r['K']}: {m:.2f}+-{s:.2f}" for r, m, s in zip(k_table, k_mean, k_std))
    a_text = ", ".join(f"alpha={r['alpha']}: {r['mean_med_err']:.2f}+-{r['std_med_err']:.2f}" for r in a_table)
    assert verdict(7, k_ok and a_ok,
                   f"M_G K sweep [{k_text}] {'non-increasing' if k_ok else 'INCREASING'} ({k_time:.0f}s); "
                   f"M_G+ alpha sweep [{a_text}] best at alpha={a_table[int(np.argmin(a_mean))]['alpha']} "
                   f"({a_time:.0f}s)")


def test_criterion_8_determinism(verdict, tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli.main(["train", "--variant", "M_G+", "--seed", "7", "--epochs", "5", "--out", str(out)])
        runs.append((code, (out / "history.csv").read_bytes()))
    ok = runs[0][0] == runs[1][0] == 0 and runs[0][1] == runs[1][1]
    assert verdict(8, ok, f"two M_G+ runs, seed 7: history.csv {'bit-identical' if ok else 'differs'} "
                          f"({len(runs[0][1])} bytes)")


def test_criterion_9_metric_fixtures(verdict):
    preds = np.zeros((3, 3))
    gts = np.array([[0, 0, np.radians(a)] for a in (10.0, 20.0, 40.0)])
    rep = metrics.compute_metrics(preds, gts)
    table = metrics.read_report_csv(metrics.reference_table_path())
    ok = (rep.mean_med_err == pytest.approx(20.0, abs=1e-9) and rep.mean_acc == pytest.approx(2 / 3, abs=1e-12)
          and table.mean_med_err == 10.10 and table.mean_acc == 0.8588)
    assert verdict(9, ok, f"3-sample MedErr {rep.mean_med_err:.6f} deg, Acc {rep.mean_acc:.6f}; "
                          f"reference table mean {table.mean_med_err} / {table.mean_acc}")
