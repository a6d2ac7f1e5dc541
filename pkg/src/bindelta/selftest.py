"""Property checks run by ``bindelta selftest``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
property, so a single run reports every broken invariant by name.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import binning, models, net, so3
from .metrics import compute_metrics, reference_table_path, read_report_csv


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_axis_angle(rng: np.random.Generator, n: int, max_norm: float) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0.0, max_norm, size=(n, 1))


def check_roundtrip(n: int = 10_000, seed: int = 0) -> CheckResult:
    y = random_axis_angle(np.random.default_rng(seed), n, np.pi - 1e-3)
    err = float(np.abs(so3.log_map(so3.exp_map(y)) - y).max())
    return CheckResult("so3.exp_log_roundtrip", err <= 1e-9, f"max error {err:.2e} (tol 1e-9, n={n})")


def check_roundtrip_near_pi(n: int = 2_000, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    y = v * (np.pi - 10.0 ** rng.uniform(-6, -4, size=(n, 1)))
    err = float(np.abs(so3.log_map(so3.exp_map(y)) - y).max())
    return CheckResult("so3.exp_log_roundtrip_near_pi", err <= 1e-9, f"max error {err:.2e} (tol 1e-9, n={n})")


def check_trace_formula(n: int = 10_000, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    R1, R2 = so3.sample_uniform_rotation(rng, n), so3.sample_uniform_rotation(rng, n)
    d = so3.geodesic_distance(R1, R2)
    via_log = np.linalg.norm(so3.log_map(np.swapaxes(R1, 1, 2) @ R2), axis=1)
    err = float(np.abs(d - via_log).max())
    return CheckResult("so3.trace_formula_equivalence", err <= 1e-7, f"max error {err:.2e} (tol 1e-7)")


def check_bi_invariance(n: int = 10_000, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    R1, R2, Q = (so3.sample_uniform_rotation(rng, n) for _ in range(3))
    err = float(np.abs(so3.geodesic_distance(Q @ R1, Q @ R2) - so3.geodesic_distance(R1, R2)).max())
    return CheckResult("so3.bi_invariance", err <= 1e-9, f"max error {err:.2e} (tol 1e-9)")


def make_probe(tag: str, seed: int, feature_dim: int = 6, K: int = 4, batch: int = 3):
    """Random small model + batch for gradient checking, away from kinks and singular sets.

    Returns ``(params, sample)`` or None when the draw lands near a ReLU kink
    or a geodesic singularity.
    """
    rng = np.random.default_rng(seed)
    variant = models.ModelVariant.from_tag(tag, K=K, alpha=float(rng.uniform(0.5, 2.0)))
    dictionary = binning.PoseDictionary(0.7 * so3.log_map(so3.sample_uniform_rotation(rng, K)))
    y = so3.log_map(so3.sample_uniform_rotation(rng, batch))
    f = rng.standard_normal((batch, feature_dim))
    sample = models.make_samples(f, y, dictionary, gamma=1.5)
    params = models.init_model(variant, feature_dim, dictionary if variant.has_bin else None,
                               hidden=(5,), delta_hidden=(4,), rng=rng)
    for a in params.arrays():
        a += 0.1 * rng.standard_normal(a.shape)
    # pre-activations well away from zero
    for _, p in params.networks():
        h = f
        for W, b in zip(p.weights[:-1], p.biases[:-1]):
            a = h @ W + b
            if np.abs(a).min() < 1e-3:
                return None
            h = np.maximum(a, 0.0)
    out, _ = models.model_forward(params, f)
    poses = []
    if variant.family == "R_G":
        poses.append((y, out.pose))
    elif variant.family == "M_G":
        sel = out.deltas[np.arange(batch), sample.label] if variant.per_bin_deltas else out.deltas
        poses.append((y, dictionary.key_poses[sample.label] + sel))
    elif variant.family == "M_P":
        d = out.deltas if variant.per_bin_deltas else out.deltas[:, None, :]
        poses.append((np.broadcast_to(y[:, None], (batch, K, 3)), dictionary.key_poses[None] + d))
    for target, pred in poses:
        theta, _, _ = models.geodesic_loss(target, pred)
        if theta.min() < 1e-3 or theta.max() > np.pi - 1e-3:
            return None
    return params, sample


def gradient_probes(tag: str, n_probes: int = 100, coords_per_probe: int = 20,
                    step: float = 1e-5, seed: int = 0) -> tuple[float, int, int]:
    """Max relative error over ``n_probes`` accepted probes; returns ``(max_err, probes, coords)``."""
    worst, accepted, coords, s = 0.0, 0, 0, seed
    while accepted < n_probes:
        probe = make_probe(tag, s)
        s += 1
        if probe is None:
            continue
        params, sample = probe
        _, grads, _ = models.loss_and_grads(params, sample)
        rep = net.grad_check(lambda: models.loss_and_grads(params, sample)[0], params.arrays(), grads,
                             n_coords=coords_per_probe, step=step, seed=s)
        worst = max(worst, rep.max_rel_error)
        coords += rep.n_checked
        accepted += 1
    return worst, accepted, coords


def check_gradients(tag: str, n_probes: int = 100) -> CheckResult:
    err, probes, coords = gradient_probes(tag, n_probes)
    return CheckResult(f"grad.{tag}", err <= 1e-4,
                       f"max rel error {err:.2e} over {probes} probes / {coords} coordinates (tol 1e-4)")


def check_composition(mode: str, n: int = 10_000, K: int = 16, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    y = so3.log_map(so3.sample_uniform_rotation(rng, n))
    d = binning.kmeans_fit(y, K, seed=seed)
    labels = binning.assign_hard(y, d)
    back = models.compose(d.key_poses[labels], binning.delta_target(y, d, labels, mode), mode)
    err = float(np.abs(back - y).max())
    return CheckResult(f"compose.roundtrip_{mode}", err <= 1e-9, f"max error {err:.2e} (tol 1e-9, n={n})")


def check_metric_fixtures() -> CheckResult:
    deg = np.radians([10.0, 20.0, 40.0])
    preds = np.stack([np.zeros(3)] * 3)
    gts = np.stack([[0.0, 0.0, a] for a in deg])
    rep = compute_metrics(preds, gts)
    table = read_report_csv(reference_table_path())
    ok = (abs(rep.mean_med_err - 20.0) < 1e-9 and abs(rep.mean_acc - 2 / 3) < 1e-12
          and table.mean_med_err == 10.10 and table.mean_acc == 0.8588)
    return CheckResult("metrics.fixtures", ok,
                       f"MedErr {rep.mean_med_err:.4f} Acc {rep.mean_acc:.4f}; "
                       f"stored table mean {table.mean_med_err} / {table.mean_acc}")


@contextlib.contextmanager
def injected_fault(name: str | None) -> Iterator[None]:
    """Temporarily break a component so the suite can be shown to catch it."""
    if name is None:
        yield
        return
    if name != "log-near-pi":
        raise ValueError(f"unknown fault {name!r}")
    original = so3._log_near_pi

    def broken(R, theta, w):
        return -original(R, theta, w)

    so3._log_near_pi = broken
    try:
        yield
    finally:
        so3._log_near_pi = original


def all_checks(n_probes: int = 100) -> list[Callable[[], CheckResult]]:
    checks = [check_roundtrip, check_roundtrip_near_pi, check_trace_formula, check_bi_invariance]
    checks += [lambda t=t: check_gradients(t, n_probes) for t in models.VARIANTS]
    checks += [lambda: check_composition("additive"), lambda: check_composition("riemannian")]
    checks.append(check_metric_fixtures)
    return checks


def run(n_probes: int = 100, fault: str | None = None) -> list[CheckResult]:
    results = []
    with injected_fault(fault):
        for check in all_checks(n_probes):
            t = time.perf_counter()
            r = check()
            r.seconds = time.perf_counter() - t
            results.append(r)
    return results
