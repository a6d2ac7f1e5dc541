"""Bin-and-delta pose models, the pure regression/classification baselines, and training.

Variant tags:

========  ============================================================
``R_E``   regression, squared Euclidean loss on axis-angle
``R_G``   regression, geodesic loss
``C``     classification over K-means key poses
``M_S``   cross-entropy + squared error on the delta
``M_G``   cross-entropy + geodesic loss on ``z_l + delta``
``M_R``   cross-entropy + squared error on the tangent-space delta
``M_P``   KL to soft labels + expected geodesic loss over all bins
========  ============================================================

A trailing ``+`` gives each bin its own delta network.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import net, so3
from .binning import PoseDictionary, assign_hard, assign_soft, default_gamma, delta_target, kmeans_fit
from .metrics import compute_metrics

VARIANTS = ("R_E", "R_G", "C", "M_S", "M_G", "M_R", "M_P", "M_S+", "M_G+", "M_R+", "M_P+")
DEFAULT_ALPHA = {"M_S": 1.0, "M_G": 1.0, "M_R": 0.1, "M_P": 1.0,
                 "M_S+": 1.0, "M_G+": 10.0, "M_R+": 0.1, "M_P+": 1.0}
DEFAULT_K_SINGLE = 100
DEFAULT_K_PER_BIN = 16
# geodesic gradient is undefined at an exact hit and ambiguous at the antipode
DEGENERATE_LOW = 1e-10
DEGENERATE_HIGH = np.pi - 1e-7
CLIP_NORM = 10.0


@dataclass(frozen=True)
class ModelVariant:
    tag: str
    alpha: float = 1.0
    K: int = 0
    per_bin_deltas: bool = False
    composition: str = "additive"
    bin_selection: str = "teacher"

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown variant {self.tag!r}; expected one of {VARIANTS}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.per_bin_deltas != self.tag.endswith("+"):
            raise ValueError("per-bin delta networks go with exactly the '+' variants")
        if self.has_bin and self.K < 1:
            raise ValueError(f"variant {self.tag} needs K >= 1")
        if self.composition not in ("additive", "riemannian"):
            raise ValueError(f"unknown composition {self.composition!r}")
        if self.bin_selection not in ("teacher", "argmax"):
            raise ValueError(f"unknown bin selection {self.bin_selection!r}")

    @classmethod
    def from_tag(cls, tag: str, alpha: float | None = None, K: int | None = None,
                 bin_selection: str = "teacher") -> "ModelVariant":
        plus = tag.endswith("+")
        if alpha is None:
            alpha = DEFAULT_ALPHA.get(tag, 1.0)
        if tag in ("R_E", "R_G"):
            K = 0
        elif K is None:
            K = DEFAULT_K_PER_BIN if plus else DEFAULT_K_SINGLE
        composition = "riemannian" if tag.startswith("M_R") else "additive"
        return cls(tag, float(alpha), int(K), plus, composition, bin_selection)

    @property
    def family(self) -> str:
        return self.tag.rstrip("+")

    @property
    def has_bin(self) -> bool:
        return self.tag not in ("R_E", "R_G")

    @property
    def has_delta(self) -> bool:
        return self.tag.startswith("M_")

    @property
    def delta_mode(self) -> str:
        return "riemannian" if self.family == "M_R" else "additive"

    @property
    def clips_gradients(self) -> bool:
        return self.family in ("M_G", "M_P")


@dataclass
class PoseSample:
    """Features, ground truth and cached training targets.

    Every field carries a leading batch axis; a single sample is a batch of one.
    """

    f: np.ndarray
    y: np.ndarray
    category: np.ndarray | None = None
    label: np.ndarray | None = None
    delta_add: np.ndarray | None = None
    delta_riem: np.ndarray | None = None
    soft: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "PoseSample":
        return PoseSample(**{k: (None if v is None else v[idx]) for k, v in self.__dict__.items()})


def make_samples(features, poses, dictionary: PoseDictionary | None = None,
                 gamma: float | None = None, categories=None) -> PoseSample:
    """Attach hard labels, both delta targets and (if ``gamma``) soft labels."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_2d(np.asarray(poses, dtype=float))
    cats = None if categories is None else np.atleast_1d(np.asarray(categories))
    s = PoseSample(f, y, cats)
    if dictionary is not None:
        s.label = assign_hard(y, dictionary)
        s.delta_add = delta_target(y, dictionary, s.label, "additive")
        s.delta_riem = delta_target(y, dictionary, s.label, "riemannian")
        if gamma is not None:
            s.soft = assign_soft(y, dictionary, gamma)
    return s


@dataclass
class ModelOutput:
    """Raw network outputs for a batch.

    ``deltas`` is ``(B, 3)`` for one delta network or ``(B, K, 3)`` for one per bin.
    """

    logits: np.ndarray | None = None
    deltas: np.ndarray | None = None
    pose: np.ndarray | None = None


@dataclass
class OutputGrads:
    logits: np.ndarray | None = None
    deltas: np.ndarray | None = None
    pose: np.ndarray | None = None
    n_degenerate: int = 0


def compose(z, delta, mode: str = "additive") -> np.ndarray:
    """Combine a key pose with a residual: ``canonicalize(z + delta)`` or ``log(exp(z) exp(delta))``."""
    z = np.asarray(z, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if mode == "additive":
        return so3.canonicalize(z + delta)
    if mode == "riemannian":
        return so3.log_map(so3.exp_map(z) @ so3.exp_map(delta), validate=False)
    raise ValueError(f"unknown composition {mode!r}")


def geodesic_loss(y_star, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Geodesic distance between ``exp(y_star)`` and ``exp(y)`` with its gradient w.r.t. ``y``.

    With ``phi = log(exp(y_star)^T exp(y))`` the distance is ``|phi|`` and the
    gradient is ``J_r(y)^T phi / |phi|``. Degenerate points (exact hit or
    antipode) get a zero gradient and are flagged.
    """
    y_star = np.asarray(y_star, dtype=float)
    y = np.asarray(y, dtype=float)
    rel = np.swapaxes(so3.exp_map(y_star), -1, -2) @ so3.exp_map(y)
    phi = so3.log_map(rel, validate=False)
    theta = np.linalg.norm(phi, axis=-1)
    degenerate = (theta < DEGENERATE_LOW) | (theta > DEGENERATE_HIGH)
    direction = np.where(degenerate[..., None], 0.0, phi / np.where(degenerate, 1.0, theta)[..., None])
    grad = np.einsum("...ji,...j->...i", so3.exp_jacobian(y), direction)
    return theta, grad, degenerate


def loss_regression(y_pred, y_star, metric: str = "geodesic"):
    """Per-sample regression loss and its gradient w.r.t. ``y_pred``.

    Returns ``(loss, grad, degenerate)``; ``degenerate`` is always False for
    the Euclidean metric.
    """
    y_pred = np.asarray(y_pred, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    if metric == "euclidean":
        diff = y_pred - y_star
        return np.einsum("...i,...i->...", diff, diff), 2.0 * diff, np.zeros(diff.shape[:-1], dtype=bool)
    if metric == "geodesic":
        return geodesic_loss(y_star, y_pred)
    raise ValueError(f"unknown metric {metric!r}")


def loss_classification(logits, l_star) -> tuple[float, np.ndarray]:
    return net.softmax_cross_entropy(logits, l_star)


def _bins(sample: PoseSample, out: ModelOutput, variant: ModelVariant) -> np.ndarray:
    if variant.bin_selection == "argmax":
        return np.argmax(out.logits, axis=-1)
    return sample.label


def _delta_targets(sample: PoseSample, bins: np.ndarray, mode: str, key_poses: np.ndarray) -> np.ndarray:
    if sample.label is not None and np.array_equal(bins, sample.label):
        return sample.delta_add if mode == "additive" else sample.delta_riem
    return delta_target(sample.y, PoseDictionary(key_poses), bins, mode)


def _select(deltas: np.ndarray, bins: np.ndarray, variant: ModelVariant) -> np.ndarray:
    if variant.per_bin_deltas:
        return deltas[np.arange(len(bins)), bins]
    return deltas


def _scatter(grad_sel: np.ndarray, bins: np.ndarray, deltas: np.ndarray, variant: ModelVariant) -> np.ndarray:
    if not variant.per_bin_deltas:
        return grad_sel
    g = np.zeros_like(deltas)
    g[np.arange(len(bins)), bins] = grad_sel
    return g


def _squared_delta_loss(sample, out, variant, key_poses, mode):
    ce, g_logits = loss_classification(out.logits, sample.label)
    bins = _bins(sample, out, variant)
    target = _delta_targets(sample, bins, mode, key_poses)
    diff = _select(out.deltas, bins, variant) - target
    n = len(diff)
    reg = float(np.einsum("ij,ij->", diff, diff)) / n
    g_sel = (2.0 * variant.alpha / n) * diff
    return ce + variant.alpha * reg, OutputGrads(logits=g_logits, deltas=_scatter(g_sel, bins, out.deltas, variant))


def loss_simple_bd(sample: PoseSample, out: ModelOutput, variant: ModelVariant, key_poses=None):
    """Cross-entropy on the bins plus ``alpha * ||delta* - delta||^2`` on the selected delta."""
    return _squared_delta_loss(sample, out, variant, key_poses, "additive")


def loss_riemannian_bd(sample: PoseSample, out: ModelOutput, variant: ModelVariant, key_poses=None):
    """Like :func:`loss_simple_bd` but the target is the tangent vector ``log(exp(z)^T exp(y*))``."""
    return _squared_delta_loss(sample, out, variant, key_poses, "riemannian")


def loss_geodesic_bd(sample: PoseSample, out: ModelOutput, variant: ModelVariant, key_poses):
    """Cross-entropy plus ``alpha * L_p(y*, z_l + delta_l)``.

    The key poses are constants and the bin index is discrete, so the pose
    term only reaches the (selected) delta head.
    """
    ce, g_logits = loss_classification(out.logits, sample.label)
    bins = _bins(sample, out, variant)
    sel = _select(out.deltas, bins, variant)
    theta, g_pose, degenerate = geodesic_loss(sample.y, key_poses[bins] + sel)
    n = len(theta)
    g_sel = (variant.alpha / n) * g_pose
    grads = OutputGrads(logits=g_logits, deltas=_scatter(g_sel, bins, out.deltas, variant),
                        n_degenerate=int(degenerate.sum()))
    return ce + variant.alpha * float(theta.mean()), grads


def loss_probabilistic_bd(sample: PoseSample, out: ModelOutput, variant: ModelVariant, key_poses):
    """KL to the soft labels plus ``alpha * sum_k p_k L_p(y*, z_k + delta_k)`` with ``p = softmax(logits)``."""
    kl, g_logits = net.kl_divergence(sample.soft, out.logits)
    n, K = out.logits.shape
    deltas = out.deltas if variant.per_bin_deltas else np.broadcast_to(out.deltas[:, None, :], (n, K, 3))
    y_star = np.broadcast_to(sample.y[:, None, :], (n, K, 3))
    losses, g_pose, degenerate = geodesic_loss(y_star, key_poses[None] + deltas)
    p = net.softmax(out.logits)
    expected = (p * losses).sum(axis=1)
    g_logits = g_logits + (variant.alpha / n) * p * (losses - expected[:, None])
    g_deltas = (variant.alpha / n) * p[..., None] * g_pose
    if not variant.per_bin_deltas:
        g_deltas = g_deltas.sum(axis=1)
    grads = OutputGrads(logits=g_logits, deltas=g_deltas, n_degenerate=int(degenerate.sum()))
    return kl + variant.alpha * float(expected.mean()), grads


def objective(sample: PoseSample, out: ModelOutput, variant: ModelVariant, key_poses=None):
    """Training loss of ``variant`` on a batch: ``(loss, OutputGrads)``."""
    fam = variant.family
    if fam in ("R_E", "R_G"):
        loss, g, degenerate = loss_regression(out.pose, sample.y, "euclidean" if fam == "R_E" else "geodesic")
        n = len(loss)
        return float(loss.mean()), OutputGrads(pose=g / n, n_degenerate=int(degenerate.sum()))
    if fam == "C":
        loss, g = loss_classification(out.logits, sample.label)
        return loss, OutputGrads(logits=g)
    if fam == "M_S":
        return loss_simple_bd(sample, out, variant, key_poses)
    if fam == "M_G":
        return loss_geodesic_bd(sample, out, variant, key_poses)
    if fam == "M_R":
        return loss_riemannian_bd(sample, out, variant, key_poses)
    return loss_probabilistic_bd(sample, out, variant, key_poses)


@dataclass
class BinDeltaParams:
    """All trainable networks of one model plus its fixed dictionary."""

    variant: ModelVariant
    dictionary: PoseDictionary | None = None
    bin_net: net.MlpParams | None = None
    delta_nets: list[net.MlpParams] = field(default_factory=list)
    regressor: net.MlpParams | None = None
    gamma: float | None = None

    def networks(self) -> list[tuple[str, net.MlpParams]]:
        out = []
        if self.regressor is not None:
            out.append(("regressor", self.regressor))
        if self.bin_net is not None:
            out.append(("bin", self.bin_net))
        if len(self.delta_nets) == 1 and not self.variant.per_bin_deltas:
            out.append(("delta", self.delta_nets[0]))
        else:
            out += [(f"delta_{k:03d}", d) for k, d in enumerate(self.delta_nets)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, p in self.networks() for a in p.arrays()]

    def names(self) -> list[str]:
        out = []
        for name, p in self.networks():
            for i in range(len(p.weights)):
                out += [f"{name}.W{i}", f"{name}.b{i}"]
        return out

    def copy(self) -> "BinDeltaParams":
        return replace(
            self,
            bin_net=None if self.bin_net is None else self.bin_net.copy(),
            delta_nets=[d.copy() for d in self.delta_nets],
            regressor=None if self.regressor is None else self.regressor.copy(),
        )

    @property
    def key_poses(self) -> np.ndarray | None:
        return None if self.dictionary is None else self.dictionary.key_poses

    @property
    def feature_dim(self) -> int:
        return self.networks()[0][1].sizes[0]


def init_model(variant: ModelVariant, feature_dim: int, dictionary: PoseDictionary | None = None,
               hidden: Sequence[int] = (64, 32), delta_hidden: Sequence[int] | None = None,
               rng: np.random.Generator | None = None, gamma: float | None = None) -> BinDeltaParams:
    """Randomly initialise the networks for ``variant``.

    Per-bin delta networks use ``delta_hidden`` (default: the last hidden size
    alone), all other networks use ``hidden``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    hidden = list(hidden)
    if variant.has_bin:
        if dictionary is None or dictionary.K != variant.K:
            raise ValueError(f"variant {variant.tag} needs a dictionary with K={variant.K}")
    params = BinDeltaParams(variant, dictionary if variant.has_bin else None, gamma=gamma)
    if not variant.has_bin:
        params.regressor = net.init_mlp([feature_dim, *hidden, 3], rng)
        return params
    params.bin_net = net.init_mlp([feature_dim, *hidden, variant.K], rng)
    if variant.has_delta:
        if variant.per_bin_deltas:
            dh = list(delta_hidden) if delta_hidden is not None else hidden[-1:]
            params.delta_nets = [net.init_mlp([feature_dim, *dh, 3], rng) for _ in range(variant.K)]
        else:
            params.delta_nets = [net.init_mlp([feature_dim, *hidden, 3], rng)]
    return params


def model_forward(params: BinDeltaParams, f) -> tuple[ModelOutput, dict]:
    f = np.atleast_2d(np.asarray(f, dtype=float))
    out, tapes = ModelOutput(), {}
    if params.regressor is not None:
        out.pose, tapes["regressor"] = net.forward(params.regressor, f)
    if params.bin_net is not None:
        out.logits, tapes["bin"] = net.forward(params.bin_net, f)
    if params.delta_nets:
        results = [net.forward(d, f) for d in params.delta_nets]
        tapes["deltas"] = [t for _, t in results]
        if params.variant.per_bin_deltas:
            out.deltas = np.stack([o for o, _ in results], axis=1)
        else:
            out.deltas = results[0][0]
    return out, tapes


def model_backward(params: BinDeltaParams, tapes: dict, grads: OutputGrads) -> list[np.ndarray]:
    """Parameter gradients in the order of :meth:`BinDeltaParams.arrays`."""
    by_name = {}
    if params.regressor is not None:
        by_name["regressor"] = net.backward(tapes["regressor"], grads.pose)[0]
    if params.bin_net is not None:
        by_name["bin"] = net.backward(tapes["bin"], grads.logits)[0]
    if params.delta_nets:
        if params.variant.per_bin_deltas:
            for k, tape in enumerate(tapes["deltas"]):
                by_name[f"delta_{k:03d}"] = net.backward(tape, grads.deltas[:, k])[0]
        else:
            by_name["delta"] = net.backward(tapes["deltas"][0], grads.deltas)[0]
    return [a for name, _ in params.networks() for a in by_name[name].arrays()]


def loss_and_grads(params: BinDeltaParams, sample: PoseSample,
                   variant: ModelVariant | None = None) -> tuple[float, list[np.ndarray], int]:
    """Batch loss, parameter gradients and the count of degenerate geodesic terms.

    ``variant`` overrides the objective (used for the simple-loss warm start)
    while keeping the architecture of ``params``.
    """
    variant = params.variant if variant is None else variant
    out, tapes = model_forward(params, sample.f)
    loss, g = objective(sample, out, variant, params.key_poses)
    return loss, model_backward(params, tapes, g), g.n_degenerate


def predict_pose(params: BinDeltaParams, f) -> np.ndarray:
    """Final axis-angle prediction for each feature row; the argmax bin picks key pose and delta head."""
    out, _ = model_forward(params, f)
    v = params.variant
    if not v.has_bin:
        return so3.canonicalize(out.pose)
    bins = np.argmax(out.logits, axis=-1)
    z = params.key_poses[bins]
    if not v.has_delta:
        return z.copy()
    delta = out.deltas[np.arange(len(bins)), bins] if v.per_bin_deltas else out.deltas
    return compose(z, delta, v.composition)


@dataclass
class TrainConfig:
    """Hyper-parameters for :func:`train`.

    Defaults are sized for small synthetic problems; ``lr``/``lr_decay`` follow
    the usual Adam schedule ``lr * lr_decay ** epoch``.
    """

    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.95
    seed: int = 0
    alpha: float | None = None
    K: int | None = None
    gamma: float | None = None
    hidden: tuple = (64, 32)
    delta_hidden: tuple | None = None
    clip_norm: float | None = None
    bin_selection: str = "teacher"
    warm_start_epochs: int = 1
    interpolated_median: bool = False


HISTORY_FIELDS = ("epoch", "lr", "objective", "train_loss", "degenerate", "val_mederr", "val_acc")


class TrainingAborted(net.TrainingDivergence):
    """Divergence during :func:`train`; carries the last parameters that produced a finite loss."""

    def __init__(self, message: str, params: BinDeltaParams, history: list[dict], layer: str | None = None):
        super().__init__(message, layer)
        self.params = params
        self.history = history


def evaluate(params: BinDeltaParams, features, poses, categories=None, interpolate: bool = False):
    preds = predict_pose(params, features)
    return compute_metrics(preds, poses, categories, interpolate=interpolate,
                           meta={"variant": params.variant.tag})


def _seeds(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def train(variant: ModelVariant | str, train_set, val_set=None, config: TrainConfig | None = None,
          dictionary: PoseDictionary | None = None) -> tuple[BinDeltaParams, list[dict]]:
    """Minibatch Adam training of one model.

    ``train_set``/``val_set`` are datasets (anything with ``features`` and
    ``poses`` arrays). The dictionary is fitted on the training poses unless
    given. Geodesic bin-and-delta variants spend their first
    ``warm_start_epochs`` on the corresponding simple objective.

    Returns the trained parameters and one history row per epoch.

    Raises:
        TrainingAborted: on a non-finite loss or gradient.
    """
    cfg = config or TrainConfig()
    if isinstance(variant, str):
        variant = ModelVariant.from_tag(variant, alpha=cfg.alpha, K=cfg.K, bin_selection=cfg.bin_selection)
    X = np.asarray(train_set.features, dtype=float)
    Y = np.asarray(train_set.poses, dtype=float)
    if len(X) == 0:
        raise ValueError("training set is empty")
    rng_dict, rng_init, rng_shuffle = _seeds(cfg.seed)

    gamma = None
    if variant.has_bin and dictionary is None:
        dictionary = kmeans_fit(Y, variant.K, seed=int(rng_dict.integers(2**31)))
    if variant.family == "M_P":
        gamma = cfg.gamma if cfg.gamma is not None else default_gamma(Y, dictionary)
    params = init_model(variant, X.shape[1], dictionary, cfg.hidden, cfg.delta_hidden, rng_init, gamma)
    samples = make_samples(X, Y, dictionary if variant.has_bin else None, gamma)

    warm = None
    if variant.family == "M_G" and cfg.warm_start_epochs > 0:
        warm = ModelVariant.from_tag("M_S+" if variant.per_bin_deltas else "M_S", alpha=1.0, K=variant.K,
                                     bin_selection=variant.bin_selection)
    clip = cfg.clip_norm if cfg.clip_norm is not None else (CLIP_NORM if variant.clips_gradients else None)

    arrays, names = params.arrays(), params.names()
    state = net.AdamState.create(arrays, lr=cfg.lr, decay=cfg.lr_decay)
    history: list[dict] = []
    n = len(X)
    for epoch in range(cfg.epochs):
        last_good = params.copy()
        state.epoch = epoch
        objective_variant = warm if (warm is not None and epoch < cfg.warm_start_epochs) else variant
        order = rng_shuffle.permutation(n)
        total, n_degenerate = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = samples.subset(order[start:start + cfg.batch_size])
            loss, grads, deg = loss_and_grads(params, batch, objective_variant)
            if not np.isfinite(loss):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}", last_good, history)
            if clip is not None:
                net.clip_grad_norm(grads, clip)
            try:
                net.adam_step(arrays, grads, state, names)
            except net.TrainingDivergence as exc:
                raise TrainingAborted(str(exc), last_good, history, exc.layer) from exc
            total += loss * len(batch)
            n_degenerate += deg
        row = {"epoch": epoch, "lr": state.current_lr, "objective": objective_variant.tag,
               "train_loss": total / n, "degenerate": n_degenerate,
               "val_mederr": float("nan"), "val_acc": float("nan")}
        if val_set is not None and len(val_set.poses):
            rep = evaluate(params, val_set.features, val_set.poses, interpolate=cfg.interpolated_median)
            row["val_mederr"], row["val_acc"] = rep.mean_med_err, rep.mean_acc
        history.append(row)
    return params, history


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def save_bundle(params: BinDeltaParams, directory, extra: dict | None = None) -> Path:
    """Write checkpoints, the dictionary and ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, p in params.networks():
        fname = f"{name}.ckpt"
        net.save_checkpoint(p, directory / fname)
        files[name] = fname
    if params.dictionary is not None:
        params.dictionary.save(directory / "dictionary.json")
    v = params.variant
    manifest = {
        "variant": v.tag,
        "alpha": v.alpha,
        "K": v.K,
        "gamma": params.gamma,
        "seed": params.dictionary.seed if params.dictionary is not None else None,
        "composition": v.composition,
        "bin_selection": v.bin_selection,
        "feature_dim": params.feature_dim,
        "networks": files,
    }
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_bundle(directory) -> BinDeltaParams:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    variant = ModelVariant(manifest["variant"], manifest["alpha"], manifest["K"],
                           manifest["variant"].endswith("+"), manifest["composition"],
                           manifest.get("bin_selection", "teacher"))
    dictionary = PoseDictionary.load(directory / "dictionary.json") if variant.has_bin else None
    nets = {name: net.load_checkpoint(directory / fname) for name, fname in manifest["networks"].items()}
    deltas = [nets[k] for k in sorted(nets) if k.startswith("delta")]
    return BinDeltaParams(variant, dictionary, nets.get("bin"), deltas, nets.get("regressor"), manifest.get("gamma"))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
