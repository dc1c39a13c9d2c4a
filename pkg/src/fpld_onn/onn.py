"""Two-layer perceptron with laser transfer-function activations.

784 inputs (pixel powers in mW) -> H neurons -> 10 neurons -> softmax.  Each
weighted layer is followed by a fitted activation; all weights and
intercepts are kept non-negative by projecting after every Adam step.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actfit import ActivationCoeffs, activate, load_coeff_set
from .errors import NumericalDomainError, ParameterError, TrainingDivergedError

CHECKPOINT_FORMAT = "fpld-onn-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    l2: float = 0.02
    dropout: float = 0.1
    runs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.runs < 1:
            raise ParameterError("batch size, epochs and runs must be >= 1")
        if self.l2 < 0:
            raise ParameterError("L2 strength must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout rate must be in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ParameterError("invalid Adam constants")


@dataclass
class MlpModel:
    w1: np.ndarray
    c1: np.ndarray
    w2: np.ndarray
    c2: np.ndarray
    act1: ActivationCoeffs
    act2: ActivationCoeffs
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.c1, self.w2, self.c2]

    def copy(self) -> "MlpModel":
        return MlpModel(self.w1.copy(), self.c1.copy(), self.w2.copy(), self.c2.copy(),
                        self.act1, self.act2, self.seed)

    def check(self):
        n_in, h, n_out = self.dims
        if (self.c1.shape != (h,) or self.w2.shape != (n_out, h) or self.c2.shape != (n_out,)):
            raise ParameterError("inconsistent layer shapes")
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise TrainingDivergedError("non-finite parameter")
            if p.size and p.min() < 0:
                raise ParameterError("negative weight or intercept")


def init_model(dims, act1: ActivationCoeffs, act2: ActivationCoeffs, seed: int) -> MlpModel:
    """Weights uniform in [0, sqrt(2 / fan_in)], intercepts zero."""
    n_in, h, n_out = dims
    if min(n_in, h, n_out) < 1:
        raise ParameterError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(0.0, math.sqrt(2.0 / n_in), (h, n_in))
    w2 = rng.uniform(0.0, math.sqrt(2.0 / h), (n_out, h))
    return MlpModel(w1, np.zeros(h), w2, np.zeros(n_out), act1, act2, seed)


@dataclass
class Forward:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    s1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    s2: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray


def dropout_mask(shape, rate: float, rng) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.random(shape, dtype=np.float32) >= rate
    return keep * (1.0 / (1.0 - rate))


def forward(model: MlpModel, x, train_mode: bool = False, dropout_seed=None,
            rate: float = 0.1, rng=None) -> Forward:
    """Pre-activations, activations and softmax probabilities for a batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if train_mode and rate > 0:
        rng = rng if rng is not None else np.random.default_rng(dropout_seed)
        x = x * dropout_mask(x.shape, rate, rng)
    z1 = x @ model.w1.T + model.c1
    a1, s1 = activate(model.act1, z1)
    z2 = a1 @ model.w2.T + model.c2
    a2, s2 = activate(model.act2, z2)
    shifted = a2 - a2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    return Forward(x, z1, a1, s1, z2, a2, s2, e / total, shifted - np.log(total))


@dataclass
class Gradients:
    w1: np.ndarray
    c1: np.ndarray
    w2: np.ndarray
    c2: np.ndarray

    def as_list(self):
        return [self.w1, self.c1, self.w2, self.c2]


def _check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() > 9:
        raise NumericalDomainError("labels must be integers in 0..9, one per sample")
    return labels.astype(np.intp)


def loss_and_gradients(model: MlpModel, x, labels, lam: float = 0.0, train_mode=False,
                       dropout_seed=None, rate: float = 0.1, rng=None, return_forward=False):
    """Mean cross-entropy + lam * ||W2||^2 and its gradients.

    With ``return_forward`` the forward pass is returned as a third item.
    """
    fw = forward(model, x, train_mode, dropout_seed, rate, rng)
    n = fw.x.shape[0]
    labels = _check_labels(labels, n)
    rows = np.arange(n)
    loss = -fw.log_probs[rows, labels].mean() + lam * np.sum(model.w2 ** 2)
    d_a2 = fw.probs.copy()
    d_a2[rows, labels] -= 1.0
    d_a2 /= n
    d_z2 = d_a2 * fw.s2
    g_w2 = d_z2.T @ fw.a1 + 2.0 * lam * model.w2
    g_c2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ model.w2) * fw.s1
    g_w1 = d_z1.T @ fw.x
    g_c1 = d_z1.sum(axis=0)
    grads = Gradients(g_w1, g_c1, g_w2, g_c2)
    if return_forward:
        return float(loss), grads, fw
    return float(loss), grads


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def fresh(cls, model: MlpModel) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in model.params()],
                   [np.zeros_like(p) for p in model.params()])


def adam_update(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam step followed by projection onto the non-negative orthant."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at Adam step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        np.maximum(p, 0.0, out=p)


def train_step(model: MlpModel, state: AdamState, x, labels, config: TrainConfig, rng=None):
    """One minibatch update in place; returns (batch loss, correct predictions)."""
    loss, grads, fw = loss_and_gradients(model, x, labels, config.l2, train_mode=True,
                                         rate=config.dropout, rng=rng, return_forward=True)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at Adam step {state.t + 1}")
    adam_update(model.params(), grads.as_list(), state, config.learning_rate,
                config.beta1, config.beta2, config.adam_eps)
    return loss, int(np.sum(np.argmax(fw.log_probs, axis=1) == np.asarray(labels)))


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    per_label: np.ndarray
    counts: np.ndarray
    predictions: np.ndarray


def predict_scores(model: MlpModel, x, chunk: int = 5000):
    """Output activations and log-probabilities without dropout, in chunks."""
    a2, lp = [], []
    for i in range(0, len(x), chunk):
        fw = forward(model, x[i:i + chunk])
        a2.append(fw.a2)
        lp.append(fw.log_probs)
    return np.concatenate(a2), np.concatenate(lp)


def evaluate(model: MlpModel, x, labels, lam: float = 0.0) -> EvalResult:
    """Accuracy, mean loss (cross-entropy + lam ||W2||^2) and per-label accuracy."""
    labels = _check_labels(labels, len(x))
    _, lp = predict_scores(model, x)
    pred = np.argmax(lp, axis=1)
    correct = pred == labels
    counts = np.bincount(labels, minlength=10)
    hits = np.bincount(labels, weights=correct, minlength=10)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_label = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    loss = -lp[np.arange(len(labels)), labels].mean() + lam * np.sum(model.w2 ** 2)
    return EvalResult(float(correct.mean()), float(loss), per_label, counts, pred)


@dataclass
class History:
    train_accuracy: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_accuracy)

    def epochs_to(self, accuracy: float, which: str = "train") -> int | None:
        """First epoch (1-based) reaching ``accuracy``; None if never."""
        seq = self.train_accuracy if which == "train" else self.test_accuracy
        for i, a in enumerate(seq):
            if a >= accuracy:
                return i + 1
        return None


def train(dataset, model: MlpModel, config: TrainConfig):
    """Seeded minibatch training; returns (model, history).

    Training accuracy and loss in the history are running averages over the
    epoch's minibatches (dropout active), test figures are computed after
    each epoch.
    """
    model = model.copy()
    state = AdamState.fresh(model)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    x = np.asarray(dataset.train_x, dtype=float)
    y = np.asarray(dataset.train_y)
    test_x = np.asarray(dataset.test_x, dtype=float)
    n = len(y)
    hist = History()
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, ok = train_step(model, state, x[idx], y[idx], config, rng=drop_rng)
            loss_sum += loss * idx.size
            hits += ok
        hist.train_accuracy.append(hits / n)
        hist.train_loss.append(loss_sum / n)
        ev = evaluate(model, test_x, dataset.test_y, config.l2)
        hist.test_accuracy.append(ev.accuracy)
        hist.test_loss.append(ev.loss)
    return model, hist


# -- persistence -------------------------------------------------------------

def _act_doc(c: ActivationCoeffs) -> dict:
    return c.to_dict()


def save_model(model: MlpModel, path) -> None:
    from .xfer import atomic_write_text
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(model.dims),
        "seed": model.seed,
        "activations": {"layer1": _act_doc(model.act1), "layer2": _act_doc(model.act2)},
        "w1": model.w1.tolist(), "c1": model.c1.tolist(),
        "w2": model.w2.tolist(), "c2": model.c2.tolist(),
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {doc.get('version')}")
    n_in, h, n_out = doc["dims"]
    m = MlpModel(np.array(doc["w1"], dtype=float).reshape(h, n_in),
                 np.array(doc["c1"], dtype=float).reshape(h),
                 np.array(doc["w2"], dtype=float).reshape(n_out, h),
                 np.array(doc["c2"], dtype=float).reshape(n_out),
                 ActivationCoeffs.from_dict(doc["activations"]["layer1"]),
                 ActivationCoeffs.from_dict(doc["activations"]["layer2"]),
                 int(doc["seed"]))
    m.check()
    return m


# -- detuning sweep ----------------------------------------------------------

SWEEP_COLUMNS = ["dw1_omega", "dw2_omega", "run", "accuracy", "loss", "epochs_to_90_train",
                 "train_accuracy"]


@dataclass
class SweepResult:
    dw1: list
    dw2: list
    accuracy: np.ndarray      # (len(dw1), len(dw2)) means
    loss: np.ndarray
    runs: dict                # (dw1, dw2) -> list of row dicts

    def best(self) -> tuple[float, float, float]:
        i, j = np.unravel_index(np.nanargmax(self.accuracy), self.accuracy.shape)
        return self.dw1[i], self.dw2[j], float(self.accuracy[i, j])


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _cell_key(dw1, dw2, run):
    return (round(float(dw1), 6), round(float(dw2), 6), int(run))


def _run_cell(args):
    dataset, dw1, dw2, run, hidden, config, coeff_dir, fwhm1, fwhm2 = args
    from .laser import OMEGA
    act1 = load_coeff_set(coeff_dir, dw1 * OMEGA, fwhm1)
    act2 = load_coeff_set(coeff_dir, dw2 * OMEGA, fwhm2)
    seed = config.seed + run
    cfg = TrainConfig(**{**config.__dict__, "seed": seed})
    model = init_model((dataset.train_x.shape[1], hidden, 10), act1, act2, seed)
    model, hist = train(dataset, model, cfg)
    ev = evaluate(model, dataset.test_x, dataset.test_y, cfg.l2)
    e90 = hist.epochs_to(0.9)
    return {"dw1_omega": dw1, "dw2_omega": dw2, "run": run, "accuracy": ev.accuracy,
            "loss": ev.loss, "epochs_to_90_train": "" if e90 is None else e90,
            "train_accuracy": hist.train_accuracy[-1]}


def detuning_sweep(dataset, dw1_grid, dw2_grid, config: TrainConfig, coeff_dir, out_csv,
                   hidden: int = 10, fwhm1: float = 40.0, fwhm2: float = 45.0,
                   jobs: int = 1, runs: int | None = None) -> SweepResult:
    """Train ``runs`` models per (dw1, dw2) cell (detunings in units of Omega).

    Rows are appended to ``out_csv`` as runs finish; cells already present are
    skipped, so an interrupted sweep resumes.  An aggregate CSV with per-cell
    means is written next to it.
    """
    from .laser import OMEGA
    runs = config.runs if runs is None else runs
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    # fail early on missing activations
    for d in dw1_grid:
        load_coeff_set(coeff_dir, d * OMEGA, fwhm1)
    for d in dw2_grid:
        load_coeff_set(coeff_dir, d * OMEGA, fwhm2)
    done = {_cell_key(r["dw1_omega"], r["dw2_omega"], r["run"]): r for r in _read_rows(out_csv)}
    todo = [(dataset, float(a), float(b), r, hidden, config, coeff_dir, fwhm1, fwhm2)
            for a in dw1_grid for b in dw2_grid for r in range(runs)
            if _cell_key(a, b, r) not in done]
    if not out_csv.exists():
        with open(out_csv, "w", newline="") as fh:
            fh.write(f"# hidden: {hidden}\n# epochs: {config.epochs}\n# seed: {config.seed}\n")
            csv.DictWriter(fh, SWEEP_COLUMNS).writeheader()

    def record(row):
        with open(out_csv, "a", newline="") as fh:
            csv.DictWriter(fh, SWEEP_COLUMNS).writerow(row)
            fh.flush()
            os.fsync(fh.fileno())
        done[_cell_key(row["dw1_omega"], row["dw2_omega"], row["run"])] = row

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for row in ex.map(_run_cell, todo):
                record(row)
    else:
        for t in todo:
            record(_run_cell(t))

    acc = np.full((len(dw1_grid), len(dw2_grid)), np.nan)
    loss = np.full_like(acc, np.nan)
    cells = {}
    for i, a in enumerate(dw1_grid):
        for j, b in enumerate(dw2_grid):
            rows = [done[_cell_key(a, b, r)] for r in range(runs)]
            cells[(float(a), float(b))] = rows
            acc[i, j] = np.mean([float(r["accuracy"]) for r in rows])
            loss[i, j] = np.mean([float(r["loss"]) for r in rows])
    agg = out_csv.with_name(out_csv.stem + "_aggregate.csv")
    lines = ["dw1_omega,dw2_omega,mean_accuracy,std_accuracy,mean_loss,n_runs"]
    for i, a in enumerate(dw1_grid):
        for j, b in enumerate(dw2_grid):
            accs = [float(r["accuracy"]) for r in cells[(float(a), float(b))]]
            lines.append(f"{float(a)!r},{float(b)!r},{float(acc[i, j])!r},{float(np.std(accs))!r},"
                         f"{float(loss[i, j])!r},{len(accs)}")
    from .xfer import atomic_write_text
    atomic_write_text(agg, "\n".join(lines) + "\n")
    return SweepResult([float(a) for a in dw1_grid], [float(b) for b in dw2_grid], acc, loss,
                       cells)
