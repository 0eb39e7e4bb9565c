"""Slip detection: preprocessing, synthetic datasets, a numpy LSTM trained with BPTT,
and the cross-instance evaluation harness."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import flatfile
from .errors import Diverged, EmptyInput, InvalidParams, TooShort
from .magnetics import N_CHANNELS, MagnetometerGrid, SensorReading
from .mechanics import (DEFAULT_RATE_HZ, TrajectoryParams, make_trajectory, simulate_values,
                        timestamps_us)
from .skins import SkinInstance, generate_instance, make_rng, preset

SUBSAMPLE = 15
MIN_FRAMES = 2 * SUBSAMPLE + 1
MODEL_MAGIC = b"MSKMODEL"
MODEL_VERSION = 1
SEQUENCE_SECONDS = 1.0
FD_STEP = 1e-5
GRAD_FLOOR = 1e-6  # denominators below this are treated as absolute error

Label = Literal["slip", "no_slip"]


# ---------------------------------------------------------------- data types

@dataclass(frozen=True, eq=False)
class LabeledSequence:
    frames: tuple[SensorReading, ...]
    label: Label
    object_id: str
    instance_id: str

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.label not in ("slip", "no_slip"):
            raise InvalidParams(f"label must be slip or no_slip, got {self.label!r}")
        if len(self.frames) < MIN_FRAMES:
            raise TooShort(f"sequence has {len(self.frames)} frames, need >= {MIN_FRAMES}")

    @property
    def y(self) -> int:
        return int(self.label == "slip")

    def values(self) -> np.ndarray:
        return np.stack([f.values for f in self.frames])


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[LabeledSequence, ...]

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.sequences])

    @property
    def object_ids(self) -> set[str]:
        return {s.object_id for s in self.sequences}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 16
    clip_norm: float = 1.0
    seed: int = 0
    hidden: int = 32

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epochs > 0 and self.batch_size > 0
                and self.clip_norm > 0 and self.hidden > 0):
            raise InvalidParams("training hyperparameters must be positive")


# ---------------------------------------------------------------- preprocessing

def preprocess(frames) -> np.ndarray:
    """Keep every 15th frame from index 0, then take first differences: ``(ceil(n/15) - 1, 15)``."""
    if isinstance(frames, np.ndarray):
        v = np.asarray(frames, dtype=float)
    else:
        v = np.array([f.values if isinstance(f, SensorReading) else f for f in frames], dtype=float)
    if v.ndim != 2 or v.shape[1] != N_CHANNELS:
        raise InvalidParams(f"frames must be (n, {N_CHANNELS})")
    if len(v) < MIN_FRAMES:
        raise TooShort(f"{len(v)} frames < {MIN_FRAMES}")
    return np.diff(v[::SUBSAMPLE], axis=0)


# ---------------------------------------------------------------- model

@dataclass
class SlipModel:
    """Single-layer LSTM (gate order i, f, g, o) with a logistic readout on the final hidden state."""
    W: np.ndarray  # (4H, D + H)
    b: np.ndarray  # (4H,)
    Wy: np.ndarray  # (H,)
    by: np.ndarray  # (1,)
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS))
    feat_scale: np.ndarray = field(default_factory=lambda: np.ones(N_CHANNELS))
    train_loss: float = math.nan
    train_accuracy: float = math.nan
    loss_history: tuple[float, ...] = ()

    PARAM_NAMES = ("W", "b", "Wy", "by")

    @property
    def hidden(self) -> int:
        return self.Wy.shape[0]

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 32, input_dim: int = N_CHANNELS) -> "SlipModel":
        rng = make_rng(seed)
        k = 1.0 / math.sqrt(hidden)
        W = rng.uniform(-k, k, (4 * hidden, input_dim + hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        Wy = rng.uniform(-k, k, hidden)
        return cls(W, b, Wy, np.zeros(1))

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.PARAM_NAMES}

    def copy(self) -> "SlipModel":
        return replace(self, **{n: p.copy() for n, p in self.params().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())

    def save(self, path) -> None:
        arrays = dict(self.params(), feat_mean=self.feat_mean, feat_scale=self.feat_scale,
                      loss_history=np.asarray(self.loss_history, dtype=float))
        meta = {"hidden": self.hidden, "subsample": SUBSAMPLE,
                "train_loss": self.train_loss, "train_accuracy": self.train_accuracy}
        flatfile.dump(path, MODEL_MAGIC, MODEL_VERSION, meta, arrays)

    @classmethod
    def load(cls, path) -> "SlipModel":
        _, header, a = flatfile.load(path, MODEL_MAGIC, MODEL_VERSION)
        return cls(a["W"], a["b"], a["Wy"], a["by"], a["feat_mean"], a["feat_scale"],
                   float(header["train_loss"]), float(header["train_accuracy"]),
                   tuple(a["loss_history"].tolist()))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _pack(features: Sequence[np.ndarray], model: SlipModel) -> tuple[np.ndarray, np.ndarray]:
    """Standardize and right-pad to ``(T, B, D)``; also return per-sequence lengths."""
    lengths = np.array([len(f) for f in features])
    X = np.zeros((lengths.max(), len(features), N_CHANNELS))
    for i, f in enumerate(features):
        X[:len(f), i] = (f - model.feat_mean) / model.feat_scale
    return X, lengths


def _forward(model: SlipModel, X: np.ndarray, lengths: np.ndarray):
    T, B, _ = X.shape
    H = model.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        m = (t < lengths)[:, None].astype(float)
        z = np.concatenate([X[t], h], axis=1)
        a = z @ model.W.T + model.b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((z, i, f, g, o, c, tc, m))
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
    logits = h @ model.Wy + model.by[0]
    return logits, h, cache


def logits(model: SlipModel, features: Sequence[np.ndarray]) -> np.ndarray:
    X, lengths = _pack(features, model)
    return _forward(model, X, lengths)[0]


def _bce(logit, y):
    # log(1 + exp(-|l|)) form avoids overflow.
    return np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))


def loss_and_grads(model: SlipModel, features: Sequence[np.ndarray], y: np.ndarray,
                   loss_scale: float = 1.0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy (times ``loss_scale``) and its BPTT gradients."""
    X, lengths = _pack(features, model)
    y = np.asarray(y, dtype=float)
    T, B, D = X.shape
    H = model.hidden
    lg, h_final, cache = _forward(model, X, lengths)
    loss = float(_bce(lg, y).mean()) * loss_scale

    dlogit = (_sigmoid(lg) - y) * loss_scale / B
    grads = {"Wy": h_final.T @ dlogit, "by": np.array([dlogit.sum()]),
             "W": np.zeros_like(model.W), "b": np.zeros_like(model.b)}
    dh = np.outer(dlogit, model.Wy)
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        z, i, f, g, o, c_prev, tc, m = cache[t]
        # Masked steps pass gradients straight through to the previous state.
        dh_new, dc_carry = dh * m, dc * m
        do = dh_new * tc
        dc_new = dc_carry + dh_new * o * (1 - tc * tc)
        di = dc_new * g
        dg = dc_new * i
        df = dc_new * c_prev
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        grads["W"] += da.T @ z
        grads["b"] += da.sum(axis=0)
        dz = da @ model.W
        dh = dz[:, D:] + dh * (1 - m)
        dc = dc_new * f + dc * (1 - m)
    return loss, grads


# ---------------------------------------------------------------- training

def _features(dataset: Dataset) -> list[np.ndarray]:
    return [preprocess(s.values()) for s in dataset]


def _fit_scaler(features: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    allf = np.concatenate(features)
    mean = allf.mean(axis=0)
    scale = allf.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def train(dataset: Dataset, config: TrainConfig = TrainConfig()) -> SlipModel:
    """Minibatch gradient descent with global-norm clipping; deterministic in ``config.seed``."""
    if len(dataset) == 0:
        raise EmptyInput("empty training set")
    feats = _features(dataset)
    y = dataset.labels.astype(float)
    model = SlipModel.init(config.seed, config.hidden)
    model.feat_mean, model.feat_scale = _fit_scaler(feats)
    rng = make_rng(config.seed + 1)

    history = [loss_and_grads(model, feats, y)[0]]
    for _ in range(config.epochs):
        order = rng.permutation(len(feats))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = loss_and_grads(model, [feats[i] for i in idx], y[idx])
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            step = config.learning_rate * min(1.0, config.clip_norm / norm) if norm > 0 else 0.0
            for name, g in grads.items():
                getattr(model, name)[...] -= step * g
        epoch_loss = loss_and_grads(model, feats, y)[0]
        if not (math.isfinite(epoch_loss) and model.is_finite()):
            raise Diverged(f"loss became non-finite after {len(history)} epochs")
        history.append(epoch_loss)
    model.loss_history = tuple(history)
    model.train_loss = history[-1]
    model.train_accuracy = evaluate(model, dataset).accuracy
    return model


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def predict(model: SlipModel, dataset: Dataset) -> np.ndarray:
    return (_sigmoid(logits(model, _features(dataset))) >= 0.5).astype(int)


def evaluate(model: SlipModel, dataset: Dataset) -> EvalResult:
    if len(dataset) == 0:
        raise EmptyInput("empty evaluation set")
    pred = predict(model, dataset)
    y = dataset.labels
    tp = int(((pred == 1) & (y == 1)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    return EvalResult((tp + tn) / len(y), tp, fp, tn, fn)


def grad_check(model: SlipModel, sample: LabeledSequence | tuple[np.ndarray, int],
               step: float = FD_STEP) -> float:
    """Max elementwise relative error ``|a - n| / max(|a| + |n|, 1e-6)`` between BPTT and central differences."""
    if isinstance(sample, LabeledSequence):
        feats, y = [preprocess(sample.values())], np.array([sample.y])
    else:
        feats, y = [np.asarray(sample[0], dtype=float)], np.array([sample[1]])
    _, grads = loss_and_grads(model, feats, y)
    X, lengths = _pack(feats, model)

    def loss():
        return float(_bce(_forward(model, X, lengths)[0], y).mean())

    worst = 0.0
    for name, p in model.params().items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = loss()
            flat[j] = orig - step
            lm = loss()
            flat[j] = orig
            num = (lp - lm) / (2 * step)
            worst = max(worst, abs(g[j] - num) / max(abs(g[j]) + abs(num), GRAD_FLOOR))
    return worst


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class ObjectParams:
    object_id: str
    kernel_width: float  # mm
    depth_range: tuple[float, float]  # mm
    slip_velocity: float  # mm/s
    max_shear: float  # mm
    noise_sigma: float  # uT


@dataclass(frozen=True)
class TrajectorySpec:
    object_id: str
    kind: str
    params: TrajectoryParams
    noise_sigma: float
    noise_seed: int


def _draw_object(rng, k: int) -> ObjectParams:
    lo = rng.uniform(0.3, 0.7)
    return ObjectParams(f"obj{k:03d}", float(rng.uniform(2.0, 5.0)), (float(lo), float(lo + rng.uniform(0.2, 0.5))),
                        float(rng.uniform(2.0, 8.0)), float(rng.uniform(0.3, 0.8)), float(rng.uniform(1.0, 3.0)))


def dataset_plan(n_objects: int = 40, trajs_per_object: int = 6, seed: int = 0) -> list[list[TrajectorySpec]]:
    """Trajectory specs per object, independent of any skin instance.

    Half of each object's trajectories slip; the others are presses or holds
    drawn uniformly. Grasp location, force and approach vary per trajectory.
    """
    rng = make_rng(seed)
    plan = []
    for k in range(n_objects):
        obj = _draw_object(rng, k)
        n_slip = trajs_per_object // 2
        kinds = ["slip"] * n_slip + [str(rng.choice(["press", "hold"])) for _ in range(trajs_per_object - n_slip)]
        kinds = [kinds[i] for i in rng.permutation(len(kinds))]
        specs = []
        for kind in kinds:
            params = TrajectoryParams(
                center=(float(rng.uniform(6.0, 14.0)), float(rng.uniform(6.0, 14.0))),
                depth=float(rng.uniform(*obj.depth_range)),
                kernel_width=obj.kernel_width,
                slip_velocity=obj.slip_velocity,
                slip_direction=float(rng.uniform(0.0, 2 * math.pi)),
                max_shear=obj.max_shear,
                ramp_fraction=None if kind == "press" else float(rng.uniform(0.2, 0.5)))
            specs.append(TrajectorySpec(obj.object_id, kind, params, obj.noise_sigma,
                                        int(rng.integers(0, 2**31))))
        plan.append(specs)
    return plan


def simulate_spec(spec: TrajectorySpec, instance: SkinInstance, grid: MagnetometerGrid,
                  rate_hz: float = DEFAULT_RATE_HZ) -> LabeledSequence:
    traj = make_trajectory(spec.kind, spec.params, rate_hz, SEQUENCE_SECONDS)
    values = simulate_values(instance, grid, traj, spec.noise_sigma, spec.noise_seed)
    ts = timestamps_us(len(values), rate_hz)
    frames = tuple(SensorReading(int(t), v) for t, v in zip(ts, values))
    return LabeledSequence(frames, "slip" if spec.kind == "slip" else "no_slip", spec.object_id,
                           f"{instance.config_id}:{instance.seed}")


def synth_dataset(preset_name: str, n_objects: int = 40, train_objects: int = 30, trajs_per_object: int = 6,
                  seed: int = 0, instance: SkinInstance | None = None,
                  grid: MagnetometerGrid | None = None) -> tuple[Dataset, Dataset]:
    """Train/test split by object. The skin defaults to ``generate_instance(preset, seed)``."""
    if not 0 < train_objects < n_objects:
        raise InvalidParams("need 0 < train_objects < n_objects")
    if trajs_per_object < 1:
        raise InvalidParams("trajs_per_object must be >= 1")
    instance = instance or generate_instance(preset(preset_name), seed)
    grid = grid or MagnetometerGrid.default()
    plan = dataset_plan(n_objects, trajs_per_object, seed)
    seqs = [[simulate_spec(s, instance, grid) for s in obj] for obj in plan]
    train_set = Dataset(tuple(s for obj in seqs[:train_objects] for s in obj))
    test_set = Dataset(tuple(s for obj in seqs[train_objects:] for s in obj))
    return train_set, test_set


@dataclass(frozen=True)
class CrossInstanceResult:
    preset: str
    instance_seeds: tuple[int, int]
    train_seed: int
    acc_same_instance: float
    acc_swapped_instance: float

    @property
    def drop(self) -> float:
        return self.acc_same_instance - self.acc_swapped_instance


def cross_instance_eval(preset_name: str, seeds: Sequence[int] = (0, 1), train_seed: int = 0,
                        config: TrainConfig | None = None, grid: MagnetometerGrid | None = None,
                        n_objects: int = 40, train_objects: int = 30,
                        trajs_per_object: int = 6) -> CrossInstanceResult:
    """Train on skin ``seeds[0]``; test the same unseen objects on ``seeds[0]`` and on ``seeds[1]``.

    Trajectories and sensor noise are identical across the two skins, so the
    only change is the swapped instance.
    """
    if len(seeds) < 2:
        raise InvalidParams("need two instance seeds")
    grid = grid or MagnetometerGrid.default()
    cfg = preset(preset_name)
    inst_a = generate_instance(cfg, seeds[0])
    inst_b = generate_instance(cfg, seeds[1])
    sizes = dict(n_objects=n_objects, train_objects=train_objects, trajs_per_object=trajs_per_object)
    train_a, test_a = synth_dataset(preset_name, seed=train_seed, instance=inst_a, grid=grid, **sizes)
    _, test_b = synth_dataset(preset_name, seed=train_seed, instance=inst_b, grid=grid, **sizes)
    model = train(train_a, replace(config or TrainConfig(), seed=train_seed))
    return CrossInstanceResult(preset_name, (int(seeds[0]), int(seeds[1])), train_seed,
                               evaluate(model, test_a).accuracy, evaluate(model, test_b).accuracy)


# ---------------------------------------------------------------- dataset files

INDEX_NAME = "index.csv"
INDEX_COLUMNS = ("file", "split", "label", "object_id", "instance_id")


def write_dataset(out_dir, splits: dict[str, Dataset]) -> Path:
    """One daq log per sequence under ``<split>/`` plus an ``index.csv``; values are stored as float32."""
    from . import daq

    out = Path(out_dir)
    rows = []
    for split, ds in splits.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        for k, s in enumerate(ds):
            rel = f"{split}/{k:04d}.log"
            daq.write_log(out / rel, s.frames)
            rows.append((rel, split, s.label, s.object_id, s.instance_id))
    with open(out / INDEX_NAME, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_COLUMNS)
        w.writerows(rows)
    return out / INDEX_NAME


def read_dataset(data_dir, split: str) -> Dataset:
    from . import daq

    root = Path(data_dir)
    seqs = []
    with open(root / INDEX_NAME, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != INDEX_COLUMNS:
            raise InvalidParams(f"{root / INDEX_NAME} has an unexpected header")
        for row in reader:
            if row["split"] != split:
                continue
            frames = [r for r, _ in daq.read_log(root / row["file"]).decoded()]
            seqs.append(LabeledSequence(tuple(frames), row["label"], row["object_id"], row["instance_id"]))
    if not seqs:
        raise EmptyInput(f"no sequences for split {split!r} in {root}")
    return Dataset(tuple(seqs))
