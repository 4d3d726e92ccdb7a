"""Two-stage training: perception alone, then perception + rules jointly."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from nsad import reasoner
from nsad.data import Cohort, is_train
from nsad.dsl import validate_ruleset
from nsad.dsl.nodes import RuleSet
from nsad.optim import AdamState, scheduled_lr
from nsad.params import ParamEntry, ParameterStore
from nsad.perception import MlpModel, weighted_ce_grad
from nsad.program import compile_ruleset

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "nsad-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs_per_stage: int = 30
    batch_size: int = 8
    lr_stage1: float = 1e-4
    lr_stage2: float = 1e-5
    gamma: float = 0.5
    step_size: int = 10
    seed: int = 0
    class_weighting: bool = True
    freeze_w: bool = False
    w_init: float = reasoner.BALANCE_INIT

    def validate(self) -> None:
        if self.epochs_per_stage < 0:
            raise TrainingError("epochs_per_stage must be non-negative")
        if self.batch_size < 1 or self.step_size < 1:
            raise TrainingError("batch_size and step_size must be positive")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise TrainingError("learning rates must be positive")
        if self.seed < 0:
            raise TrainingError("seed must be non-negative")


@dataclass
class Checkpoint:
    seed: int
    stage: int
    entries: dict  # qualified name -> ParamEntry
    version: int = CHECKPOINT_VERSION
    history: list = field(default_factory=list, compare=False)      # mean loss per epoch
    step_losses: list = field(default_factory=list, compare=False)

    @classmethod
    def from_store(cls, store: ParameterStore, seed: int, stage: int, **kw) -> "Checkpoint":
        return cls(seed, stage, {e.name: e for e in store.entries()}, **kw)

    def value(self, name: str) -> float:
        return self.entries[name].value


def _fmt(x: float) -> str:
    return repr(float(x))


def format_checkpoint(c: Checkpoint) -> str:
    lines = [f"{CHECKPOINT_MAGIC} v{c.version}", f"seed {c.seed}", f"stage {c.stage}"]
    for name in sorted(c.entries):
        e = c.entries[name]
        line = f"param {name} {_fmt(e.value)}"
        if e.bounds is not None:
            line += f" {_fmt(e.bounds[0])} {_fmt(e.bounds[1])}"
        if e.frozen:
            line += " frozen"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> Checkpoint:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + " v"):
        raise CheckpointError(f"{source}: not a checkpoint file")
    try:
        version = int(lines[0][len(CHECKPOINT_MAGIC) + 2:])
    except ValueError:
        raise CheckpointError(f"{source}: bad version line {lines[0]!r}") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    try:
        k1, seed = lines[1].split()
        k2, stage = lines[2].split()
        if (k1, k2) != ("seed", "stage") or stage not in ("1", "2"):
            raise ValueError
        seed_i, stage_i = int(seed), int(stage)
    except (IndexError, ValueError):
        raise CheckpointError(f"{source}: malformed seed/stage header") from None
    entries = {}
    for lineno, line in enumerate(lines[3:], start=4):
        parts = line.split()
        if not parts:
            continue
        frozen = parts[-1] == "frozen"
        if frozen:
            parts = parts[:-1]
        if parts[0] != "param" or len(parts) not in (3, 5):
            raise CheckpointError(f"{source}:{lineno}: malformed parameter line")
        try:
            value = float(parts[2])
            bounds = (float(parts[3]), float(parts[4])) if len(parts) == 5 else None
        except ValueError:
            raise CheckpointError(f"{source}:{lineno}: malformed number") from None
        name = parts[1]
        if name in entries:
            raise CheckpointError(f"{source}:{lineno}: duplicate parameter {name!r}")
        entries[name] = ParamEntry(name, value, bounds, frozen)
    return Checkpoint(seed_i, stage_i, entries, version)


def save_checkpoint(c: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_checkpoint(c))


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read(), str(path))


# ---------------------------------------------------------------------------
# stores
# ---------------------------------------------------------------------------


def _copy_entries(store: ParameterStore, names, c: Checkpoint) -> None:
    for name in names:
        e = c.entries[name]
        store.add(name, e.value, bounds=e.bounds, frozen=e.frozen)


def restore_store(c: Checkpoint, model: MlpModel | None = None, ruleset: RuleSet | None = None) -> ParameterStore:
    """Rebuild a store in model order (MLP, rules, balance) from a checkpoint.

    Raises :class:`CheckpointError` if the checkpoint holds parameters the
    given model/ruleset do not have, or lacks ones they need.
    """
    store = ParameterStore()
    expected = []
    if model is not None:
        expected += model.param_names()
    if ruleset is not None:
        expected += [r.qualified(p.name) for r in ruleset.rules for p in r.params]
        expected.append(reasoner.BALANCE)
    missing = [n for n in expected if n not in c.entries]
    extra = sorted(set(c.entries) - set(expected))
    if missing or extra:
        detail = []
        if missing:
            detail.append(f"missing {missing[:3]}")
        if extra:
            detail.append(f"unknown parameter {extra[:3]}")
        raise CheckpointError("checkpoint does not fit the model: " + ", ".join(detail))
    _copy_entries(store, expected, c)
    return store


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _samples(dataset) -> list:
    return list(dataset.samples if isinstance(dataset, Cohort) else dataset)


def train_split(dataset) -> list:
    return [s for s in _samples(dataset) if is_train(s.id)]


def holdout_split(dataset) -> list:
    return [s for s in _samples(dataset) if not is_train(s.id)]


def class_weights(labels: np.ndarray, enabled: bool = True) -> tuple:
    """Inverse class frequency, scaled so the two weights average to one."""
    if not enabled:
        return (1.0, 1.0)
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    if np.any(counts == 0):
        return (1.0, 1.0)
    inv = counts.sum() / counts
    inv = inv / inv.mean()
    return (float(inv[0]), float(inv[1]))


def epoch_order(seed: int, stage: int, epoch: int, n: int) -> np.ndarray:
    """Permutation for one epoch from a counter-based generator keyed on (seed, stage, epoch)."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stage, epoch])))
    return gen.permutation(n)


def _prepare(samples, model: MlpModel | None):
    if not samples:
        raise TrainingError("empty dataset")
    if any(s.label is None for s in samples):
        raise TrainingError("every training sample needs a label")
    labels = np.array([s.label for s in samples], dtype=np.int64)
    X = None
    if model is not None:
        X = np.vstack([np.asarray(s.imaging_features, dtype=np.float64) for s in samples])
        if X.shape[1] != model.input_dim:
            raise TrainingError(f"imaging features have width {X.shape[1]}, model expects {model.input_dim}")
    return X, labels


def _run_epochs(cfg, stage, n, labels, step_fn, store, opt) -> tuple:
    cw = class_weights(labels, cfg.class_weighting)
    history, steps = [], []
    for epoch in range(cfg.epochs_per_stage):
        lr = scheduled_lr(opt, epoch)
        order = epoch_order(cfg.seed, stage, epoch, n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]  # last short batch kept
            loss, grad = step_fn(idx, cw)
            opt.step_dense(grad, store, lr=lr)
            total += loss * len(idx)
            steps.append(loss)
        history.append(total / n)
        log.info("stage %d epoch %d lr %.3g loss %.6f", stage, epoch, lr, history[-1])
    return history, steps


def pretrain(model: MlpModel, dataset, cfg: TrainConfig) -> Checkpoint:
    """Stage 1: fit the perception MLP alone on the training split."""
    cfg.validate()
    samples = train_split(dataset)
    X, labels = _prepare(samples, model)
    store = ParameterStore()
    model.register(store, seed=cfg.seed)
    sl = model.param_slice(store)
    opt = AdamState(store, lr=cfg.lr_stage1, gamma=cfg.gamma, step_size=cfg.step_size)

    def step(idx, cw):
        logits, acts = model.forward_batch(X[idx], store)
        loss, dlogits = weighted_ce_grad(logits, labels[idx], cw)
        grad = np.zeros(len(store))
        grad[sl] = model.backward_batch(acts, dlogits, store)
        return loss, grad

    history, steps = _run_epochs(cfg, 1, len(samples), labels, step, store, opt)
    return Checkpoint.from_store(store, cfg.seed, 1, history=history, step_losses=steps)


def joint_store(model: MlpModel | None, ruleset: RuleSet, start: Checkpoint | None, cfg: TrainConfig) -> ParameterStore:
    store = ParameterStore()
    if model is not None:
        if start is None:
            raise TrainingError("a stage-1 checkpoint is required")
        restore_store(start, model)  # raises when the checkpoint does not fit
        _copy_entries(store, model.param_names(), start)
    reasoner.register_rule_params(store, ruleset)
    reasoner.register_balance(store, cfg.w_init, frozen=cfg.freeze_w)
    return store


class JointObjective:
    """Stage-2 loss over a fixed sample list as a function of the store values.

    ``loss_and_grad(idx, cw)`` returns the weighted cross-entropy of the
    adjusted logits on samples ``idx`` and its gradient w.r.t. every entry of
    ``store.values`` (frozen entries included; the optimizer masks them).
    """

    def __init__(self, model: MlpModel | None, ruleset: RuleSet, store: ParameterStore, samples,
                 X: np.ndarray | None = None, external: np.ndarray | None = None):
        self.model = model
        self.store = store
        self.labels = np.array([s.label for s in samples], dtype=np.int64)
        if model is not None and X is None:
            X = np.vstack([np.asarray(s.imaging_features, dtype=np.float64) for s in samples])
        if model is None and external is None:
            external = np.array([tuple(s.external_logits) for s in samples], dtype=np.float64)
        self.X, self.external = X, external
        self.program = compile_ruleset(ruleset)
        self.R, self.active = self.program.design([s.record for s in samples])
        self.theta_idx = np.array([store.index(nm) for nm in self.program.param_names], dtype=np.int64)
        self.w_idx = store.index(reasoner.BALANCE)
        self.sl = model.param_slice(store) if model is not None else None

    def loss_and_grad(self, idx=None, cw=(1.0, 1.0)) -> tuple:
        if idx is None:
            idx = np.arange(len(self.labels))
        store, model = self.store, self.model
        if model is not None:
            y, acts = model.forward_batch(self.X[idx], store)
        else:
            y = self.external[idx]
        delta, _, ddelta = self.program.evaluate(self.R[idx], self.active[idx], store.values[self.theta_idx])
        w = store.values[self.w_idx]
        adjusted = np.empty_like(y)
        adjusted[:, 0] = y[:, 0] - w * delta
        adjusted[:, 1] = y[:, 1] + delta
        loss, g = weighted_ce_grad(adjusted, self.labels[idx], cw)
        grad = np.zeros(len(store))
        if model is not None:
            # d adjusted / d y is the identity
            grad[self.sl] = model.backward_batch(acts, g, store)
        coef = g[:, 1] - w * g[:, 0]
        np.add.at(grad, self.theta_idx, coef @ ddelta)
        grad[self.w_idx] = -np.dot(g[:, 0], delta)
        return loss, grad


def train_joint(model: MlpModel | None, ruleset: RuleSet, dataset, cfg: TrainConfig, start: Checkpoint | None) -> Checkpoint:
    """Stage 2: fine-tune perception, rule parameters and the balance factor end to end.

    When every sample carries external logits the perception model is bypassed
    (pass ``model=None``) and only the symbolic parameters train.
    """
    cfg.validate()
    if start is not None and start.stage != 1:
        raise TrainingError(f"joint training starts from a stage-1 checkpoint, got stage {start.stage}")
    if model is not None and start is None:
        raise TrainingError("joint training with a perception model needs a stage-1 checkpoint")
    if isinstance(dataset, Cohort):
        problems = validate_ruleset(ruleset, dataset.schema.features)
        if problems:
            raise TrainingError("ruleset does not match the cohort schema: " + "; ".join(map(str, problems)))

    samples = train_split(dataset)
    X, labels = _prepare(samples, model)
    ext = None
    if model is None:
        if any(s.external_logits is None for s in samples):
            raise TrainingError("without a perception model every sample needs external logits")
        ext = np.array([tuple(s.external_logits) for s in samples], dtype=np.float64)
    store = joint_store(model, ruleset, start, cfg)

    objective = JointObjective(model, ruleset, store, samples, X, ext)
    opt = AdamState(store, lr=cfg.lr_stage2, gamma=cfg.gamma, step_size=cfg.step_size)
    history, steps = _run_epochs(cfg, 2, len(samples), labels, objective.loss_and_grad, store, opt)
    return Checkpoint.from_store(store, cfg.seed, 2, history=history, step_losses=steps)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def perception_logits(model: MlpModel | None, store: ParameterStore | None, samples) -> np.ndarray:
    if model is None:
        if any(s.external_logits is None for s in samples):
            raise TrainingError("samples lack external logits and no perception model was given")
        return np.array([tuple(s.external_logits) for s in samples], dtype=np.float64).reshape(-1, 2)
    if not samples:
        return np.zeros((0, 2))
    X = np.vstack([np.asarray(s.imaging_features, dtype=np.float64) for s in samples])
    return model.forward_batch(X, store)[0]


def adjusted_logits(model, store: ParameterStore, ruleset: RuleSet, samples) -> tuple:
    """(perception logits, adjusted logits) for a list of samples."""
    y = perception_logits(model, store, samples)
    if not samples:
        return y, y.copy()
    program = compile_ruleset(ruleset)
    R, active = program.design([s.record for s in samples])
    delta, _, _ = program.evaluate(R, active, program.theta(store))
    w = store[reasoner.BALANCE]
    out = y.copy()
    out[:, 0] -= w * delta
    out[:, 1] += delta
    return y, out


def accuracy_of(logits: np.ndarray, labels) -> float:
    if len(labels) == 0:
        return math.nan
    pred = (logits[:, 1] > logits[:, 0]).astype(np.int64)
    return float(np.mean(pred == np.asarray(labels)))
