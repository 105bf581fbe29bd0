"""Mini-batch BPTT training loop shared by both models."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .nn.autodiff import GradientContext, NonFiniteError
from .nn.optim import Nadam, clip_gradients
from .seq2seq import save_model

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    epoch: int
    optimizer: Nadam
    rng: np.random.Generator
    history: list = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = 0
    best_params: dict = None

    def manifest(self):
        return {
            "epoch": self.epoch,
            "step_count": self.optimizer.step_count,
            "rng_state": self.rng.bit_generator.state,
            "history": [[e, _num(t), _num(v)] for e, t, v in self.history],
            "best_val": _num(self.best_val),
            "best_epoch": self.best_epoch,
        }


def _num(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _unnum(x):
    return math.nan if x is None else float(x)


def new_state(model, seed):
    cfg = model.config
    return TrainState(0, Nadam(model.params, lr=cfg.learning_rate), np.random.default_rng([seed, 1]))


def restore_state(model, loaded):
    """Rebuild a :class:`TrainState` from a checkpoint loaded with ``load_model``."""
    info = loaded.training
    if "rng_state" not in info:
        raise ValueError("checkpoint carries no training state to resume from")
    opt = Nadam(model.params, lr=model.config.learning_rate)
    opt.load_state(loaded.arrays, info["step_count"])
    rng = np.random.default_rng()
    rng.bit_generator.state = info["rng_state"]
    state = TrainState(int(info["epoch"]), opt, rng,
                       [(int(e), _unnum(t), _unnum(v)) for e, t, v in info.get("history", [])],
                       _unnum(info.get("best_val")) if info.get("best_val") is not None else math.inf,
                       int(info.get("best_epoch", 0)))
    best = {k[len("best."):]: v for k, v in loaded.arrays.items() if k.startswith("best.")}
    state.best_params = best or None
    return state


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _count_active(model, batch):
    return float(batch.target_mask.sum())


def train_step(model, batch, rng, optimizer, training=True):
    """One forward/backward/update; returns the batch loss."""
    ctx = GradientContext()
    P = model.params.as_tensors()
    try:
        loss = model.batch_loss(ctx, P, batch, training=training, rng=rng)
    except NonFiniteError as exc:
        raise TrainingDiverged(f"non-finite forward value; first non-finite tensor: {exc.tensor_name}") from exc
    ctx.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
    grads = clip_gradients(grads, model.config.gradient_clip)
    optimizer.step(model.params, grads)
    return float(loss.data)


def evaluate_loss(model, examples, batch_size):
    if not examples:
        return math.nan
    total, count = 0.0, 0.0
    for chunk in _batches(len(examples), batch_size, np.arange(len(examples))):
        batch = model.make_batch([examples[i] for i in chunk])
        n = _count_active(model, batch)
        total += model.loss([examples[i] for i in chunk]) * n
        count += n
    return total / count


def train(model, train_examples, val_examples=(), *, epochs=None, seed=0, state=None, on_epoch=None):
    """Train ``model`` in place; returns the :class:`TrainState`.

    Each epoch shuffles the training examples, runs mini-batches with
    dropout, clips by global norm and applies Nadam.  The reported train loss
    is the active-step-weighted mean of the batch losses; validation loss is
    computed without dropout.  ``state`` resumes a previous run.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    state = state or new_state(model, seed)
    val_examples = list(val_examples)
    n = len(train_examples)
    if n == 0:
        raise ValueError("no training examples")
    while state.epoch < epochs:
        order = state.rng.permutation(n)
        total, count = 0.0, 0.0
        for chunk in _batches(n, cfg.batch_size, order):
            batch = model.make_batch([train_examples[i] for i in chunk])
            loss = train_step(model, batch, state.rng, state.optimizer)
            w = _count_active(model, batch)
            total += loss * w
            count += w
        state.epoch += 1
        train_loss = total / count
        if not math.isfinite(train_loss):
            raise TrainingDiverged(f"epoch {state.epoch}: training loss is {train_loss}")
        val_loss = evaluate_loss(model, val_examples, cfg.batch_size)
        state.history.append((state.epoch, train_loss, val_loss))
        if math.isfinite(val_loss) and val_loss < state.best_val:
            state.best_val = val_loss
            state.best_epoch = state.epoch
            state.best_params = {k: v.copy() for k, v in model.params.items()}
        log.info("epoch %d train %.6f val %.6f", state.epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(state)
    return state


def save_training_checkpoint(path, model, state, **meta):
    """Final-epoch checkpoint including optimizer, rng and best-so-far parameters."""
    extra = dict(state.optimizer.state_arrays())
    if state.best_params is not None:
        extra.update({f"best.{k}": v for k, v in state.best_params.items()})
    save_model(path, model, training=state.manifest(), extra_arrays=extra, **meta)


def write_loss_curve(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in history:
            fh.write(f"{epoch},{tr!r},{'' if not math.isfinite(va) else repr(va)}\n")
