"""Clean and minimax adversarial training with momentum SGD, plus evaluation."""

import dataclasses
import logging

import numpy as np

from . import tensor as T
from .attacks import AttackSpec, attack_dataset, run_attack_batch
from .config import ConfigError, KVReader, fmt
from .net import NetworkConfig

__all__ = ["TrainConfig", "EpochMetrics", "TrainingDiverged", "train", "evaluate",
           "predict_under_attack"]

log = logging.getLogger(__name__)

MODES = ("clean", "adversarial")


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    mode: str = "clean"
    attack: AttackSpec = None
    widths: tuple = (8, 16)
    denoise: str = "none"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "adversarial" and self.attack is None:
            raise ConfigError("adversarial mode needs attack.* keys")

    def network(self, input_shape, num_classes):
        return NetworkConfig(input_shape=input_shape, widths=self.widths,
                             num_classes=num_classes, denoise=self.denoise, seed=self.seed)

    def to_kv(self):
        d = {"epochs": fmt(self.epochs), "batch_size": fmt(self.batch_size),
             "lr": fmt(float(self.lr)), "momentum": fmt(float(self.momentum)),
             "seed": fmt(self.seed), "mode": self.mode,
             "net.widths": fmt(self.widths), "net.denoise": self.denoise}
        if self.attack is not None:
            d.update({"attack." + k: v for k, v in self.attack.to_kv().items()})
        return d

    @classmethod
    def from_kv(cls, items, where="train config"):
        r = KVReader(items, where=where)
        attack = None
        ar = r.sub("attack.")
        if ar.items:
            attack = AttackSpec.from_reader(ar)
            ar.finish()
        kw = {"attack": attack}
        for key, get in (("epochs", r.get_int), ("batch_size", r.get_int), ("lr", r.get_float),
                         ("momentum", r.get_float), ("seed", r.get_int), ("mode", r.get_str)):
            if r.has(key):
                kw[key] = get(key)
        if r.has("net.widths"):
            kw["widths"] = tuple(r.get_int_list("net.widths"))
        if r.has("net.denoise"):
            kw["denoise"] = r.get_str("net.denoise")
        r.finish()
        return cls(**kw)


@dataclasses.dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float


def train(model, dataset, config, eval_set=None):
    """Train ``model`` in place; returns ``(model, [EpochMetrics, ...])``.

    In adversarial mode every minibatch is replaced by its attacked version
    (against the current weights) before the gradient step.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    history = []
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        tot_loss, tot_correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = dataset.x[idx], dataset.y[idx]
            if config.mode == "adversarial":
                model.requires_grad_(False)
                xb, _, _, _ = run_attack_batch(model, xb, yb, config.attack, final_loss=False)
            model.requires_grad_(True)
            logits = model(xb)
            loss = T.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"loss became {loss.item()} at epoch {epoch}, batch starting {start}; "
                    f"try a smaller learning rate (lr={config.lr})")
            loss.backward()
            for k, p in model.params.items():
                v = velocity[k]
                v *= config.momentum
                v += p.grad
                p.data = p.data - config.lr * v
            tot_loss += loss.item() * len(idx)
            tot_correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
        model.requires_grad_(False)
        ev = eval_set if eval_set is not None else dataset
        m = EpochMetrics(epoch, tot_loss / n, tot_correct / n, evaluate(model, ev))
        log.info("epoch %d loss %.4f train_acc %.3f eval_acc %.3f",
                 m.epoch, m.train_loss, m.train_acc, m.eval_acc)
        history.append(m)
    return model, history


def predict_under_attack(model, dataset, attack=None, batch_size=64):
    model.requires_grad_(False)
    if attack is None or attack.steps == 0:
        return model.predict(dataset.x)
    x_adv, _ = attack_dataset(model, dataset.x, dataset.y, attack, batch_size=batch_size)
    return model.predict(x_adv)


def evaluate(model, dataset, attack=None, batch_size=64):
    """Accuracy in [0, 1], on clean inputs or on per-example attack outputs."""
    if len(dataset) == 0:
        raise ValueError("evaluation set is empty")
    pred = predict_under_attack(model, dataset, attack, batch_size)
    return float(np.mean(pred == dataset.y))
