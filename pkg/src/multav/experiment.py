"""Desk-scale Mult-vs-Add robustness study.

Recipe: train a clean model, then adversarially fine-tune a copy of it
against each MultAV type ("Mult model") and against that type's additive
counterpart ("Add model"); evaluate all of them under the MultAV type.
Fine-tuning starts from the clean weights because adversarial training
from random init never leaves chance level on this data.
"""

import dataclasses

from .attacks import COUNTERPART, MULTAV_TYPES, desk_attack
from .data import DatasetSpec, generate
from .net import build_model
from .train import TrainConfig, evaluate, train

__all__ = ["ADV_FINETUNE", "TRAIN_ROA_STRIDE", "training_attack", "fit_clean",
           "fit_adversarial", "GapRow", "gap_study"]

# epochs / lr for the adversarial fine-tune stage
ADV_FINETUNE = {"epochs": 4, "lr": 0.005}
# ROA placement search stride while training (evaluation keeps stride 1)
TRAIN_ROA_STRIDE = 2


def training_attack(name, frame_hw=(16, 16)):
    spec = desk_attack(name, frame_hw)
    if spec.mask is not None and spec.mask.kind == "roa":
        spec = spec.replace(mask=dataclasses.replace(spec.mask, stride=TRAIN_ROA_STRIDE))
    return spec


def fit_clean(train_set, input_shape, num_classes, seed, **overrides):
    cfg = TrainConfig(seed=seed, **overrides)
    model = build_model(cfg.network(input_shape, num_classes))
    train(model, train_set, cfg)
    return model, cfg


def fit_adversarial(base, train_set, attack, seed, **overrides):
    kw = dict(ADV_FINETUNE)
    kw.update(overrides)
    cfg = TrainConfig(seed=seed, mode="adversarial", attack=attack, **kw)
    model = base.copy()
    train(model, train_set, cfg)
    return model


@dataclasses.dataclass
class GapRow:
    seed: int
    attack: str
    clean_model: float   # accuracy of the clean-trained model under ``attack``
    mult_model: float
    add_model: float

    @property
    def gap(self):
        return self.add_model - self.mult_model


def gap_study(seed, types=MULTAV_TYPES, data_spec=None, log=None):
    """One seed of the study; returns ``(clean_accuracy, [GapRow, ...])``."""
    spec = dataclasses.replace(data_spec or DatasetSpec(), seed=seed)
    train_set, test_set = generate(spec)
    hw = (spec.height, spec.width)
    base, _ = fit_clean(train_set, spec.video_shape, spec.num_classes, seed)
    base.requires_grad_(False)
    clean_acc = evaluate(base, test_set)
    rows = []
    for name in types:
        ev = desk_attack(name, hw)
        mult = fit_adversarial(base, train_set, training_attack(name, hw), seed)
        add = fit_adversarial(base, train_set, training_attack(COUNTERPART[name], hw), seed)
        row = GapRow(seed, name, evaluate(base, test_set, ev),
                     evaluate(mult, test_set, ev), evaluate(add, test_set, ev))
        if log is not None:
            log(row)
        rows.append(row)
    return clean_acc, rows
