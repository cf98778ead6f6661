from dataclasses import replace
from fractions import Fraction

from weakfine.harness import METHODS, DataSettings, ExperimentConfig, SplitSettings
from weakfine.labels import SynthConfig
from weakfine.model import TrainConfig


def tiny_config(**kw):
    base = ExperimentConfig(
        rounds=2, budget=Fraction(4), methods=METHODS, seeds=(0, 1), hidden=8,
        data=DataSettings(synth=SynthConfig(n_fine=8, n_coarse=4, children_per_coarse=2,
                                            dim=6, per_class=30)),
        split=SplitSettings(2, 1, 5),
        train=TrainConfig(epochs=4, batch_size=32, learning_rate=1e-2),
    )
    return replace(base, **kw)
