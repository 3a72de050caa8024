"""Desk-scale training recipe for the refinement block.

The block sees edited separated speech at inference, including spliced-in
material that is cleaner than its surroundings, so it is trained on edited
fixtures: the query input is the edited separated speech, the target is the
same edit applied to the clean fixture. Training starts from the identity
map (W_O = 0), which the residual connection makes exact.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import PipelineConfig
from .editing import EditScript, apply_edit
from .fixtures import make_fixture
from .refine import AttentionBlock, train_refiner
from .separation import SeparatorSpec, separate
from .suppress import suppress

TRAIN_BASE_SEED = 100
TRAIN_COUNT = 16
TRAIN_STEPS = 300
TRAIN_LEARNING_RATE = 3e-3


def identity_start(block: AttentionBlock) -> AttentionBlock:
    """Same projections, zero output matrix: refine(x, .) == x exactly."""
    return replace(block, w_o=np.zeros_like(block.w_o))


def training_script(seed: int, replacement) -> EditScript:
    operation = "replacement" if seed % 2 == 0 else "insertion"
    return EditScript(4000 + (seed % 5) * 500, 4000, operation, replacement)


def edit_training_pairs(count: int = TRAIN_COUNT, base_seed: int = TRAIN_BASE_SEED,
                        duration: float = 1.0, separator: SeparatorSpec | None = None):
    """(edited separated speech, edited clean speech) pairs on seeded fixtures."""
    separator = separator or SeparatorSpec("spectral_subtraction")
    pairs = []
    for seed in range(base_seed, base_seed + count):
        fx = make_fixture(seed, snr_db=(0.0, 5.0, 10.0)[seed % 3],
                          noise_kind=("white", "pink")[seed % 2], duration=duration)
        speech = separate(fx.noisy, separator).speech
        script = training_script(seed, fx.replacement)
        pairs.append((apply_edit(speech, script), apply_edit(fx.clean, script)))
    return pairs


def train_edit_refiner(count: int = TRAIN_COUNT, base_seed: int = TRAIN_BASE_SEED,
                       steps: int = TRAIN_STEPS, learning_rate: float = TRAIN_LEARNING_RATE,
                       cfg: PipelineConfig | None = None,
                       initial: AttentionBlock | None = None):
    """Train a block for the pipeline described by ``cfg``; returns (block, history)."""
    cfg = cfg or PipelineConfig()
    separator = (cfg.separator if cfg.separator.kind == "spectral_subtraction"
                 else SeparatorSpec("spectral_subtraction"))
    if initial is None:
        initial = identity_start(AttentionBlock.init(cfg.d_model, cfg.heads, cfg.block_seed))
    pairs = edit_training_pairs(count, base_seed, separator=separator)

    def suppressor(w):
        if not cfg.suppression_enabled:
            return w
        return suppress(w, cfg.sbl, cfg.filter, cfg.sbl_frame_length, cfg.sbl_hop_length)

    return train_refiner(pairs, initial, steps, learning_rate, suppressor=suppressor)
