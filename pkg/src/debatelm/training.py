"""MLM pretraining loop, held-out perplexity evaluation, and checkpoints.

Training runs the two-phase length schedule (short sequences for the first
floor(phase1_fraction * steps) steps, long ones after), clips gradients at
a global norm, and applies the warmup/decay Adam schedule. Every step is a
pure function of (data, config, seed): the trace of two identical runs is
byte-identical.

Checkpoints are single .npz containers holding every named parameter
tensor, both optimizer moment sets, and a JSON metadata blob (encoder
config, step count, schedule, and the hash of the vocabulary the model was
trained with). Writes go through a temp file and os.replace, so a crash
never leaves a torn checkpoint behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from debatelm.errors import ConfigError, NumericError
from debatelm.masking import (
    MaskedBatch,
    PackingConfig,
    batch_schedule,
    build_masked_batch,
    mask_tokens,
    pack_sequences,
    phase_max_len,
)
from debatelm.model import EncoderConfig, Params, init_params, loss_and_grads
from debatelm.optim import LrSchedule, OptimizerState, adam_step, clip_global_norm, lr_at
from debatelm.rng import seed_stream
from debatelm.wordpiece import Vocabulary, encode

CHECKPOINT_FORMAT = "debatelm-checkpoint-v1"


@dataclass
class PretrainConfig:
    steps: int
    batch_size: int
    peak_lr: float
    warmup_steps: int
    packing: PackingConfig
    seed: int = 0
    mode: str = "scr"  # "scr" = random init, "cont" = continue from a checkpoint
    init_checkpoint: str | None = None
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    grad_clip: float | None = 1.0
    eval_every: int = 0
    checkpoint_every: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.mode not in ("scr", "cont"):
            raise ConfigError(f"mode must be 'scr' or 'cont', got {self.mode!r}")
        if self.mode == "cont" and not self.init_checkpoint:
            raise ConfigError("mode 'cont' requires init_checkpoint")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        self.packing.validate()


@dataclass
class PretrainResult:
    params: Params
    opt_state: OptimizerState
    step_trace: list[dict] = field(default_factory=list)
    eval_trace: list[dict] = field(default_factory=list)


def tokenize_documents(texts: Sequence[str], vocab: Vocabulary) -> list[list[int]]:
    return [encode(text, vocab).token_ids for text in texts]


def evaluate_masked_ppl(params: Params, config: EncoderConfig, token_ids_per_doc,
                        packing: PackingConfig, *, max_len: int | None = None,
                        batch_size: int = 32, seed: int | None = None) -> dict:
    """Masked-prediction perplexity with a fixed evaluation mask per sequence.

    Returns {"ppl", "mean_nll", "n_targets", "n_sequences"}. The mask
    stream is named separately from training masks, so evaluation never
    perturbs training randomness.
    """
    seed = packing.seed if seed is None else seed
    max_len = packing.max_len_phase1 if max_len is None else max_len
    input_ids, attention_mask = pack_sequences(token_ids_per_doc, max_len)
    if input_ids.shape[0] == 0:
        raise ConfigError("no sequences to evaluate")
    total_nll = 0.0
    total_targets = 0
    for start in range(0, input_ids.shape[0], batch_size):
        rows = range(start, min(start + batch_size, input_ids.shape[0]))
        masked, labels = [], []
        for idx in rows:
            rng = seed_stream(seed, "evalmask", idx)
            ids, lab = mask_tokens(input_ids[idx], attention_mask[idx], config.vocab_size,
                                   packing, rng)
            masked.append(ids)
            labels.append(lab)
        batch = MaskedBatch(
            input_ids=np.stack(masked),
            labels=np.stack(labels),
            attention_mask=attention_mask[list(rows)].astype(np.int8),
        )
        loss, count, _ = loss_and_grads(params, config, batch, head="mlm")
        total_nll += loss * count
        total_targets += count
    if total_targets == 0:
        raise ConfigError("evaluation produced no masked targets; increase mask_prob or data")
    mean_nll = total_nll / total_targets
    return {
        "ppl": float(np.exp(mean_nll)),
        "mean_nll": float(mean_nll),
        "n_targets": int(total_targets),
        "n_sequences": int(input_ids.shape[0]),
    }


def pretrain_batches(train_token_ids, packing: PackingConfig, steps: int,
                     batch_size: int, vocab_size: int):
    """Yield (step, max_len, epoch, rows, MaskedBatch) for every training step.

    This is the single source of batch order and masking for both the
    training loop and the on-disk batch cache, so cached batches match
    training batches exactly.
    """
    phase1_steps = int(packing.phase1_fraction * steps)
    phases = []
    if phase1_steps > 0:
        phases.append(("phase1", packing.max_len_phase1, phase1_steps))
    if steps - phase1_steps > 0:
        phases.append(("phase2", packing.max_len_phase2, steps - phase1_steps))
    step = 0
    for phase_name, max_len, phase_steps in phases:
        input_ids, attention_mask = pack_sequences(train_token_ids, max_len)
        if input_ids.shape[0] == 0:
            raise ConfigError("training corpus packed to zero sequences")
        for epoch, rows in batch_schedule(input_ids.shape[0], batch_size, phase_steps,
                                          packing.seed, phase_name):
            step += 1
            batch = build_masked_batch(input_ids, attention_mask, rows, epoch,
                                       vocab_size, packing)
            yield step, max_len, epoch, rows, batch


def pretrain(train_token_ids, encoder_config: EncoderConfig, cfg: PretrainConfig,
             vocab: Vocabulary, *, holdout_token_ids=None,
             checkpoint_dir: str | Path | None = None) -> PretrainResult:
    """Run the full MLM pretraining schedule and return params plus traces.

    SCR mode random-initializes from the config seed; CONT mode loads the
    donor checkpoint's parameters (the vocabulary hash must match). On a
    non-finite loss or gradient the run aborts with NumericError; the last
    good checkpoint, if any was written, stays on disk.
    """
    cfg.validate()
    encoder_config.validate()
    dtype = np.float64 if cfg.dtype == "float64" else np.float32

    if cfg.mode == "cont":
        params, donor_config, _, meta = load_checkpoint(cfg.init_checkpoint)
        if donor_config.as_dict() != encoder_config.as_dict():
            raise ConfigError("donor checkpoint architecture differs from the requested config")
        if meta.get("vocab_hash") and meta["vocab_hash"] != vocab.content_hash():
            raise ConfigError("donor checkpoint was trained with a different vocabulary")
        params = {name: t.astype(dtype) for name, t in params.items()}
    else:
        params = init_params(encoder_config, cfg.seed, dtype=dtype)

    total_steps = max(cfg.steps, 1)
    schedule = LrSchedule(peak_lr=cfg.peak_lr, total_steps=total_steps,
                          warmup_steps=min(cfg.warmup_steps, total_steps - 1))
    opt = OptimizerState.create(params, schedule, beta1=cfg.beta1, beta2=cfg.beta2,
                                eps=cfg.eps, weight_decay=cfg.weight_decay)
    result = PretrainResult(params=params, opt_state=opt)
    if cfg.steps == 0:
        return result

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    dropout_rng = None
    step = 0
    for step, max_len, epoch, rows, batch in pretrain_batches(
            train_token_ids, cfg.packing, cfg.steps, cfg.batch_size,
            encoder_config.vocab_size):
        if encoder_config.dropout > 0:
            dropout_rng = seed_stream(cfg.seed, "dropout", step)
        try:
            loss, count, grads = loss_and_grads(params, encoder_config, batch,
                                                head="mlm", dropout_rng=dropout_rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
        except NumericError as exc:
            raise NumericError(f"{exc} (aborting; last saved checkpoint retained)") from exc
        if cfg.grad_clip is not None:
            clip_global_norm(grads, cfg.grad_clip)
        adam_step(params, grads, opt)
        result.step_trace.append(
            {"step": step, "lr": lr_at(step, schedule), "max_len": max_len,
             "loss": float(loss), "n_targets": int(count),
             "expected_max_len": phase_max_len(step, cfg.steps, cfg.packing)}
        )
        if cfg.eval_every and holdout_token_ids and step % cfg.eval_every == 0:
            stats = evaluate_masked_ppl(params, encoder_config, holdout_token_ids,
                                        cfg.packing, batch_size=cfg.batch_size)
            result.eval_trace.append({"step": step, **stats})
        if checkpoint_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir / f"step{step:07d}.npz", params,
                            encoder_config, opt, step, vocab.content_hash())

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir / "final.npz", params, encoder_config, opt,
                        step, vocab.content_hash())
    return result


# ---------------------------------------------------------------------------
# Checkpoint container


def save_checkpoint(path: str | Path, params: Params, config: EncoderConfig,
                    opt_state: OptimizerState | None, step: int, vocab_hash: str,
                    extra_meta: dict | None = None) -> None:
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": config.as_dict(),
        "step": int(step),
        "vocab_hash": vocab_hash,
        "dtype": str(next(iter(params.values())).dtype),
    }
    if opt_state is not None:
        meta["optimizer"] = {
            "t": opt_state.t,
            "beta1": opt_state.beta1,
            "beta2": opt_state.beta2,
            "eps": opt_state.eps,
            "weight_decay": opt_state.weight_decay,
            "schedule": {
                "peak_lr": opt_state.schedule.peak_lr,
                "warmup_steps": opt_state.schedule.warmup_steps,
                "total_steps": opt_state.schedule.total_steps,
            },
        }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {f"param/{name}": t for name, t in params.items()}
    if opt_state is not None:
        arrays.update({f"opt_m/{name}": t for name, t in opt_state.m.items()})
        arrays.update({f"opt_v/{name}": t for name, t in opt_state.v.items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                       dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path):
    """Returns (params, config, opt_state | None, meta)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} container")
        params = {key[len("param/"):]: data[key] for key in data.files if key.startswith("param/")}
        opt_state = None
        if "optimizer" in meta:
            sched_meta = meta["optimizer"]["schedule"]
            opt_state = OptimizerState(
                schedule=LrSchedule(**sched_meta),
                beta1=meta["optimizer"]["beta1"],
                beta2=meta["optimizer"]["beta2"],
                eps=meta["optimizer"]["eps"],
                weight_decay=meta["optimizer"]["weight_decay"],
                t=meta["optimizer"]["t"],
                m={key[len("opt_m/"):]: data[key] for key in data.files if key.startswith("opt_m/")},
                v={key[len("opt_v/"):]: data[key] for key in data.files if key.startswith("opt_v/")},
            )
    config = EncoderConfig(**meta["config"])
    return params, config, opt_state, meta
