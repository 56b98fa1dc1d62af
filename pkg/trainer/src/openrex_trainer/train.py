"""Two-stage adapter training.

Stage one fits the predictor adapter with token-averaged cross-entropy on
the target relation tokens only (prompt positions are masked out). Stage two
fits the discoverer adapter against the same targets, adding a distillation
term: the KL divergence from the frozen predictor's distribution (computed
on the predictor-style input) to the discoverer's, both softened by ``tau``
and averaged over target tokens. The combined objective is
``ce + alpha * kl``; ``alpha = 0`` bypasses the teacher entirely and reduces
to plain cross-entropy training.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from openrex.errors import ConfigError

from .config import TrainerConfig
from .examples import PairedExample, TrainingExample
from .model import Tokenizer, TinyCausalLM, build_model


class TrainingDiverged(ConfigError):
    """Loss became non-finite."""


@dataclass
class TrainedBundle:
    """A base model, its tokenizer, and the adapters trained so far."""

    config: TrainerConfig
    tokenizer: Tokenizer
    model: TinyCausalLM
    losses: dict[str, list[dict]] = field(default_factory=dict)
    capture: list[dict] = field(default_factory=list)


def _encode_example(tokenizer: Tokenizer, prompt: str, target: str, max_len: int):
    prompt_ids = tokenizer.encode(prompt)
    target_ids = tokenizer.encode(target)
    room = max_len - len(target_ids)
    if room < 1:
        raise ConfigError("target longer than max_seq_len")
    prompt_ids = prompt_ids[-room:]
    return prompt_ids, target_ids


def _batchify(items: list, batch_size: int, seed: int) -> list[list]:
    order = list(range(len(items)))
    random.Random(seed).shuffle(order)
    shuffled = [items[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _pad_batch(rows: list[tuple[list[int], list[int]]], pad_id: int):
    """Input ids plus a label tensor that is -100 everywhere but target
    positions (shifted for next-token prediction)."""
    lengths = [len(p) + len(t) for p, t in rows]
    width = max(lengths)
    input_ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    labels = torch.full((len(rows), width), -100, dtype=torch.long)
    for r, (prompt_ids, target_ids) in enumerate(rows):
        seq = prompt_ids + target_ids
        input_ids[r, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        start = len(prompt_ids)
        for offset, token in enumerate(target_ids):
            labels[r, start + offset - 1] = token  # predicted from the previous position
    return input_ids, labels


def _target_nll(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over sequences of each sequence's token-averaged NLL."""
    log_probs = F.log_softmax(logits, dim=-1)
    mask = labels >= 0
    safe = labels.clamp(min=0)
    picked = log_probs.gather(-1, safe.unsqueeze(-1)).squeeze(-1)
    per_token = torch.where(mask, -picked, torch.zeros_like(picked))
    per_seq = per_token.sum(dim=1) / mask.sum(dim=1).clamp(min=1)
    return per_seq.mean()


def _check_finite(value: float, stage: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{stage} loss became {value} at step {step}")


def _linear_schedule(optimizer, total_steps: int):
    return torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / max(1, total_steps))
    )


def train_rp(
    cfg: TrainerConfig,
    examples: list[TrainingExample],
    tokenizer: Tokenizer | None = None,
) -> TrainedBundle:
    """Stage one: fit the predictor adapter with cross-entropy."""
    if not examples:
        raise ConfigError("no training examples")
    if any(e.role != "rp" for e in examples):
        raise ConfigError("stage one expects predictor-role examples")
    if tokenizer is None:
        tokenizer = Tokenizer.build(
            [e.input_text for e in examples] + [e.target_text for e in examples]
        )
    model = build_model(tokenizer, cfg)
    model.add_adapter("rp", cfg.rank, cfg.scaling, cfg.target_modules)
    model.set_adapter("rp")
    bundle = TrainedBundle(config=cfg, tokenizer=tokenizer, model=model)
    bundle.losses["rp"] = _run_ce_stage(cfg, bundle, "rp", examples, cfg.rp_lr)
    return bundle


def _run_ce_stage(cfg, bundle, adapter, examples, lr):
    model, tokenizer = bundle.model, bundle.tokenizer
    rows = [
        _encode_example(tokenizer, e.input_text, e.target_text, cfg.max_seq_len)
        for e in examples
    ]
    batches = _batchify(rows, cfg.batch_size, cfg.seed)
    optimizer = torch.optim.AdamW(list(model.adapter_parameters(adapter)), lr=lr)
    scheduler = _linear_schedule(optimizer, cfg.epochs * len(batches))
    log: list[dict] = []
    model.train()
    step = 0
    for _ in range(cfg.epochs):
        for batch in batches:
            input_ids, labels = _pad_batch(batch, tokenizer.pad_id)
            model.set_adapter(adapter)
            loss = _target_nll(model(input_ids), labels)
            _check_finite(loss.item(), adapter, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            log.append({"step": step, "loss": loss.item()})
            step += 1
    return log


def train_rd(cfg: TrainerConfig, pairs: list[PairedExample], bundle: TrainedBundle) -> TrainedBundle:
    """Stage two: fit the discoverer adapter against the frozen predictor.

    The teacher consumes each instance's predictor-style input, the student
    its discoverer-style input, both teacher-forced on the same target
    tokens. Per-batch distributions of the first ``capture_batches`` batches
    are retained on the bundle for export and cross-checking.
    """
    if not pairs:
        raise ConfigError("no training pairs")
    if "rp" not in bundle.model.adapters():
        raise ConfigError("stage two needs the trained predictor adapter")
    tokenizer = bundle.tokenizer
    for pair in pairs:
        if not tokenizer.covers(pair.target_text):
            raise ConfigError(
                f"tokenizer does not cover target {pair.target_text!r}; "
                "teacher and student must share one vocabulary"
            )
    model = bundle.model
    model.add_adapter("rd", cfg.rank, cfg.scaling, cfg.target_modules)

    rows = [
        (
            _encode_example(tokenizer, p.rd.input_text, p.rd.target_text, cfg.max_seq_len),
            _encode_example(tokenizer, p.rp.input_text, p.rp.target_text, cfg.max_seq_len),
            p.rp.example_id.rsplit(":", 1)[0],
        )
        for p in pairs
    ]
    batches = _batchify(rows, cfg.batch_size, cfg.seed)
    optimizer = torch.optim.AdamW(list(model.adapter_parameters("rd")), lr=cfg.rd_lr)
    scheduler = _linear_schedule(optimizer, cfg.epochs * len(batches))
    log: list[dict] = []
    model.train()
    step = 0
    for _ in range(cfg.epochs):
        for batch in batches:
            student_rows = [row[0] for row in batch]
            input_ids, labels = _pad_batch(student_rows, tokenizer.pad_id)
            model.set_adapter("rd")
            student_logits = model(input_ids)
            ce = _target_nll(student_logits, labels)

            if cfg.alpha > 0:
                kl, captured = _distillation_term(
                    cfg, model, tokenizer, batch, student_logits, labels,
                    capture=step < cfg.capture_batches,
                )
                if captured:
                    bundle.capture.extend(captured)
                loss = ce + cfg.alpha * kl
                kl_value = kl.item()
            else:
                loss = ce
                kl_value = 0.0

            _check_finite(loss.item(), "rd", step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            log.append(
                {"step": step, "ce": ce.item(), "kl": kl_value, "total": loss.item()}
            )
            step += 1
    bundle.losses["rd"] = log
    return bundle


def _distillation_term(cfg, model, tokenizer, batch, student_logits, labels, capture):
    teacher_rows = [row[1] for row in batch]
    teacher_ids, teacher_labels = _pad_batch(teacher_rows, tokenizer.pad_id)
    model.set_adapter("rp")
    with torch.no_grad():
        teacher_logits = model(teacher_ids)
    model.set_adapter("rd")

    total = torch.zeros((), dtype=student_logits.dtype)
    count = 0
    captured: list[dict] = []
    for r, ((s_prompt, s_target), (t_prompt, t_target), example_id) in enumerate(batch):
        s_start, t_start = len(s_prompt) - 1, len(t_prompt) - 1
        width = len(s_target)
        s_slice = student_logits[r, s_start : s_start + width, :]
        t_slice = teacher_logits[r, t_start : t_start + width, :]
        teacher_probs = F.softmax(t_slice / cfg.tau, dim=-1)
        student_log_probs = F.log_softmax(s_slice / cfg.tau, dim=-1)
        teacher_log_probs = torch.log(teacher_probs.clamp(min=1e-12))
        per_token = (teacher_probs * (teacher_log_probs - student_log_probs)).sum(dim=-1)
        total = total + per_token.mean()
        count += 1
        if capture:
            captured.append(
                {
                    "example_id": example_id,
                    "teacher": teacher_probs.detach().double().numpy(),
                    "student": student_log_probs.exp().detach().double().numpy(),
                    "target_ids": list(s_target),
                    "kl": per_token.mean().item(),
                }
            )
    return total / max(1, count), captured
