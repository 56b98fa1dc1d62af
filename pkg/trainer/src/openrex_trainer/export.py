"""Artifact export: adapters in the standard low-rank adapter layout, the
base model bundle for serving, and distribution dumps in the inference
package's cross-check format."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from safetensors.torch import load_file, save_file

from openrex.errors import ConfigError

from .config import TrainerConfig
from .model import TinyCausalLM, Tokenizer
from .train import TrainedBundle

ADAPTER_CONFIG = "adapter_config.json"
ADAPTER_WEIGHTS = "adapter_model.safetensors"


def export_adapters(bundle: TrainedBundle, out_dir: str | Path) -> dict[str, Path]:
    """One directory per adapter: a config json plus safetensors weights."""
    out = Path(out_dir)
    written: dict[str, Path] = {}
    for name in bundle.model.adapters():
        adapter_dir = out / name
        adapter_dir.mkdir(parents=True, exist_ok=True)
        config = {
            "peft_type": "LORA",
            "base_model_name_or_path": bundle.config.base_model,
            "r": bundle.config.rank,
            "lora_alpha": bundle.config.scaling,
            "target_modules": list(bundle.config.target_modules),
            "task_type": "CAUSAL_LM",
            "adapter_name": name,
        }
        (adapter_dir / ADAPTER_CONFIG).write_text(
            json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        save_file(bundle.model.adapter_state_dict(name), str(adapter_dir / ADAPTER_WEIGHTS))
        written[name] = adapter_dir
    return written


def export_base(bundle: TrainedBundle, out_dir: str | Path) -> Path:
    """Base weights, model config, and tokenizer vocabulary."""
    base_dir = Path(out_dir) / "base"
    base_dir.mkdir(parents=True, exist_ok=True)
    (base_dir / "config.json").write_text(
        json.dumps(bundle.model.config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (base_dir / "vocab.json").write_text(
        json.dumps(bundle.tokenizer.vocab, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    base_state = {
        key: value
        for key, value in bundle.model.state_dict().items()
        if ".lora_A." not in key and ".lora_B." not in key
    }
    base_state = {key.replace(".base.", "."): value for key, value in base_state.items()}
    save_file(base_state, str(base_dir / "model.safetensors"))
    return base_dir


def export_bundle(bundle: TrainedBundle, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    export_base(bundle, out)
    export_adapters(bundle, out / "adapters")
    return out


def load_bundle(out_dir: str | Path, cfg: TrainerConfig | None = None) -> TrainedBundle:
    """Reconstruct a servable bundle from exported artifacts."""
    out = Path(out_dir)
    base_dir = out / "base"
    if not base_dir.exists():
        raise ConfigError(f"no exported base model under {out}")
    model_config = json.loads((base_dir / "config.json").read_text(encoding="utf-8"))
    vocab = json.loads((base_dir / "vocab.json").read_text(encoding="utf-8"))
    tokenizer = Tokenizer(vocab)
    model = TinyCausalLM(**model_config)
    model.load_state_dict(load_file(str(base_dir / "model.safetensors")))
    cfg = cfg or TrainerConfig()
    adapters_dir = out / "adapters"
    if adapters_dir.exists():
        for adapter_dir in sorted(adapters_dir.iterdir()):
            if not adapter_dir.is_dir():
                continue
            meta = json.loads((adapter_dir / ADAPTER_CONFIG).read_text(encoding="utf-8"))
            model.add_adapter(
                meta["adapter_name"], meta["r"], meta["lora_alpha"], tuple(meta["target_modules"])
            )
            model.load_adapter_state_dict(
                meta["adapter_name"], load_file(str(adapter_dir / ADAPTER_WEIGHTS))
            )
    return TrainedBundle(config=cfg, tokenizer=tokenizer, model=model)


def export_distribution_dump(bundle: TrainedBundle, path: str | Path) -> int:
    """Write captured teacher/student distributions in the cross-check
    format: one JSON record per line with probability rows and target ids.

    Rows are renormalized to compensate for float32 softmax round-off so
    they satisfy the format's row-sum contract exactly.
    """
    records = bundle.capture
    if not records:
        raise ConfigError("nothing captured; run stage two with capture_batches >= 1")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            teacher = np.asarray(rec["teacher"], dtype=np.float64)
            student = np.asarray(rec["student"], dtype=np.float64)
            teacher /= teacher.sum(axis=1, keepdims=True)
            student /= student.sum(axis=1, keepdims=True)
            fh.write(
                json.dumps(
                    {
                        "example_id": rec["example_id"],
                        "teacher": {"kind": "probs", "rows": teacher.tolist()},
                        "student": {"kind": "probs", "rows": student.tolist()},
                        "target_ids": rec["target_ids"],
                        "tau": bundle.config.tau,
                        "alpha": bundle.config.alpha,
                        "logged": {"kl": rec["kl"]},
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return len(records)
