"""A tiny causal language model with named low-rank adapters.

One frozen base hosts any number of adapters; exactly one is active per
forward pass, selected by name. This mirrors the serving arrangement where
both roles share a base model and are picked per request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from openrex.errors import ConfigError

PAD, UNK = "<pad>", "<unk>"


@dataclass(frozen=True)
class Tokenizer:
    """Whitespace tokenizer with a fixed vocabulary."""

    vocab: dict[str, int]
    inverse: tuple[str, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        ordered = sorted(self.vocab, key=self.vocab.get)
        object.__setattr__(self, "inverse", tuple(ordered))

    @classmethod
    def build(cls, texts) -> "Tokenizer":
        vocab = {PAD: 0, UNK: 1}
        for text in texts:
            for word in text.split():
                vocab.setdefault(word, len(vocab))
        return cls(vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        return [self.vocab.get(w, self.unk_id) for w in text.split()]

    def covers(self, text: str) -> bool:
        return all(w in self.vocab for w in text.split())

    def decode(self, ids) -> str:
        return " ".join(self.inverse[i] for i in ids if i != self.pad_id)


class LoRALinear(nn.Module):
    """A frozen linear layer plus named low-rank deltas."""

    def __init__(self, base: nn.Linear, rank: int, scaling: float):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.rank = rank
        self.scale = scaling / rank
        self.lora_A = nn.ModuleDict()
        self.lora_B = nn.ModuleDict()
        self.active: str | None = None

    def add_adapter(self, name: str) -> None:
        if name in self.lora_A:
            raise ConfigError(f"adapter {name!r} already exists")
        a = nn.Linear(self.base.in_features, self.rank, bias=False)
        b = nn.Linear(self.rank, self.base.out_features, bias=False)
        nn.init.normal_(a.weight, std=1.0 / math.sqrt(self.base.in_features))
        nn.init.zeros_(b.weight)
        self.lora_A[name] = a
        self.lora_B[name] = b

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.base(x)
        if self.active is not None:
            name = self.active
            y = y + self.lora_B[name](self.lora_A[name](x)) * self.scale
        return y


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.o_proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        batch, seq, dim = h.shape
        head_dim = dim // self.n_heads

        def split(t):
            return t.view(batch, seq, self.n_heads, head_dim).transpose(1, 2)

        attn = F.scaled_dot_product_attention(
            split(self.q_proj(h)), split(self.k_proj(h)), split(self.v_proj(h)), is_causal=True
        )
        attn = attn.transpose(1, 2).reshape(batch, seq, dim)
        x = x + self.o_proj(attn)
        return x + self.mlp(self.ln2(x))


class TinyCausalLM(nn.Module):
    """Small decoder-only LM; all base parameters freeze once adapters exist."""

    def __init__(self, vocab_size: int, d_model: int = 64, n_layers: int = 2,
                 n_heads: int = 2, max_seq_len: int = 512):
        super().__init__()
        self.config = {
            "vocab_size": vocab_size,
            "d_model": d_model,
            "n_layers": n_layers,
            "n_heads": n_heads,
            "max_seq_len": max_seq_len,
        }
        self.tok_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(max_seq_len, d_model)
        self.blocks = nn.ModuleList(Block(d_model, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(d_model)
        self.lm_head = nn.Linear(d_model, vocab_size, bias=False)
        self._adapters: list[str] = []

    def module_paths(self) -> dict[str, nn.Module]:
        paths: dict[str, nn.Module] = {"lm_head": self}
        for i, block in enumerate(self.blocks):
            for name in ("q_proj", "k_proj", "v_proj", "o_proj"):
                paths[f"blocks.{i}.{name}"] = block
        return paths

    def add_adapter(self, name: str, rank: int, scaling: float,
                    target_modules: tuple[str, ...]) -> None:
        for param in self.parameters():
            param.requires_grad_(False)
        for path, owner in self.module_paths().items():
            attr = path.rsplit(".", 1)[-1]
            if attr not in target_modules:
                continue
            layer = getattr(owner, attr)
            if not isinstance(layer, LoRALinear):
                layer = LoRALinear(layer, rank, scaling)
                setattr(owner, attr, layer)
            layer.add_adapter(name)
        self._adapters.append(name)

    def adapters(self) -> list[str]:
        return list(self._adapters)

    def set_adapter(self, name: str | None) -> None:
        if name is not None and name not in self._adapters:
            raise ConfigError(f"unknown adapter {name!r}; have {self._adapters}")
        for module in self.modules():
            if isinstance(module, LoRALinear):
                module.active = name

    def adapter_parameters(self, name: str):
        for module in self.modules():
            if isinstance(module, LoRALinear) and name in module.lora_A:
                yield from module.lora_A[name].parameters()
                yield from module.lora_B[name].parameters()

    def adapter_state_dict(self, name: str) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {}
        for path, module in self.named_modules():
            if isinstance(module, LoRALinear) and name in module.lora_A:
                prefix = f"base_model.model.{path}"
                out[f"{prefix}.lora_A.weight"] = module.lora_A[name].weight.detach().clone()
                out[f"{prefix}.lora_B.weight"] = module.lora_B[name].weight.detach().clone()
        return out

    def load_adapter_state_dict(self, name: str, state: dict[str, torch.Tensor]) -> None:
        for path, module in self.named_modules():
            if isinstance(module, LoRALinear) and name in module.lora_A:
                prefix = f"base_model.model.{path}"
                with torch.no_grad():
                    module.lora_A[name].weight.copy_(state[f"{prefix}.lora_A.weight"])
                    module.lora_B[name].weight.copy_(state[f"{prefix}.lora_B.weight"])

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        seq = input_ids.shape[1]
        if seq > self.config["max_seq_len"]:
            raise ConfigError(
                f"sequence length {seq} exceeds max_seq_len {self.config['max_seq_len']}"
            )
        positions = torch.arange(seq, device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(positions)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_f(x))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(tokenizer: Tokenizer, cfg) -> TinyCausalLM:
    torch.manual_seed(cfg.seed)
    return TinyCausalLM(
        vocab_size=len(tokenizer),
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        max_seq_len=cfg.max_seq_len,
    )
