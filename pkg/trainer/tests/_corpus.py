"""Synthetic labeled corpus for trainer tests."""

from __future__ import annotations

from openrex.domain import Corpus, Instance, LabeledInstance, RelationName


def training_corpus(n_rel: int = 10, per_rel: int = 5) -> Corpus:
    items = []
    for r in range(n_rel):
        rel = RelationName(f"relation {r:02d}")
        for j in range(per_rel):
            items.append(
                LabeledInstance(
                    Instance(
                        f"p{r:02d}-{j}",
                        f"pool sentence {j} topic {r}",
                        f"h{r}{j}",
                        f"t{r}{j}",
                    ),
                    rel,
                )
            )
    return Corpus(role="train", instances=tuple(items))
