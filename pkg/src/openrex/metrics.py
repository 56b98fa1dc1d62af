"""Clustering and classification metrics over predictions versus gold labels.

Free-text predicted relation names act as cluster ids after
canonicalization: every distinct name is one cluster, with no string match
against gold required. Classification scores additionally align predicted
names to gold classes through an optimal one-to-one assignment; that choice
is recorded in the report.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .domain import RelationName
from .errors import AlignmentError

CLASSIFICATION_ALIGNMENT = "optimal one-to-one assignment (maximum total overlap)"


def _aligned_labels(pred: Mapping[str, str], gold: Mapping[str, str]) -> tuple[list, list]:
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))[:3]
        extra = sorted(set(pred) - set(gold))[:3]
        raise AlignmentError(
            f"prediction and gold ids differ (missing {missing}, unexpected {extra})"
        )
    ids = sorted(pred)
    return [pred[i] for i in ids], [gold[i] for i in ids]


def _contingency(pred_labels: Sequence, gold_labels: Sequence) -> Counter:
    return Counter(zip(pred_labels, gold_labels))


def _harmonic(a: float, b: float) -> float:
    return 2 * a * b / (a + b) if a + b > 0 else 0.0


def b_cubed(pred: Mapping[str, str], gold: Mapping[str, str]) -> tuple[float, float, float]:
    """Per-item precision and recall averaged over instances, with their
    harmonic mean."""
    pred_labels, gold_labels = _aligned_labels(pred, gold)
    cluster_sizes = Counter(pred_labels)
    class_sizes = Counter(gold_labels)
    joint = _contingency(pred_labels, gold_labels)
    precision = recall = 0.0
    for p_label, g_label in zip(pred_labels, gold_labels):
        overlap = joint[(p_label, g_label)]
        precision += overlap / cluster_sizes[p_label]
        recall += overlap / class_sizes[g_label]
    n = len(pred_labels)
    precision /= n
    recall /= n
    return precision, recall, _harmonic(precision, recall)


def _entropy(counts: Sequence[int], total: int) -> float:
    return -sum((c / total) * math.log(c / total) for c in counts if c)


def v_measure(pred: Mapping[str, str], gold: Mapping[str, str]) -> tuple[float, float, float]:
    """Entropy-based homogeneity and completeness with their harmonic mean.

    Degenerate conventions: zero class entropy gives homogeneity 1, zero
    cluster entropy gives completeness 1.
    """
    pred_labels, gold_labels = _aligned_labels(pred, gold)
    n = len(pred_labels)
    h_class = _entropy(list(Counter(gold_labels).values()), n)
    h_cluster = _entropy(list(Counter(pred_labels).values()), n)
    joint = _contingency(pred_labels, gold_labels)
    h_class_given_cluster = 0.0
    h_cluster_given_class = 0.0
    cluster_sizes = Counter(pred_labels)
    class_sizes = Counter(gold_labels)
    for (p_label, g_label), count in joint.items():
        h_class_given_cluster -= (count / n) * math.log(count / cluster_sizes[p_label])
        h_cluster_given_class -= (count / n) * math.log(count / class_sizes[g_label])
    homogeneity = 1.0 if h_class == 0 else 1.0 - h_class_given_cluster / h_class
    completeness = 1.0 if h_cluster == 0 else 1.0 - h_cluster_given_class / h_cluster
    return homogeneity, completeness, _harmonic(homogeneity, completeness)


def ari(pred: Mapping[str, str], gold: Mapping[str, str]) -> float:
    """Pair-counting Rand index adjusted for chance, via the contingency
    table. Identical degenerate partitions (both single groups, or both all
    singletons) score 1."""
    pred_labels, gold_labels = _aligned_labels(pred, gold)
    n = len(pred_labels)
    joint = _contingency(pred_labels, gold_labels)

    def comb2(x: int) -> int:
        return x * (x - 1) // 2

    sum_ij = sum(comb2(c) for c in joint.values())
    sum_a = sum(comb2(c) for c in Counter(pred_labels).values())
    sum_b = sum(comb2(c) for c in Counter(gold_labels).values())
    total = comb2(n)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def aligned_macro_prf(
    pred: Mapping[str, str], gold: Mapping[str, str]
) -> tuple[float, float, float]:
    """Macro precision/recall/F1 after aligning predicted names to gold
    classes one-to-one.

    The assignment maximizes total overlap; predicted names left unassigned
    contribute nothing but their instances still count against precision of
    nothing and recall of their gold class. Gold classes without an assigned
    cluster score zero.
    """
    pred_labels, gold_labels = _aligned_labels(pred, gold)
    pred_names = sorted(set(pred_labels))
    gold_names = sorted(set(gold_labels))
    matrix = np.zeros((len(pred_names), len(gold_names)), dtype=np.int64)
    p_index = {name: i for i, name in enumerate(pred_names)}
    g_index = {name: j for j, name in enumerate(gold_names)}
    for p_label, g_label in zip(pred_labels, gold_labels):
        matrix[p_index[p_label], g_index[g_label]] += 1
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    assigned = {gold_names[j]: pred_names[i] for i, j in zip(rows, cols)}

    cluster_sizes = Counter(pred_labels)
    class_sizes = Counter(gold_labels)
    precisions, recalls, f1s = [], [], []
    for g_label in gold_names:
        p_label = assigned.get(g_label)
        if p_label is None:
            tp = 0
            precision = recall = 0.0
        else:
            tp = matrix[p_index[p_label], g_index[g_label]]
            precision = tp / cluster_sizes[p_label]
            recall = tp / class_sizes[g_label]
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(_harmonic(precision, recall))
    k = len(gold_names)
    return sum(precisions) / k, sum(recalls) / k, sum(f1s) / k


def accuracy(pred: Mapping[str, str], gold: Mapping[str, str]) -> float:
    """Exact canonical-name accuracy."""
    pred_labels, gold_labels = _aligned_labels(pred, gold)
    hits = sum(
        RelationName(p) == RelationName(g) for p, g in zip(pred_labels, gold_labels)
    )
    return hits / len(pred_labels)


def pass_at_k(
    attempts: Mapping[str, Sequence[RelationName]], gold: Mapping[str, RelationName]
) -> float:
    """Fraction of instances whose discovery attempts include the gold
    relation."""
    if set(attempts) != set(gold):
        raise AlignmentError("attempt and gold ids differ")
    if not gold:
        raise AlignmentError("empty gold map")
    hits = sum(
        RelationName(gold[i]) in {RelationName(r) for r in rels}
        for i, rels in attempts.items()
    )
    return hits / len(gold)


@dataclass(frozen=True)
class EvalReport:
    """The full metric bundle for one prediction set."""

    b3_precision: float
    b3_recall: float
    b3_f1: float
    v_homogeneity: float
    v_completeness: float
    v_f1: float
    ari: float
    cls_precision: float
    cls_recall: float
    cls_f1: float
    accuracy: float
    instances: int
    gold_classes: int
    predicted_clusters: int
    pass_at_k: float | None = None
    classification_alignment: str = CLASSIFICATION_ALIGNMENT
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "b3": {"precision": self.b3_precision, "recall": self.b3_recall, "f1": self.b3_f1},
            "v_measure": {
                "homogeneity": self.v_homogeneity,
                "completeness": self.v_completeness,
                "f1": self.v_f1,
            },
            "ari": self.ari,
            "classification": {
                "precision": self.cls_precision,
                "recall": self.cls_recall,
                "f1": self.cls_f1,
                "alignment": self.classification_alignment,
            },
            "accuracy": self.accuracy,
            "pass_at_k": self.pass_at_k,
            "counts": {
                "instances": self.instances,
                "gold_classes": self.gold_classes,
                "predicted_clusters": self.predicted_clusters,
            },
            "notes": self.notes,
        }


def evaluate(
    pred: Mapping[str, RelationName | str],
    gold: Mapping[str, RelationName | str],
    attempts: Mapping[str, Sequence[RelationName]] | None = None,
) -> EvalReport:
    """Compute every metric over canonicalized predictions and gold labels."""
    pred_c = {str(k): str(RelationName(v)) for k, v in pred.items()}
    gold_c = {str(k): str(RelationName(v)) for k, v in gold.items()}
    if not gold_c:
        raise AlignmentError("empty gold map")
    b3_p, b3_r, b3_f = b_cubed(pred_c, gold_c)
    hom, comp, v_f = v_measure(pred_c, gold_c)
    cls_p, cls_r, cls_f = aligned_macro_prf(pred_c, gold_c)
    return EvalReport(
        b3_precision=b3_p,
        b3_recall=b3_r,
        b3_f1=b3_f,
        v_homogeneity=hom,
        v_completeness=comp,
        v_f1=v_f,
        ari=ari(pred_c, gold_c),
        cls_precision=cls_p,
        cls_recall=cls_r,
        cls_f1=cls_f,
        accuracy=accuracy(pred_c, gold_c),
        instances=len(gold_c),
        gold_classes=len(set(gold_c.values())),
        predicted_clusters=len(set(pred_c.values())),
        pass_at_k=pass_at_k(attempts, {k: RelationName(v) for k, v in gold_c.items()})
        if attempts is not None
        else None,
    )
