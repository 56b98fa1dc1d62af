"""Writers and readers for run artifacts.

Every run directory uses fixed file names: ``predictions.jsonl`` (one final
prediction per instance), ``manifest.json``, and per-stage trace files
``trace_discovery.jsonl`` / ``trace_denoising.jsonl`` /
``trace_prediction.jsonl``. Files contain no timestamps or absolute paths,
so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .domain import RelationName
from .errors import ParseError
from .infer import PipelineResult, ABSTAINED

PREDICTIONS_FILE = "predictions.jsonl"
MANIFEST_FILE = "manifest.json"
DISCOVERY_TRACE_FILE = "trace_discovery.jsonl"
DENOISING_TRACE_FILE = "trace_denoising.jsonl"
PREDICTION_TRACE_FILE = "trace_prediction.jsonl"
REPORT_JSON_FILE = "report.json"
REPORT_TSV_FILE = "report.tsv"
REPORT_FIGURE_FILE = "report.png"
PROBE_JSON_FILE = "probe.json"
PROBE_TSV_FILE = "probe.tsv"
PROBE_FIGURE_FILE = "probe.png"


def _dump_lines(records, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_run_artifacts(result: PipelineResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    final_stage = (
        "prediction"
        if result.prediction is not None
        else ("denoising" if result.denoising is not None else "discovery")
    )
    by_instance = (
        {p.instance_id: p for p in result.prediction.predictions}
        if result.prediction is not None
        else {}
    )
    predictions = []
    for iid, relation in result.final.items():
        rounds = 0
        attempt_k = None
        if result.prediction is not None:
            rounds = len(by_instance[iid].rounds)
        elif final_stage == "denoising":
            rounds = result.denoising.resolved_round.get(iid, 0)
        else:
            first = next(
                (a for a in result.discovery.attempts[iid] if a.relation is not None), None
            )
            attempt_k = first.attempt_k if first else None
        predictions.append(
            {
                "id": iid,
                "stage": final_stage,
                "relation": str(relation) if relation is not None else None,
                "attempt_k": attempt_k,
                "round": rounds,
            }
        )
    _dump_lines(predictions, out / PREDICTIONS_FILE)

    _dump_lines(
        (
            {
                "id": att.instance_id,
                "attempt_k": att.attempt_k,
                "relation": str(att.relation) if att.relation is not None else None,
                "raw": att.raw,
                "error": att.error,
            }
            for atts in result.discovery.attempts.values()
            for att in atts
        ),
        out / DISCOVERY_TRACE_FILE,
    )

    if result.denoising is not None:
        _dump_lines(
            (
                {
                    "id": tr.instance_id,
                    "relation": str(tr.relation),
                    "round": tr.round,
                    "verdicts": [str(v) if v is not None else None for v in tr.verdicts],
                    "reliable": tr.reliable,
                    "note": tr.note,
                }
                for tr in result.denoising.traces
            ),
            out / DENOISING_TRACE_FILE,
        )

    if result.prediction is not None:
        _dump_lines(
            (
                {
                    "id": pred.instance_id,
                    "final": str(pred.relation),
                    "skipped": [str(r) for r in pred.skipped_relations],
                    "rounds": [
                        {
                            "index": rnd.index,
                            "candidates": [str(c) for c in rnd.candidates],
                            "winner": str(rnd.winner),
                            "resolution": rnd.resolution,
                        }
                        for rnd in pred.rounds
                    ],
                }
                for pred in result.prediction.predictions
            ),
            out / PREDICTION_TRACE_FILE,
        )

    write_manifest(result.manifest, out / MANIFEST_FILE)


def write_manifest(manifest: dict, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def read_predictions(path: str | Path) -> dict[str, RelationName]:
    """Final predictions keyed by instance id; abstentions map to a reserved
    name so evaluation still aligns."""
    out: dict[str, RelationName] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out[str(rec["id"])] = RelationName(rec["relation"] or ABSTAINED)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed prediction line") from exc
    return out


def read_discovery_attempts(path: str | Path) -> dict[str, list[RelationName]]:
    """Parsed relations per instance from a discovery trace file."""
    out: dict[str, list[RelationName]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.setdefault(str(rec["id"]), [])
                if rec.get("relation"):
                    out[str(rec["id"])].append(RelationName(rec["relation"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed trace line") from exc
    return out
