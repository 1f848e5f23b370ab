"""Evaluation protocols for video-text QA: edit-distance similarity and exact
match for needle questions, tolerance-banded accuracy for temporal grounding,
and judge-scored dynamics captioning.

Records travel as JSON Lines with fixed field names; reports carry per-category
and overall values where the overall is always the record-weighted mean.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import requests

SCENARIO_CATEGORIES = (
    "driving",
    "egocentric",
    "entertainment",
    "game",
    "knowledge",
    "life-record",
    "sports",
    "talking",
    "video-news",
)

DYNAMICS_CATEGORIES = ("basketball", "ping-pong", "swim", "dota", "lol", "pubg")

RECORD_FIELDS = (
    "id",
    "question",
    "golds",
    "prediction",
    "gold_ts_s",
    "pred_ts_s",
    "category",
    "duration_s",
)

DEFAULT_RUBRIC = (
    "Compare the prediction against the reference description of how on-screen "
    "text evolves over the video. Award 0-10 points for thoroughness: 10 when "
    "every change in the reference is covered accurately, 0 when none are. "
    "Half-point increments are allowed."
)

_TERMINAL_PUNCT = ".,;:!?"
_WS_RE = re.compile(r"\s+")


class RecordError(ValueError):
    """Invalid evaluation record; carries the 1-based JSONL line number."""

    def __init__(self, line: int, message: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class JudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    id: str
    question: str
    golds: tuple[str, ...]
    prediction: str
    category: str
    gold_ts_s: int | None = None
    pred_ts_s: int | None = None
    duration_s: int | None = None

    def __post_init__(self) -> None:
        if not self.golds:
            raise ValueError(f"record {self.id}: golds must be non-empty")


@dataclass
class EvalReport:
    """Per-category and overall values for one metric (one tolerance band for
    grounding)."""

    metric: str
    overall: float
    per_category: dict[str, float]
    category_counts: dict[str, int]
    record_count: int
    tolerance_s: int | None = None
    incomplete: bool = False
    errors: list[str] = field(default_factory=list)


def normalize_answer(text: str) -> str:
    """Lowercase, trim, collapse internal whitespace, strip terminal punctuation."""
    text = _WS_RE.sub(" ", text.strip().lower())
    return text.rstrip(_TERMINAL_PUNCT).rstrip()


def levenshtein(a: str, b: str) -> int:
    """Minimum number of unit-cost edits turning a into b."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def anls(prediction: str, golds: Sequence[str], tau: float = 0.5) -> float:
    """Normalized-Levenshtein similarity, best over golds, zeroed past tau."""
    if not golds:
        raise ValueError("golds must be non-empty")
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    pred = normalize_answer(prediction)
    best = 0.0
    for gold in golds:
        gold_n = normalize_answer(gold)
        longest = max(len(pred), len(gold_n))
        nl = 0.0 if longest == 0 else levenshtein(pred, gold_n) / longest
        score = 1.0 - nl if nl < tau else 0.0
        best = max(best, score)
    return best


def _grouped(records: Sequence[EvalRecord]) -> dict[str, list[EvalRecord]]:
    groups: dict[str, list[EvalRecord]] = {}
    for record in records:
        groups.setdefault(record.category, []).append(record)
    return groups


def _report_from_scores(
    metric: str,
    records: Sequence[EvalRecord],
    score_of,
    scale: float,
    tolerance_s: int | None = None,
) -> EvalReport:
    if not records:
        raise ValueError("cannot build a report from zero records")
    per_category: dict[str, float] = {}
    counts: dict[str, int] = {}
    total = 0.0
    for category, items in _grouped(records).items():
        s = sum(score_of(r) for r in items)
        per_category[category] = scale * s / len(items)
        counts[category] = len(items)
        total += s
    return EvalReport(
        metric=metric,
        overall=scale * total / len(records),
        per_category=per_category,
        category_counts=counts,
        record_count=len(records),
        tolerance_s=tolerance_s,
    )


def anls_report(records: Sequence[EvalRecord], tau: float = 0.5) -> EvalReport:
    return _report_from_scores(
        "anls", records, lambda r: anls(r.prediction, r.golds, tau), scale=1.0
    )


def exact_match_accuracy(records: Sequence[EvalRecord]) -> EvalReport:
    """Percent of records whose normalized prediction equals any normalized gold."""

    def hit(record: EvalRecord) -> float:
        pred = normalize_answer(record.prediction)
        return float(any(pred == normalize_answer(g) for g in record.golds))

    return _report_from_scores("accuracy", records, hit, scale=100.0)


def grounding_accuracy(
    records: Sequence[EvalRecord], tolerances: Sequence[int] = (30, 60, 120)
) -> list[EvalReport]:
    """Percent of records localized within each tolerance band (seconds)."""
    for record in records:
        if record.gold_ts_s is None or record.pred_ts_s is None:
            raise ValueError(f"record {record.id}: missing timestamp")
    reports = []
    for tolerance in tolerances:
        reports.append(
            _report_from_scores(
                "grounding_accuracy",
                records,
                lambda r, tol=tolerance: float(abs(r.pred_ts_s - r.gold_ts_s) <= tol),
                scale=100.0,
                tolerance_s=tolerance,
            )
        )
    return reports


class JudgeClient(Protocol):
    def score(self, question: str, gold: str, prediction: str, rubric: str) -> dict:
        """Returns {"score": number in [0, 10], "rationale": str}."""
        ...


class StubJudge:
    """Deterministic offline judge: 10 x token-overlap F1, rounded to nearest
    integer. Keeps a verbatim audit trail like the remote client."""

    def __init__(self) -> None:
        self.audit: list[dict] = []

    def score(self, question: str, gold: str, prediction: str, rubric: str) -> dict:
        pred_tokens = normalize_answer(prediction).split()
        gold_tokens = normalize_answer(gold).split()
        if not pred_tokens or not gold_tokens:
            f1 = 1.0 if pred_tokens == gold_tokens else 0.0
        else:
            remaining = list(gold_tokens)
            overlap = 0
            for token in pred_tokens:
                if token in remaining:
                    remaining.remove(token)
                    overlap += 1
            f1 = 2.0 * overlap / (len(pred_tokens) + len(gold_tokens))
        response = {"score": round(10 * f1), "rationale": f"token-overlap f1={f1:.4f}"}
        self.audit.append(
            {
                "request": {
                    "question": question,
                    "gold": gold,
                    "prediction": prediction,
                    "rubric": rubric,
                },
                "response": response,
            }
        )
        return response


class HttpJudge:
    """Remote judge over HTTP POST; the API key comes from the environment."""

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 30.0,
        retries: int = 2,
        api_key_env: str = "ROPELAB_JUDGE_API_KEY",
    ) -> None:
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.retries = retries
        self.api_key = os.environ.get(api_key_env, "")
        self.audit: list[dict] = []

    def score(self, question: str, gold: str, prediction: str, rubric: str) -> dict:
        payload = {
            "question": question,
            "gold": gold,
            "prediction": prediction,
            "rubric": rubric,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                resp.raise_for_status()
                response = resp.json()
                self.audit.append({"request": payload, "response": response})
                return response
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                last_error = exc
        raise JudgeError(f"judge unreachable at {self.endpoint}: {last_error}")


def _validate_judge_score(raw) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError) as exc:
        raise JudgeError(f"non-numeric judge score {raw!r}") from exc
    if not 0.0 <= value <= 10.0 or (2 * value) != int(2 * value):
        raise JudgeError(f"judge score {raw!r} not an integer/half-point in [0, 10]")
    return value


def dynamics_score(
    records: Sequence[EvalRecord],
    judge: JudgeClient,
    rubric: str = DEFAULT_RUBRIC,
) -> EvalReport:
    """Mean judge score per sub-scenario and overall, 0-10 scale.

    Judge failures (unreachable, out-of-range score) become per-record error
    entries and flag the report incomplete rather than aborting the run.
    """
    if not records:
        raise ValueError("cannot build a report from zero records")
    scores: dict[str, float] = {}
    errors: list[str] = []
    for record in records:
        try:
            response = judge.score(
                record.question, record.golds[0], record.prediction, rubric
            )
            scores[record.id] = _validate_judge_score(response.get("score"))
        except JudgeError as exc:
            errors.append(f"{record.id}: {exc}")
    scored = [r for r in records if r.id in scores]
    if not scored:
        report = EvalReport(
            metric="dynamics_score",
            overall=0.0,
            per_category={},
            category_counts={},
            record_count=0,
        )
    else:
        report = _report_from_scores(
            "dynamics_score", scored, lambda r: scores[r.id], scale=1.0
        )
    report.incomplete = bool(errors)
    report.errors = errors
    return report


def record_from_dict(data: dict, line: int = 0) -> EvalRecord:
    for key in data:
        if key not in RECORD_FIELDS:
            raise RecordError(line, f"unknown field {key!r}")
    for key in ("id", "question", "golds", "prediction", "category"):
        if key not in data:
            raise RecordError(line, f"missing field {key!r}")
    golds = data["golds"]
    if not isinstance(golds, list) or not golds or not all(isinstance(g, str) for g in golds):
        raise RecordError(line, "golds must be a non-empty list of strings")
    for key in ("gold_ts_s", "pred_ts_s", "duration_s"):
        value = data.get(key)
        if value is not None and not isinstance(value, int):
            raise RecordError(line, f"{key} must be an integer number of seconds")
    try:
        return EvalRecord(
            id=str(data["id"]),
            question=str(data["question"]),
            golds=tuple(golds),
            prediction=str(data["prediction"]),
            category=str(data["category"]),
            gold_ts_s=data.get("gold_ts_s"),
            pred_ts_s=data.get("pred_ts_s"),
            duration_s=data.get("duration_s"),
        )
    except ValueError as exc:
        raise RecordError(line, str(exc)) from exc


def load_records(path: str | Path) -> list[EvalRecord]:
    """Parse a JSON Lines record file; errors carry the offending line number."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise RecordError(line_no, "record must be a JSON object")
            records.append(record_from_dict(data, line_no))
    return records


def validate_categories(
    records: Iterable[EvalRecord], allowed: Sequence[str]
) -> None:
    for record in records:
        if record.category not in allowed:
            raise ValueError(
                f"record {record.id}: category {record.category!r} not one of {allowed}"
            )


def require_timestamps(records: Iterable[EvalRecord]) -> None:
    for record in records:
        if record.gold_ts_s is None or record.pred_ts_s is None:
            raise ValueError(f"record {record.id}: grounding records need both timestamps")


def render_report_table(
    reports: Sequence[EvalReport], categories: Sequence[str], title: str
) -> str:
    """Aligned plain-text table: one column per category plus Avg, one row per
    report (tolerance bands or metrics)."""
    headers = ["Metric", *categories, "Avg"]
    rows = []
    for report in reports:
        label = report.metric
        if report.tolerance_s is not None:
            label = f"{report.metric}@{report.tolerance_s}s"
        decimals = 3 if report.metric == "anls" else 2
        cells = [
            f"{report.per_category[c]:.{decimals}f}" if c in report.per_category else "-"
            for c in categories
        ]
        rows.append([label, *cells, f"{report.overall:.{decimals}f}"])
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) for i in range(len(headers))
    ]
    lines = [title]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> dict:
    return {
        "metric": report.metric,
        "tolerance_s": report.tolerance_s,
        "overall": report.overall,
        "per_category": dict(sorted(report.per_category.items())),
        "category_counts": dict(sorted(report.category_counts.items())),
        "record_count": report.record_count,
        "incomplete": report.incomplete,
        "errors": list(report.errors),
    }
