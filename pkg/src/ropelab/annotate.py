"""Semi-automatic QA annotation pipeline.

Stages: sample frames at a fixed rate, keep only frames where a detector finds
text, drop near-duplicate adjacent frames, draft question-answer pairs with a
generator client, export for human review, and re-import the verdicts.

Video decoding stays out of core: the input is a directory of pre-extracted
frames (or an external extractor command that produces one). Detector and
generator are remote-client interfaces with offline sidecar/echo stubs so the
whole pipeline runs without network; all remote traffic goes to an audit log.
"""
from __future__ import annotations

import json
import os
import shlex
import subprocess
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SIDECAR_SUFFIX = ".ocr.json"
DEFAULT_QA_TEMPLATE = (
    "What text appears in this frame? Base the question on the detected "
    "strings and answer with the most prominent one."
)


class PipelineError(RuntimeError):
    pass


class FrameStatus(Enum):
    RAW = "raw"
    TEXTFUL = "textful"
    DROPPED_NOTEXT = "dropped_notext"
    DROPPED_DUP = "dropped_dup"
    ERRORED = "errored"


class ReviewStatus(Enum):
    GENERATED = "generated"
    APPROVED = "approved"
    CORRECTED = "corrected"
    REJECTED = "rejected"


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    index: int
    timestamp_s: int
    image_ref: str
    detected_text: tuple[tuple[str, float], ...] | None = None
    status: FrameStatus = FrameStatus.RAW
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "index": self.index,
            "timestamp_s": self.timestamp_s,
            "image_ref": self.image_ref,
            "detected_text": [list(d) for d in self.detected_text]
            if self.detected_text is not None
            else None,
            "status": self.status.value,
            "error": self.error,
        }

    @staticmethod
    def from_dict(data: dict) -> "FrameRecord":
        detected = data.get("detected_text")
        return FrameRecord(
            video_id=data["video_id"],
            index=data["index"],
            timestamp_s=data["timestamp_s"],
            image_ref=data["image_ref"],
            detected_text=tuple((t, float(c)) for t, c in detected)
            if detected is not None
            else None,
            status=FrameStatus(data["status"]),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class QADraft:
    draft_id: str
    frame_refs: tuple[str, ...]
    question: str
    answer: str
    review_status: ReviewStatus = ReviewStatus.GENERATED
    corrected_question: str | None = None
    corrected_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.frame_refs:
            raise PipelineError(f"draft {self.draft_id}: frame_refs must be non-empty")
        if self.review_status is ReviewStatus.CORRECTED and not (
            self.corrected_question or self.corrected_answer
        ):
            raise PipelineError(
                f"draft {self.draft_id}: CORRECTED requires a corrected field"
            )

    def to_dict(self) -> dict:
        return {
            "draft_id": self.draft_id,
            "frame_refs": list(self.frame_refs),
            "question": self.question,
            "answer": self.answer,
            "review_status": self.review_status.value,
            "corrected_question": self.corrected_question,
            "corrected_answer": self.corrected_answer,
        }

    @staticmethod
    def from_dict(data: dict) -> "QADraft":
        if "review_status" not in data:
            raise PipelineError(
                f"draft {data.get('draft_id', '?')}: missing review_status"
            )
        return QADraft(
            draft_id=data["draft_id"],
            frame_refs=tuple(data["frame_refs"]),
            question=data["question"],
            answer=data["answer"],
            review_status=ReviewStatus(data["review_status"]),
            corrected_question=data.get("corrected_question"),
            corrected_answer=data.get("corrected_answer"),
        )


class AuditLog:
    """Append-only JSONL log of remote traffic, keyed by a sequence number so
    output stays byte-stable across reruns."""

    def __init__(self, path: str | Path | None) -> None:
        self.path = Path(path) if path is not None else None
        self._seq = 0
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def record(self, kind: str, request, response) -> None:
        entry = {"seq": self._seq, "kind": kind, "request": request, "response": response}
        self._seq += 1
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")


# --------------------------------------------------------------------- stage 1


def sample_frames(
    source: str | Path,
    video_id: str | None = None,
    fps: float = 1.0,
    extractor_cmd: str | None = None,
) -> list[FrameRecord]:
    """Enumerate pre-extracted frames in timestamp order at floor(j / fps)
    seconds each. extractor_cmd, when given, runs first and must fill source."""
    if fps <= 0:
        raise PipelineError(f"fps must be positive, got {fps}")
    source = Path(source)
    if extractor_cmd:
        proc = subprocess.run(
            shlex.split(extractor_cmd),
            capture_output=True,
            text=True,
            check=False,
        )
        if proc.returncode != 0:
            raise PipelineError(
                f"frame extractor failed ({proc.returncode}): {proc.stderr.strip()}"
            )
    if not source.is_dir():
        raise PipelineError(f"frame source {source} is not a directory")
    paths = sorted(
        p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise PipelineError(f"frame source {source} contains no images")
    vid = video_id if video_id is not None else source.name
    return [
        FrameRecord(
            video_id=vid,
            index=j,
            timestamp_s=int(j / fps),
            image_ref=str(path),
        )
        for j, path in enumerate(paths)
    ]


# --------------------------------------------------------------------- stage 2


class DetectorClient(Protocol):
    def detect(self, image_ref: str) -> list[tuple[str, float]]:
        """Returns (text, confidence) pairs found in the image."""
        ...


class SidecarDetector:
    """Offline stub: reads detections from `<image><suffix>` JSON sidecars;
    a missing sidecar means no text."""

    def __init__(self, suffix: str = SIDECAR_SUFFIX, audit: AuditLog | None = None) -> None:
        self.suffix = suffix
        self.audit = audit

    def detect(self, image_ref: str) -> list[tuple[str, float]]:
        sidecar = Path(image_ref + self.suffix)
        detections: list[tuple[str, float]] = []
        if sidecar.exists():
            detections = [
                (str(t), float(c)) for t, c in json.loads(sidecar.read_text())
            ]
        if self.audit:
            self.audit.record(
                "detector", {"image_ref": image_ref}, [list(d) for d in detections]
            )
        return detections


class HttpDetector:
    def __init__(
        self,
        endpoint: str | None = None,
        timeout_s: float = 30.0,
        retries: int = 2,
        audit: AuditLog | None = None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get("ROPELAB_DETECTOR_ENDPOINT", "")
        if not self.endpoint:
            raise PipelineError("no detector endpoint configured")
        self.timeout_s = timeout_s
        self.retries = retries
        self.api_key = os.environ.get("ROPELAB_DETECTOR_API_KEY", "")
        self.audit = audit

    def detect(self, image_ref: str) -> list[tuple[str, float]]:
        payload = {"image_ref": image_ref}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                resp.raise_for_status()
                data = resp.json()
                if self.audit:
                    self.audit.record("detector", payload, data)
                return [(str(t), float(c)) for t, c in data["detections"]]
            except Exception as exc:  # noqa: BLE001
                last = exc
        raise PipelineError(f"detector unreachable: {last}")


def filter_text_frames(
    frames: list[FrameRecord],
    detector: DetectorClient,
    min_conf: float = 0.5,
) -> list[FrameRecord]:
    """Mark frames TEXTFUL when any detection clears min_conf; detector
    failures mark the frame ERRORED and the pipeline continues."""
    out = []
    for frame in frames:
        if frame.status is not FrameStatus.RAW:
            out.append(frame)  # stage already ran on this frame
            continue
        try:
            detections = tuple(detector.detect(frame.image_ref))
        except Exception as exc:  # noqa: BLE001 - per-frame isolation
            out.append(replace(frame, status=FrameStatus.ERRORED, error=str(exc)))
            continue
        textful = any(conf >= min_conf for _, conf in detections)
        out.append(
            replace(
                frame,
                detected_text=detections,
                status=FrameStatus.TEXTFUL if textful else FrameStatus.DROPPED_NOTEXT,
            )
        )
    return out


# --------------------------------------------------------------------- stage 3


def histogram_similarity(ref_a: str, ref_b: str, bins: int = 64) -> float:
    """Cosine similarity of normalized grayscale histograms."""
    def hist(ref: str) -> np.ndarray:
        with Image.open(ref) as img:
            values = np.asarray(img.convert("L"), dtype=np.float64).ravel()
        counts, _ = np.histogram(values, bins=bins, range=(0, 256))
        return counts.astype(np.float64)

    a, b = hist(ref_a), hist(ref_b)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        return 0.0
    return float(np.dot(a, b) / norm)


def dedup_adjacent(
    frames: list[FrameRecord],
    sim_threshold: float = 0.92,
    similarity: Callable[[str, str], float] = histogram_similarity,
) -> list[FrameRecord]:
    """Drop a TEXTFUL frame when it is too similar to the last kept one.

    Unreadable images count as dissimilar (kept, error noted on the record).
    """
    out = []
    last_kept: FrameRecord | None = None
    for frame in frames:
        if frame.status is not FrameStatus.TEXTFUL:
            out.append(frame)
            continue
        if last_kept is None:
            out.append(frame)
            last_kept = frame
            continue
        try:
            score = similarity(last_kept.image_ref, frame.image_ref)
        except Exception as exc:  # noqa: BLE001 - treat as dissimilar
            out.append(replace(frame, error=f"similarity failed: {exc}"))
            last_kept = frame
            continue
        if score >= sim_threshold:
            out.append(replace(frame, status=FrameStatus.DROPPED_DUP))
        else:
            out.append(frame)
            last_kept = frame
    return out


# --------------------------------------------------------------------- stage 4


class GeneratorClient(Protocol):
    def generate(
        self, frame_refs: list[str], detected_text: list[str], template: str
    ) -> dict:
        """Returns {"question": str, "answer": str}."""
        ...


class EchoGenerator:
    """Offline stub: templated question, highest-confidence detection as answer."""

    def __init__(self, audit: AuditLog | None = None) -> None:
        self.audit = audit

    def generate(self, frame_refs, detected_text, template) -> dict:
        answer = detected_text[0] if detected_text else ""
        response = {
            "question": f"What does the on-screen text say? ({template})",
            "answer": answer,
        }
        if self.audit:
            self.audit.record(
                "generator",
                {
                    "frame_refs": list(frame_refs),
                    "detected_text": list(detected_text),
                    "template": template,
                },
                response,
            )
        return response


class HttpGenerator:
    def __init__(
        self,
        endpoint: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 2,
        audit: AuditLog | None = None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get("ROPELAB_GENERATOR_ENDPOINT", "")
        if not self.endpoint:
            raise PipelineError("no generator endpoint configured")
        self.timeout_s = timeout_s
        self.retries = retries
        self.api_key = os.environ.get("ROPELAB_GENERATOR_API_KEY", "")
        self.audit = audit

    def generate(self, frame_refs, detected_text, template) -> dict:
        payload = {
            "frame_refs": list(frame_refs),
            "detected_text": list(detected_text),
            "template": template,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                resp.raise_for_status()
                data = resp.json()
                if self.audit:
                    self.audit.record("generator", payload, data)
                return data
            except Exception as exc:  # noqa: BLE001
                last = exc
        raise PipelineError(f"generator unreachable: {last}")


@dataclass
class DraftOutcome:
    drafts: list[QADraft]
    errors: list[str] = field(default_factory=list)


def generate_qa(
    frames: list[FrameRecord],
    generator: GeneratorClient,
    template: str = DEFAULT_QA_TEMPLATE,
) -> DraftOutcome:
    """One draft per kept (TEXTFUL) frame; malformed or failed generations
    become error entries with the raw payload retained."""
    outcome = DraftOutcome(drafts=[])
    for frame in frames:
        if frame.status is not FrameStatus.TEXTFUL:
            continue
        draft_id = f"{frame.video_id}-{frame.index:05d}-q0"
        texts = [t for t, _ in (frame.detected_text or ())]
        try:
            response = generator.generate([frame.image_ref], texts, template)
        except Exception as exc:  # noqa: BLE001
            outcome.errors.append(f"{draft_id}: generator failed: {exc}")
            continue
        if not isinstance(response, dict) or "question" not in response or "answer" not in response:
            outcome.errors.append(
                f"{draft_id}: malformed generator response: {json.dumps(response, sort_keys=True)}"
            )
            continue
        outcome.drafts.append(
            QADraft(
                draft_id=draft_id,
                frame_refs=(frame.image_ref,),
                question=str(response["question"]),
                answer=str(response["answer"]),
            )
        )
    return outcome


# --------------------------------------------------------------------- stage 5


def export_review(drafts: list[QADraft], path: str | Path) -> None:
    """Write the human-facing review file (JSON Lines, one draft per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for draft in drafts:
            handle.write(json.dumps(draft.to_dict(), sort_keys=True) + "\n")


def import_review(
    path: str | Path, expected_ids: list[str] | None = None
) -> list[QADraft]:
    """Read reviewer verdicts back; must cover every expected draft id."""
    drafts = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            draft = QADraft.from_dict(json.loads(line))
            drafts.append(draft)
            seen.add(draft.draft_id)
    if expected_ids is not None:
        expected = set(expected_ids)
        unknown = sorted(seen - expected)
        if unknown:
            raise PipelineError(f"unknown draft id {unknown[0]!r} in review file")
        missing = sorted(expected - seen)
        if missing:
            raise PipelineError(f"review file missing draft id {missing[0]!r}")
    return drafts


def correction_rate(drafts: list[QADraft]) -> float:
    """Fraction of reviewed drafts carrying corrections."""
    if not drafts:
        return 0.0
    corrected = sum(1 for d in drafts if d.review_status is ReviewStatus.CORRECTED)
    return corrected / len(drafts)


# ------------------------------------------------------------------- pipeline


@dataclass
class PipelineSummary:
    input_frames: int
    status_counts: dict[str, int]
    drafts: int
    draft_errors: int

    def to_dict(self) -> dict:
        return {
            "input_frames": self.input_frames,
            "status_counts": dict(sorted(self.status_counts.items())),
            "drafts": self.drafts,
            "draft_errors": self.draft_errors,
        }


def write_frames(frames: list[FrameRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for frame in frames:
            handle.write(json.dumps(frame.to_dict(), sort_keys=True) + "\n")


def read_frames(path: str | Path) -> list[FrameRecord]:
    with open(path, encoding="utf-8") as handle:
        return [FrameRecord.from_dict(json.loads(line)) for line in handle if line.strip()]


def run_pipeline(
    source: str | Path,
    out_dir: str | Path,
    detector: DetectorClient | None = None,
    generator: GeneratorClient | None = None,
    fps: float = 1.0,
    min_conf: float = 0.5,
    sim_threshold: float = 0.92,
    template: str = DEFAULT_QA_TEMPLATE,
    video_id: str | None = None,
    audit: AuditLog | None = None,
) -> PipelineSummary:
    """Run all stages, writing frames.jsonl, drafts.jsonl, review.jsonl, and
    summary.json into out_dir. Stub clients by default, so the run is fully
    offline and byte-deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detector = detector if detector is not None else SidecarDetector(audit=audit)
    generator = generator if generator is not None else EchoGenerator(audit=audit)

    frames = sample_frames(source, video_id=video_id, fps=fps)
    input_count = len(frames)
    frames = filter_text_frames(frames, detector, min_conf=min_conf)
    frames = dedup_adjacent(frames, sim_threshold=sim_threshold)
    outcome = generate_qa(frames, generator, template=template)

    write_frames(frames, out_dir / "frames.jsonl")
    export_review(outcome.drafts, out_dir / "review.jsonl")
    status_counts: dict[str, int] = {}
    for frame in frames:
        status_counts[frame.status.value] = status_counts.get(frame.status.value, 0) + 1
    summary = PipelineSummary(
        input_frames=input_count,
        status_counts=status_counts,
        drafts=len(outcome.drafts),
        draft_errors=len(outcome.errors),
    )
    (out_dir / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    if outcome.errors:
        (out_dir / "draft_errors.jsonl").write_text(
            "\n".join(outcome.errors) + "\n"
        )
    return summary
