"""Perceptual-study and comparison-study persistence.

All study state lives in line-delimited JSON files under one data
directory: labels.jsonl, sessions.jsonl, tasks.jsonl, records.jsonl.
Every file is append-only; a task counts as answered when a record with
its task_id exists in records.jsonl, so nothing is ever rewritten.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (AlreadyAnswered, CorpusTooSmall, ExhaustedSampling,
                     RangeError, UnknownSession, UnknownTask)
from .ingest import GlyphBitmap
from .metrics import ComparisonRecord, INTERFACES, clamp_ssim, ssim
from .rng import Rng
from .vae import (LATENT_DIM, GeneratedSample, SLIDER_STEPS, VaeModel, decode,
                  slider_to_latent)

SESSION_BUDGET_SECONDS = 300  # advisory five-minute survey limit


class PerceptionLabel(Enum):
    POP = "POP"
    FORMAL = "Formal"
    CASUAL = "Casual"

    @staticmethod
    def parse(value) -> "PerceptionLabel":
        if isinstance(value, PerceptionLabel):
            return value
        for label in PerceptionLabel:
            if label.value.lower() == str(value).lower():
                return label
        raise RangeError(f"unknown perception label {value!r}")


@dataclass
class StudySession:
    session_id: str
    participant: str
    started_at_ms: int
    duration_budget_s: int = SESSION_BUDGET_SECONDS

    def to_json(self) -> str:
        return json.dumps({"session_id": self.session_id,
                           "participant": self.participant,
                           "started_at_ms": self.started_at_ms,
                           "duration_budget_s": self.duration_budget_s},
                          ensure_ascii=False, sort_keys=True)


@dataclass
class LabeledSample:
    sample_id: str
    session_id: str
    timestamp_ms: int
    sliders: tuple[int, ...]
    latent: np.ndarray
    label: PerceptionLabel

    def to_json(self) -> str:
        return json.dumps({"sample_id": self.sample_id, "session_id": self.session_id,
                           "timestamp_ms": self.timestamp_ms,
                           "sliders": list(self.sliders),
                           "latent": [float(v) for v in self.latent],
                           "label": self.label.value},
                          ensure_ascii=False, sort_keys=True)

    @staticmethod
    def from_obj(obj: dict) -> "LabeledSample":
        return LabeledSample(sample_id=obj["sample_id"], session_id=obj["session_id"],
                             timestamp_ms=int(obj["timestamp_ms"]),
                             sliders=tuple(int(v) for v in obj["sliders"]),
                             latent=np.array(obj["latent"], dtype=np.float64),
                             label=PerceptionLabel.parse(obj["label"]))


@dataclass
class TargetTask:
    task_id: str
    interface: str
    target_id: str
    target_index: int              # index into the generated corpus
    target_latent: np.ndarray
    issued_at_ms: int

    def to_json(self) -> str:
        return json.dumps({"task_id": self.task_id, "interface": self.interface,
                           "target_id": self.target_id,
                           "target_index": self.target_index,
                           "target_latent": [float(v) for v in self.target_latent],
                           "issued_at_ms": self.issued_at_ms},
                          ensure_ascii=False, sort_keys=True)

    @staticmethod
    def from_obj(obj: dict) -> "TargetTask":
        return TargetTask(task_id=obj["task_id"], interface=obj["interface"],
                          target_id=obj["target_id"],
                          target_index=int(obj["target_index"]),
                          target_latent=np.array(obj["target_latent"], dtype=np.float64),
                          issued_at_ms=int(obj["issued_at_ms"]))


def _now_ms() -> int:
    return time.time_ns() // 1_000_000


def random_start(rng: Rng) -> tuple[int, ...]:
    """Five independent uniform slider draws, one per latent dimension."""
    return tuple(rng.randint(SLIDER_STEPS) for _ in range(LATENT_DIM))


# --- synthetic labels ---------------------------------------------------------

@dataclass
class SynthesisThresholds:
    """Decoded-image statistics that stand in for human perception labels."""
    pop_ink: float = 0.28        # bold: at least this much mean ink
    formal_ink: float = 0.18     # slim: at most this much mean ink ...
    formal_slant: float = 1.0    # ... and roughly upright (centroid shift, px)


def ink_ratio(bitmap: GlyphBitmap) -> float:
    return float(bitmap.pixels.mean())


def centroid_slant(bitmap: GlyphBitmap) -> float:
    """Horizontal centroid of the top half minus the bottom half, in pixels."""
    xs = np.arange(bitmap.pixels.shape[1], dtype=np.float64)

    def centroid(block: np.ndarray) -> float | None:
        mass = block.sum()
        if mass < 1e-9:
            return None
        return float((block.sum(axis=0) * xs).sum() / mass)

    half = bitmap.pixels.shape[0] // 2
    top = centroid(bitmap.pixels[:half])
    bottom = centroid(bitmap.pixels[half:])
    if top is None or bottom is None:
        return 0.0
    return top - bottom


def classify_bitmap(bitmap: GlyphBitmap,
                    thresholds: SynthesisThresholds) -> PerceptionLabel:
    ink = ink_ratio(bitmap)
    if ink >= thresholds.pop_ink:
        return PerceptionLabel.POP
    if ink <= thresholds.formal_ink and abs(centroid_slant(bitmap)) <= thresholds.formal_slant:
        return PerceptionLabel.FORMAL
    return PerceptionLabel.CASUAL


def synthesize_labels(model: VaeModel, per_label: int, seed: int,
                      thresholds: SynthesisThresholds | None = None,
                      max_draws: int = 1_000_000) -> list[LabeledSample]:
    """Desk-scale substitute for human study data.

    Rejection-samples random slider positions until each perception bucket
    holds per_label decoded images satisfying its predicate. Deterministic
    given the seed.
    """
    thresholds = thresholds or SynthesisThresholds()
    rng = Rng(seed)
    buckets: dict[PerceptionLabel, int] = {label: 0 for label in PerceptionLabel}
    samples: list[LabeledSample] = []
    session_id = f"synth-{seed}"
    draws = 0
    while any(count < per_label for count in buckets.values()):
        if draws >= max_draws:
            short = [label.value for label, count in buckets.items() if count < per_label]
            raise ExhaustedSampling(
                f"labels {short} unfilled after {draws} draws")
        draws += 1
        sliders = random_start(rng)
        latent = slider_to_latent(sliders)
        label = classify_bitmap(decode(model, latent), thresholds)
        if buckets[label] >= per_label:
            continue
        buckets[label] += 1
        samples.append(LabeledSample(
            sample_id=f"synth-{seed}-{len(samples):06d}", session_id=session_id,
            timestamp_ms=len(samples), sliders=sliders, latent=latent, label=label))
    return samples


# --- persistence ---------------------------------------------------------------

class StudyStore:
    """Append-only JSONL persistence for sessions, labels, tasks, records."""

    def __init__(self, data_dir: Path, clock: Callable[[], int] | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or _now_ms
        self.sessions_path = self.data_dir / "sessions.jsonl"
        self.labels_path = self.data_dir / "labels.jsonl"
        self.tasks_path = self.data_dir / "tasks.jsonl"
        self.records_path = self.data_dir / "records.jsonl"
        # Serializes concurrent submissions in arrival order; readers only
        # ever see a consistent prefix of each log. Reentrant so answer_task
        # can hold it across its check-then-append.
        self._write_lock = threading.RLock()

    def _append(self, path: Path, line: str) -> None:
        with self._write_lock:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    @staticmethod
    def _read_objects(path: Path) -> list[dict]:
        if not path.exists():
            return []
        objects = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    objects.append(json.loads(line))
        return objects

    # -- sessions --

    def create_session(self, participant: str) -> StudySession:
        session = StudySession(session_id=f"sess-{uuid.uuid4().hex[:12]}",
                               participant=participant,
                               started_at_ms=self.clock())
        self._append(self.sessions_path, session.to_json())
        return session

    def session_exists(self, session_id: str) -> bool:
        return any(obj["session_id"] == session_id
                   for obj in self._read_objects(self.sessions_path))

    # -- labels --

    def record_label(self, session_id: str, sliders: Sequence[int],
                     label) -> LabeledSample:
        if not self.session_exists(session_id):
            raise UnknownSession(f"no session {session_id!r}")
        label = PerceptionLabel.parse(label)
        latent = slider_to_latent(sliders)  # raises RangeError first
        count = len(self._read_objects(self.labels_path))
        sample = LabeledSample(sample_id=f"label-{count:06d}", session_id=session_id,
                               timestamp_ms=self.clock(),
                               sliders=tuple(int(v) for v in sliders),
                               latent=latent, label=label)
        self._append(self.labels_path, sample.to_json())
        return sample

    def append_labels(self, samples: Sequence[LabeledSample]) -> None:
        for sample in samples:
            self._append(self.labels_path, sample.to_json())

    def load_labels(self) -> list[LabeledSample]:
        return [LabeledSample.from_obj(obj)
                for obj in self._read_objects(self.labels_path)]

    # -- tasks --

    def create_tasks(self, corpus: Sequence[GeneratedSample], count: int = 10,
                     seed: int = 7) -> list[TargetTask]:
        """Seeded without-replacement target draw, duplicated per interface."""
        if len(corpus) < count:
            raise CorpusTooSmall(f"need {count} targets, corpus has {len(corpus)}")
        rng = Rng(seed)
        indices = rng.sample_without_replacement(len(corpus), count)
        now = self.clock()
        tasks = []
        for i, index in enumerate(indices):
            sample = corpus[index]
            for interface in INTERFACES:
                task = TargetTask(task_id=f"task-{seed}-{i:02d}-{interface}",
                                  interface=interface, target_id=sample.sample_id,
                                  target_index=sample.index,
                                  target_latent=np.asarray(sample.latent, dtype=np.float64),
                                  issued_at_ms=now)
                tasks.append(task)
                self._append(self.tasks_path, task.to_json())
        return tasks

    def load_tasks(self) -> list[TargetTask]:
        return [TargetTask.from_obj(obj)
                for obj in self._read_objects(self.tasks_path)]

    def load_records(self) -> list[ComparisonRecord]:
        return [ComparisonRecord.from_obj(obj)
                for obj in self._read_objects(self.records_path)]

    def answered_task_ids(self) -> set[str]:
        return {record.task_id for record in self.load_records()}

    def next_task(self, interface: str) -> TargetTask | None:
        answered = self.answered_task_ids()
        for task in self.load_tasks():
            if task.interface == interface and task.task_id not in answered:
                return task
        return None

    def answer_task(self, task_id: str, selected: dict, elapsed_ms: int,
                    resolve_bitmap: Callable[[dict], GlyphBitmap],
                    participant_id: str = "anonymous") -> ComparisonRecord:
        """Score a task answer and append the comparison record.

        resolve_bitmap turns an image reference ({"z": [...]},
        {"corpus_index": i} or {"font_id": ...}) into a GlyphBitmap.
        """
        with self._write_lock:
            tasks = {task.task_id: task for task in self.load_tasks()}
            if task_id not in tasks:
                raise UnknownTask(f"no task {task_id!r}")
            if task_id in self.answered_task_ids():
                raise AlreadyAnswered(f"task {task_id!r} already has an answer")
            if int(elapsed_ms) <= 0:
                raise RangeError(f"elapsed_ms must be positive, got {elapsed_ms}")
            task = tasks[task_id]
            target = resolve_bitmap({"corpus_index": task.target_index})
            chosen = resolve_bitmap(selected)
            score = clamp_ssim(ssim(target, chosen))
            record = ComparisonRecord(participant_id=participant_id,
                                      interface=task.interface, task_id=task_id,
                                      target_id=task.target_id, selected=selected,
                                      ssim=score, elapsed_ms=int(elapsed_ms))
            self._append(self.records_path, record.to_json())
            return record
