"""Confusion matrices and per-class precision/recall."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: true class, cols: predicted class
    class_names: Sequence[str]

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names: Sequence[str]) -> "Metrics":
        k = len(class_names)
        cm = np.zeros((k, k), dtype=np.int64)
        np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
        return cls(cm, list(class_names))

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def precision(self) -> np.ndarray:
        predicted = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), predicted,
                         out=np.zeros(len(predicted)), where=predicted > 0)

    @property
    def recall(self) -> np.ndarray:
        support = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), support,
                         out=np.zeros(len(support)), where=support > 0)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {
                name: {"precision": float(p), "recall": float(r)}
                for name, p, r in zip(self.class_names, self.precision, self.recall)
            },
            "confusion": self.confusion.tolist(),
        }

    def write_json(self, path: str | Path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True))

    def write_confusion_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.class_names])
            for name, row in zip(self.class_names, self.confusion):
                w.writerow([name, *row.tolist()])


METRICS_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "per_class", "confusion"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["precision", "recall"],
                "properties": {
                    "precision": {"type": "number", "minimum": 0, "maximum": 1},
                    "recall": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "confusion": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
    },
}
