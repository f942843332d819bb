"""Confusion matrices, accuracy and CSV/SVG report files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from mcsloc.errors import DomainError, FormatError, ValidationError


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray  # rows = true, cols = predicted

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValidationError(f"counts shape {counts.shape} does not match {n} labels")
        if (counts < 0).any():
            raise ValidationError("confusion counts must be non-negative")
        if len(set(self.labels)) != n:
            raise ValidationError("labels must be distinct")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.labels == other.labels
                and np.array_equal(self.counts, other.counts))

    def coarsen(self, mapping: dict, labels: Sequence) -> "ConfusionMatrix":
        """Relabel both axes through ``mapping`` and sum the merged cells."""
        pos = {lab: i for i, lab in enumerate(labels)}
        idx = np.array([pos[mapping[lab]] for lab in self.labels])
        out = np.zeros((len(labels), len(labels)), np.int64)
        np.add.at(out, (idx[:, None], idx[None, :]), self.counts)
        return ConfusionMatrix(tuple(labels), out)


def confusion(true_labels: Sequence, predicted_labels: Sequence, labels: Sequence) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ValidationError(
            f"{len(true_labels)} true labels but {len(predicted_labels)} predictions")
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), np.int64)
    for t, p in zip(true_labels, predicted_labels):
        try:
            counts[pos[t], pos[p]] += 1
        except KeyError as exc:
            raise DomainError(f"label {exc.args[0]!r} is not one of {list(labels)}") from None
    return ConfusionMatrix(tuple(labels), counts)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise DomainError("accuracy of an empty confusion matrix is undefined")
    return int(np.trace(cm.counts)) / total


def to_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", *cm.labels])
    for lab, row in zip(cm.labels, cm.counts):
        w.writerow([lab, *(int(v) for v in row)])
    return buf.getvalue()


def _parse_label(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def from_csv(text: str) -> ConfusionMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "label":
        raise FormatError("confusion CSV must start with a 'label' header cell")
    labels = tuple(_parse_label(s) for s in rows[0][1:])
    body = rows[1:]
    if len(body) != len(labels):
        raise FormatError(f"expected {len(labels)} data rows, found {len(body)}")
    counts = np.zeros((len(labels), len(labels)), np.int64)
    for i, r in enumerate(body):
        if len(r) != len(labels) + 1 or _parse_label(r[0]) != labels[i]:
            raise FormatError(f"row {i + 1}: malformed or out-of-order row")
        try:
            counts[i] = [int(v) for v in r[1:]]
        except ValueError as exc:
            raise FormatError(f"row {i + 1}: {exc}") from None
    return ConfusionMatrix(labels, counts)


def read_csv(path: str | Path) -> ConfusionMatrix:
    return from_csv(Path(path).read_text(encoding="utf-8"))


def to_svg(cm: ConfusionMatrix, cell: int = 36, title: str = "") -> str:
    """Heatmap with one ``<rect class="cell">`` per matrix entry, shaded by row-normalized count."""
    n = len(cm.labels)
    margin = 2 * cell
    size = margin + n * cell
    rowsum = cm.counts.sum(axis=1, keepdims=True)
    frac = cm.counts / np.maximum(rowsum, 1)
    fs = max(cell // 3, 6)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="{fs}">']
    if title:
        parts.append(f'<text x="{size / 2}" y="{fs + 2}" text-anchor="middle">{escape(title)}</text>')
    for j, lab in enumerate(cm.labels):
        x = margin + j * cell + cell / 2
        parts.append(f'<text x="{x}" y="{margin - 4}" text-anchor="middle">{escape(str(lab))}</text>')
    for i, lab in enumerate(cm.labels):
        y = margin + i * cell
        parts.append(f'<text x="{margin - 4}" y="{y + cell / 2}" text-anchor="end" '
                     f'dominant-baseline="central">{escape(str(lab))}</text>')
        for j in range(n):
            x = margin + j * cell
            shade = round(255 * (1 - frac[i, j]))
            fill = f"#{shade:02x}{shade:02x}ff"
            parts.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{fill}" stroke="#cccccc"/>')
            if cm.counts[i, j]:
                ink = "#ffffff" if frac[i, j] > 0.6 else "#000000"
                parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2}" text-anchor="middle" '
                             f'dominant-baseline="central" fill="{ink}">{int(cm.counts[i, j])}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_reports(cm: ConfusionMatrix, path_prefix: str | Path, title: str = "") -> tuple[Path, Path]:
    prefix = Path(path_prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    svg_path = prefix.with_name(prefix.name + ".svg")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(cm))
    with open(svg_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_svg(cm, title=title))
    return csv_path, svg_path
