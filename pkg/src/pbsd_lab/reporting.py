"""Report rendering and the reproducibility manifest.

All outputs are a pure function of their input bytes: SVG charts use fixed
800x500 dimensions and 6-significant-digit decimal formatting, CSV rows
follow the metrics field order, and the manifest's config hash is the
SHA-256 of the canonical (sorted-key, compact) config JSON.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

from .errors import InputError
from .trainer import METRIC_FIELDS

ARTIFACT_VERSION = "0.1.0"

SVG_WIDTH = 800
SVG_HEIGHT = 500
MARGIN_LEFT = 80
MARGIN_RIGHT = 30
MARGIN_TOP = 50
MARGIN_BOTTOM = 60


def canonical_json(obj) -> str:
    """Sorted keys, no insignificant whitespace; stable across key order."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def write_manifest(out_dir, config: dict, seeds: dict, started: str, finished: str,
                   acceptance_summary: Optional[dict] = None) -> Path:
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": config_hash(config),
        "seeds": seeds,
        "started": started,
        "finished": finished,
        "acceptance_summary": acceptance_summary,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(x)
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".6g")


def load_metrics(path) -> list:
    """Parse a metrics JSONL file; malformed lines report their number."""
    lines = Path(path).read_text().splitlines()
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed metrics line {lineno}: {exc}") from exc
        missing = [f for f in METRIC_FIELDS if f not in row]
        if missing:
            raise InputError(f"metrics line {lineno} missing fields: {missing}")
        rows.append(row)
    if not rows:
        raise InputError(f"metrics file {path} holds no records")
    return rows


def _svg_line_chart(points, title: str, x_label: str, y_label: str) -> str:
    """A fixed-size polyline chart; output bytes depend only on inputs."""
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0
    plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x):
        return MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y):
        return SVG_HEIGHT - MARGIN_BOTTOM - (y - y_min) / (y_max - y_min) * plot_h

    poly = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
    marks = "".join(
        f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="#1f6fb2"/>'
        for x, y in zip(xs, ys)
    )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH // 2}" y="25" text-anchor="middle" font-family="monospace" '
        f'font-size="16">{title}</text>',
        f'<line x1="{MARGIN_LEFT}" y1="{SVG_HEIGHT - MARGIN_BOTTOM}" '
        f'x2="{SVG_WIDTH - MARGIN_RIGHT}" y2="{SVG_HEIGHT - MARGIN_BOTTOM}" stroke="black"/>',
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
        f'y2="{SVG_HEIGHT - MARGIN_BOTTOM}" stroke="black"/>',
        f'<text x="{MARGIN_LEFT}" y="{SVG_HEIGHT - MARGIN_BOTTOM + 20}" text-anchor="middle" '
        f'font-family="monospace" font-size="12">{_fmt(x_min)}</text>',
        f'<text x="{SVG_WIDTH - MARGIN_RIGHT}" y="{SVG_HEIGHT - MARGIN_BOTTOM + 20}" '
        f'text-anchor="middle" font-family="monospace" font-size="12">{_fmt(x_max)}</text>',
        f'<text x="{MARGIN_LEFT - 8}" y="{SVG_HEIGHT - MARGIN_BOTTOM}" text-anchor="end" '
        f'font-family="monospace" font-size="12">{_fmt(y_min)}</text>',
        f'<text x="{MARGIN_LEFT - 8}" y="{MARGIN_TOP + 10}" text-anchor="end" '
        f'font-family="monospace" font-size="12">{_fmt(y_max)}</text>',
        f'<text x="{SVG_WIDTH // 2}" y="{SVG_HEIGHT - 15}" text-anchor="middle" '
        f'font-family="monospace" font-size="13">{x_label}</text>',
        f'<text x="20" y="{SVG_HEIGHT // 2}" text-anchor="middle" font-family="monospace" '
        f'font-size="13" transform="rotate(-90 20 {SVG_HEIGHT // 2})">{y_label}</text>',
        f'<polyline points="{poly}" fill="none" stroke="#1f6fb2" stroke-width="2"/>',
        marks,
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def render_report(metrics_path, out_dir) -> list:
    """Render a metrics JSONL stream to CSV plus SVG line charts.

    Writes metrics.csv (one row per record, metrics field order), one chart
    per tracked metric against the step axis, and expected reward against
    cumulative generated tokens. Returns the written paths.
    """
    rows = load_metrics(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "metrics.csv"
    lines = [",".join(METRIC_FIELDS)]
    for row in rows:
        lines.append(",".join(_fmt(row[f]) for f in METRIC_FIELDS))
    csv_path.write_text("\n".join(lines) + "\n")
    written.append(csv_path)

    steps = [row["step"] for row in rows]
    for name in METRIC_FIELDS:
        if name == "step":
            continue
        chart = _svg_line_chart(
            list(zip(steps, (row[name] for row in rows))),
            title=f"{name} vs step",
            x_label="step",
            y_label=name,
        )
        path = out / f"{name}_vs_step.svg"
        path.write_text(chart)
        written.append(path)

    tokens = [row["tokens_generated_cumulative"] for row in rows]
    rewards = [row["expected_reward_exact"] for row in rows]
    path = out / "expected_reward_vs_tokens.svg"
    path.write_text(
        _svg_line_chart(
            list(zip(tokens, rewards)),
            title="expected_reward_exact vs cumulative tokens",
            x_label="tokens_generated_cumulative",
            y_label="expected_reward_exact",
        )
    )
    written.append(path)
    return written
