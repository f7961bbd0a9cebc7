"""Filter and PCEN analyses of trained checkpoints, plus plot-ready exports.

Center frequencies are reported sorted ascending (the usual way learned
filterbanks are compared); the raw channel order is exported alongside.
"""

from __future__ import annotations

import csv
import json
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import SAMPLE_RATE
from .training.checkpoint import Checkpoint

FILTERS_SCHEMA = "wavefront.filters/1"
PCEN_SCHEMA = "wavefront.pcen/1"
REPORT_SCHEMA = "wavefront.report/1"
HISTOGRAM_BINS = 20


def _frontend_kind(ckpt: Checkpoint) -> str:
    return ckpt.config.get("frontend", "")


def _centres(table: Mapping[str, np.ndarray], kind: str, sample_rate: int) -> np.ndarray:
    if kind == "sincnet":
        band = table["frontend.sinc.band"]
        return (band[:, 0] + band[:, 1]) / 2.0 * sample_rate
    return np.asarray(table["frontend.gabor.eta"]) * sample_rate


def extract_center_frequencies(ckpt: Checkpoint, stage: str = "converged", sort: bool = True,
                               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Filter center frequencies in Hz at ``stage`` ``"init"`` or ``"converged"``.

    Gabor filters report ``eta * Fs``; sinc filters the cutoff midpoint.
    """
    kind = _frontend_kind(ckpt)
    if kind not in ("sincnet", "leaf", "leaf-fixed-pcen"):
        raise ValueError(f"{kind or 'unknown'} frontend has no learnable filters")
    if stage not in ("init", "converged"):
        raise ValueError("stage must be 'init' or 'converged'")
    table = ckpt.init_params if stage == "init" else ckpt.params
    hz = _centres(table, kind, sample_rate)
    return np.sort(hz) if sort else hz


def filter_drift(init_hz: Sequence[float], converged_hz: Sequence[float]) -> Dict[str, float]:
    """Mean and max absolute difference between two (sorted) center-frequency lists."""
    a, b = np.asarray(init_hz, dtype=np.float64), np.asarray(converged_hz, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size} filters")
    if a.size == 0:
        raise ValueError("empty filter lists")
    diff = np.abs(b - a)
    return {"mean_hz": float(diff.mean()), "max_hz": float(diff.max())}


def pcen_smoothing_report(ckpt: Checkpoint, bins: int = HISTOGRAM_BINS) -> dict:
    """Per-channel smoothing coefficients, their histogram over [0, 1] and spread."""
    if "frontend.pcen.s" not in ckpt.params:
        raise ValueError(f"{_frontend_kind(ckpt) or 'unknown'} frontend has no PCEN layer")
    s = np.asarray(ckpt.params["frontend.pcen.s"], dtype=np.float64)
    counts, edges = np.histogram(s, bins=bins, range=(0.0, 1.0))
    return {
        "s": s.tolist(),
        "histogram": (counts / counts.sum()).tolist(),
        "bin_edges": edges.tolist(),
        "spread": float(np.std(s)),
        "mean": float(np.mean(s)),
    }


def run_report(ckpt: Checkpoint, metric_table: Optional[dict] = None) -> dict:
    """Everything the analyses need from one checkpoint, JSON-ready."""
    report = {"schema": REPORT_SCHEMA, "config_hash": ckpt.config_hash, "step": ckpt.step,
              "frontend": _frontend_kind(ckpt), "objective": ckpt.config.get("objective")}
    if "frontend.gabor.eta" in ckpt.params or "frontend.sinc.band" in ckpt.params:
        init, conv = extract_center_frequencies(ckpt, "init"), extract_center_frequencies(ckpt)
        report["center_frequencies"] = {
            "init_sorted_hz": init.tolist(), "converged_sorted_hz": conv.tolist(),
            "init_raw_hz": extract_center_frequencies(ckpt, "init", sort=False).tolist(),
            "converged_raw_hz": extract_center_frequencies(ckpt, sort=False).tolist(),
        }
        report["drift"] = filter_drift(init, conv)
    if "frontend.pcen.s" in ckpt.params:
        report["pcen"] = pcen_smoothing_report(ckpt)
    if metric_table is not None:
        report["metrics"] = metric_table
    report["history"] = ckpt.meta.get("history", [])
    return report


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_filters_csv(path, ckpt: Checkpoint) -> None:
    """``filter_index, init_hz, converged_hz`` rows over the sorted lists."""
    init, conv = extract_center_frequencies(ckpt, "init"), extract_center_frequencies(ckpt)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={FILTERS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["filter_index", "init_hz", "converged_hz"])
        for i, (a, b) in enumerate(zip(init, conv)):
            writer.writerow([i, repr(float(a)), repr(float(b))])


def write_pcen_csv(path, ckpt: Checkpoint) -> None:
    """``channel, s_value`` rows in channel order."""
    report = pcen_smoothing_report(ckpt)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={PCEN_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["channel", "s_value"])
        for i, s in enumerate(report["s"]):
            writer.writerow([i, repr(float(s))])


def read_report_csv(path):
    """Parse a CSV written by this module into ``(schema, header, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema line")
        rows = list(csv.reader(fh))
    return first.split("=", 1)[1], rows[0], rows[1:]


def paired_summary(drifts: Mapping[str, Mapping[str, dict]], spreads: Mapping[str, float]) -> dict:
    """Side-by-side drift and PCEN-spread comparison of supervised and contrastive runs.

    ``drifts[objective][init]`` holds :func:`filter_drift` output and
    ``spreads[objective]`` the PCEN ``s`` standard deviation. The
    ``*_larger_under_cola`` flags record the direction of each comparison.
    """
    out = {"drift": {k: dict(v) for k, v in drifts.items()}, "pcen_spread": dict(spreads), "comparisons": {}}
    if "supervised" in drifts and "cola" in drifts:
        for init in sorted(set(drifts["supervised"]) & set(drifts["cola"])):
            out["comparisons"][f"drift_{init}_larger_under_cola"] = (
                drifts["cola"][init]["mean_hz"] > drifts["supervised"][init]["mean_hz"])
    if "supervised" in spreads and "cola" in spreads:
        out["comparisons"]["pcen_spread_larger_under_cola"] = spreads["cola"] >= spreads["supervised"]
    return out
