"""Reading and writing fitted models: ``fit.json`` plus an effects CSV sidecar."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from .estimation.pipeline import EstimateOptions, EstimationResult, ProductionFit
from .panel import PanelData

__all__ = ["effects_path", "save_fit", "load_fit", "fit_to_dict", "fit_from_dict"]

FORMAT_VERSION = 1
_ARRAYS = ("gamma", "basis_center", "basis_scale", "eta", "omega", "delta", "rows", "residual")


def effects_path(fit_path) -> Path:
    """``out/fit.json`` -> ``out/fit.effects.csv``."""
    p = Path(fit_path)
    return p.with_name(p.stem + ".effects.csv")


def _plain(v):
    if isinstance(v, np.ndarray):
        return [None if isinstance(x, float) and not np.isfinite(x) else x for x in v.tolist()]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    return v


def fit_to_dict(fit: ProductionFit) -> dict:
    return {f.name: _plain(getattr(fit, f.name)) for f in fields(fit)}


def fit_from_dict(data: dict) -> ProductionFit:
    data = dict(data)
    for name in _ARRAYS:
        if name in data:
            arr = np.array([np.nan if x is None else x for x in data[name]], dtype=float)
            data[name] = arr.astype(np.int64) if name == "rows" else arr
    data["z_names"] = tuple(data.get("z_names", ()))
    data["dummy_names"] = tuple(data.get("dummy_names", ()))
    data["params"] = {k: float(v) for k, v in data["params"].items()}
    return ProductionFit(**data)


def save_fit(result: EstimationResult, path, panel: PanelData | None = None,
             extra: dict | None = None) -> Path:
    """Write ``path`` (JSON) and the per-observation effects next to it.

    The JSON holds every ProductionFit field, the estimator options, mean
    effects and the sidecar's file name. With ``panel`` the sidecar gets
    firm ids and years, and eta/omega at each stage-2 observation.
    """
    path = Path(path)
    fit, eff = result.fit, result.effects
    side = effects_path(path)
    frame = eff.frame(panel)
    frame.insert(frame.columns.get_loc("row") + 1, "eta", fit.eta[eff.rows])
    frame.insert(frame.columns.get_loc("eta") + 1, "omega", fit.omega[eff.rows])
    frame.to_csv(side, index=False, float_format="%.17g")
    doc = {
        "format_version": FORMAT_VERSION,
        "fit": fit_to_dict(fit),
        "scalars": fit.scalars(),
        "mean_effects": eff.means(),
        "options": result.options.to_dict(),
        "iterations": result.iterations,
        "effects_csv": side.name,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, allow_nan=True))
    return path


def load_fit(path) -> tuple[ProductionFit, EstimateOptions, pd.DataFrame | None]:
    """Inverse of :func:`save_fit`; the effects frame is None if the sidecar is gone."""
    path = Path(path)
    doc = json.loads(path.read_text())
    fit = fit_from_dict(doc["fit"])
    options = EstimateOptions.from_dict(doc["options"])
    side = path.with_name(doc.get("effects_csv", effects_path(path).name))
    effects = pd.read_csv(side, float_precision="round_trip") if side.exists() else None
    return fit, options, effects
