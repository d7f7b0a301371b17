"""Read and write POMDP spec files (JSON, header ``"format": "momdp-spec/1"``).

Layout::

    {"format": "momdp-spec/1", "S": 2, "A": 2, "O": 2, "H": 3,
     "d0": [S], "T": [H][S][A][S], "E": [H][S][O], "r": [H][O],
     "recipe": {...}}          # optional, see envs.EnvRecipe

Probability rows within 1e-9 of summing to one are renormalized on load;
rows further off are rejected with the offending field and index.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .pomdp import PROB_TOL, TabularPOMDP

FORMAT_TAG = "momdp-spec/1"


class SpecFormatError(ValueError):
    """A spec file that cannot be parsed or fails validation."""


def _field_line(text: str, name: str) -> Optional[int]:
    needle = f'"{name}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def _fail(text: str, name: str, message: str):
    line = _field_line(text, name) if text else None
    where = f" (line {line})" if line else ""
    raise SpecFormatError(f"field '{name}'{where}: {message}")


def _array(doc, text, name, shape, kind="prob"):
    try:
        arr = np.asarray(doc[name], dtype=float)
    except KeyError:
        _fail(text, name, "missing")
    except (TypeError, ValueError) as exc:
        _fail(text, name, f"not a numeric array ({exc})")
    if arr.shape != shape:
        _fail(text, name, f"shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        _fail(text, name, "non-finite entries")
    if kind == "prob":
        neg = np.argwhere(arr < -PROB_TOL)
        if len(neg):
            _fail(text, name, f"negative entry at index {tuple(int(i) for i in neg[0])}")
        sums = arr.sum(axis=-1)
        off = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        if len(off):
            idx = tuple(int(i) for i in off[0])
            _fail(text, name, f"row {idx} sums to {sums[idx]:.12g}, not 1")
        arr = np.clip(arr, 0.0, None)
        arr = arr / arr.sum(axis=-1, keepdims=True)
    else:
        bad = np.argwhere((arr < 0) | (arr > 1))
        if len(bad):
            _fail(text, name, f"entry at index {tuple(int(i) for i in bad[0])} outside [0, 1]")
    return arr


def model_from_dict(doc: dict, text: str = "") -> TabularPOMDP:
    if doc.get("format") != FORMAT_TAG:
        _fail(text, "format", f"expected {FORMAT_TAG!r}, got {doc.get('format')!r}")
    dims = {}
    for name in ("S", "A", "O", "H"):
        value = doc.get(name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            _fail(text, name, f"must be a positive integer, got {value!r}")
        dims[name] = value
    S, A, O, H = dims["S"], dims["A"], dims["O"], dims["H"]
    return TabularPOMDP(
        d0=_array(doc, text, "d0", (S,)),
        transitions=_array(doc, text, "T", (H, S, A, S)),
        emissions=_array(doc, text, "E", (H, S, O)),
        rewards=_array(doc, text, "r", (H, O), kind="reward"),
    )


def model_to_dict(model: TabularPOMDP, recipe: Optional[dict] = None) -> dict:
    S, A, O, H = model.dims
    doc = {"format": FORMAT_TAG, "S": S, "A": A, "O": O, "H": H,
           "d0": model.d0.tolist(), "T": model.transitions.tolist(),
           "E": model.emissions.tolist(), "r": model.rewards.tolist()}
    if recipe is not None:
        doc["recipe"] = recipe
    return doc


def loads(text: str) -> TabularPOMDP:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise SpecFormatError("top level must be a JSON object")
    return model_from_dict(doc, text)


def load(path) -> TabularPOMDP:
    return loads(Path(path).read_text())


def load_recipe(path) -> Optional[dict]:
    return json.loads(Path(path).read_text()).get("recipe")


def dumps(model: TabularPOMDP, recipe: Optional[dict] = None) -> str:
    return json.dumps(model_to_dict(model, recipe), indent=1)


def dump(model: TabularPOMDP, path, recipe: Optional[dict] = None) -> None:
    Path(path).write_text(dumps(model, recipe) + "\n")
