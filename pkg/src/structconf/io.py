"""Model files and tabular reports.

A model file is a zip archive holding ``header.json`` (format version,
task, dimension, labels, templates, training config), ``features.txt``
(one feature string per id) and ``.npy`` arrays for the weights. Entries
carry a fixed timestamp so identical models serialize to identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import zipfile
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corpus import ChainTemplates, FeatureIndex, Featurizer, TreeTemplates
from .learners import TrainConfig
from .model import LinearModel

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ModelFormatError(ValueError):
    pass


@dataclass
class SavedModel:
    model: LinearModel
    featurizer: Featurizer
    config: TrainConfig


def _entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_model(path, model: LinearModel, featurizer: Featurizer, config: TrainConfig) -> None:
    header = {
        "format": "structconf-model",
        "version": FORMAT_VERSION,
        "task": featurizer.task,
        "dimension": model.dimension,
        "n_features": len(featurizer.index),
        "labels": featurizer.labels,
        "templates": featurizer.templates.to_dict(),
        "train_config": asdict(config),
        "update_count": model.update_count,
        "averaging": model.averaging,
        "has_covariance": model.sigma_diag is not None,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _entry(zf, "header.json", json.dumps(header, indent=2, sort_keys=True).encode())
        _entry(zf, "features.txt", "\n".join(featurizer.index.strings()).encode())
        _entry(zf, "mu.npy", _npy(model.mu))
        _entry(zf, "wsum.npy", _npy(model._wsum))
        if model.sigma_diag is not None:
            _entry(zf, "sigma.npy", _npy(model.sigma_diag))


def load_model(path) -> SavedModel:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from None
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except (KeyError, json.JSONDecodeError):
            raise ModelFormatError(f"{path}: missing or corrupt header") from None
        if header.get("format") != "structconf-model":
            raise ModelFormatError(f"{path}: not a model file")
        if header.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported version {header.get('version')}")

        def arr(name):
            return np.load(io.BytesIO(zf.read(name)), allow_pickle=False)

        text = zf.read("features.txt").decode()
        strings = text.split("\n") if text else []
        mu = arr("mu.npy")
        sigma = arr("sigma.npy") if header["has_covariance"] else None
        wsum = arr("wsum.npy")
    if len(strings) != header["n_features"] or mu.shape != (header["dimension"],):
        raise ModelFormatError(f"{path}: header does not match stored arrays")
    index = FeatureIndex(strings).freeze()
    tpl_cls = ChainTemplates if header["task"] == "chain" else TreeTemplates
    featurizer = Featurizer(header["task"], tpl_cls.from_dict(header["templates"]), index, header["labels"])
    model = LinearModel(header["dimension"], mu, sigma, header["update_count"], header["averaging"], wsum)
    return SavedModel(model, featurizer, TrainConfig(**header["train_config"]))


# -- reports ---------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_cell(v):
    v = _cell(v)
    if v == "":
        return None
    if v in ("true", "false"):
        return v == "true"
    if isinstance(v, str):
        try:
            f = float(v)
        except ValueError:
            return v
        # inf has no JSON literal; keep the CSV spelling
        return f if math.isfinite(f) else v
    return v


def format_report(rows: Sequence[dict], fmt: str = "csv", columns: Sequence[str] | None = None) -> str:
    """CSV with a header row, or JSON ``{"columns": [...], "rows": [...]}`` with the same fields."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        records = [{c: _json_cell(row.get(c)) for c in columns} for row in rows]
        return json.dumps({"columns": list(columns), "rows": records}, indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def write_report(rows: Sequence[dict], path=None, fmt: str = "csv", columns=None) -> None:
    text = format_report(rows, fmt, columns)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_report(path) -> list[dict]:
    """Rows of a CSV or JSON report as dicts of strings (CSV) or JSON values."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["rows"]
    return list(csv.DictReader(io.StringIO(text)))
