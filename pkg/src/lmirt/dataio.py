"""File formats: long-format trial data, covariates, model configs, outputs.

All files use 1-based item/regime/occasion/state labels; the library works
0-based, so conversion happens here and only here. Everything written is
deterministic for identical inputs: fixed column orders, sorted JSON keys,
repr-precision floats, no timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .likelihood import ChainParams, Dataset, ParamSet
from .model_spec import (ConstraintSet, ItemBank, MeasurementMode, ModelSpec,
                         RegimePlan)
from .response_model import AbilitySupport, ItemParams

_MODE_NAMES = {m.value: m for m in MeasurementMode}

DATA_HEADER = ["subject_id", "occasion", "item", "regime", "response"]
TRUTH_HEADER = ["subject_id", "occasion", "state"]


# --- model config ----------------------------------------------------------

def load_model_config(path):
    """Parse a model config file into (ModelSpec, covariate column names)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse model config: {exc}", path=str(path))
    return model_config_from_dict(raw, source=str(path))


def model_config_from_dict(raw: dict, source: str = "<config>"):
    def need(key):
        if key not in raw:
            raise DataFormatError(f"missing key {key!r}", path=source)
        return raw[key]

    mode_name = str(need("mode")).lower()
    if mode_name not in _MODE_NAMES:
        raise DataFormatError(
            f"unknown mode {mode_name!r} (expected one of {sorted(_MODE_NAMES)})",
            path=source)
    mode = _MODE_NAMES[mode_name]

    n_items = int(need("n_items"))
    n_dims = int(raw.get("n_dims", 1))
    item_dims_raw = raw.get("item_dims")
    if item_dims_raw is None:
        dims = [0] * n_items
    else:
        dims = [-1] * n_items
        for key, value in item_dims_raw.items():
            item = int(key)
            if not 1 <= item <= n_items:
                raise DataFormatError(f"item_dims names unknown item {item}", path=source)
            dims[item - 1] = int(value) - 1
        missing = [j + 1 for j, d in enumerate(dims) if d < 0]
        if missing:
            raise DataFormatError(f"items {missing} unassigned in item_dims", path=source)

    refs_raw = raw.get("reference_items")
    if refs_raw is None:
        if mode is not MeasurementMode.UNCONSTRAINED:
            raise DataFormatError("reference_items required for logistic modes",
                                  path=source)
        bank = ItemBank.unconstrained(n_items)
    else:
        refs = [0] * n_dims
        for key, value in refs_raw.items():
            d = int(key)
            if not 1 <= d <= n_dims:
                raise DataFormatError(f"reference_items names unknown dimension {d}",
                                      path=source)
            refs[d - 1] = int(value) - 1
        bank = ItemBank(tuple(dims), mode, tuple(refs))

    n_regimes = int(need("n_regimes"))
    classes_raw = raw.get("transition_classes")
    if classes_raw is None:
        constraints_classes = [(r,) for r in range(n_regimes)]
    else:
        constraints_classes = [tuple(int(r) - 1 for r in cls) for cls in classes_raw]
    identity_raw = raw.get("identity_classes", [])
    identity = [tuple(int(r) - 1 for r in cls) for cls in identity_raw]
    constraints = ConstraintSet.make(
        constraints_classes, identity,
        unidimensional=bool(raw.get("unidimensional", False)),
        covariate_free_init=bool(raw.get("covariate_free_init", False)),
    )
    covariate_names = [str(c) for c in raw.get("covariates", [])]
    spec = ModelSpec(
        n_states=int(need("n_states")),
        item_bank=bank,
        regime_plan=RegimePlan(n_regimes),
        constraints=constraints,
        n_covariates=1 + len(covariate_names),
    )
    return spec, covariate_names


def model_config_to_dict(spec: ModelSpec, covariate_names) -> dict:
    bank = spec.item_bank
    return {
        "n_states": spec.n_states,
        "n_dims": spec.n_dims,
        "n_items": spec.n_items,
        "item_dims": {str(j + 1): int(d) + 1 for j, d in enumerate(bank.item_dims)},
        "mode": bank.mode.value,
        "reference_items": {str(d + 1): int(r) + 1
                            for d, r in enumerate(bank.reference_items)},
        "n_regimes": spec.n_regimes,
        "transition_classes": [[r + 1 for r in cls]
                               for cls in spec.constraints.transition_classes],
        "identity_classes": [[r + 1 for r in cls]
                             for cls in spec.constraints.identity_classes],
        "unidimensional": spec.constraints.unidimensional,
        "covariate_free_init": spec.constraints.covariate_free_init,
        "covariates": list(covariate_names),
    }


# --- trial data ------------------------------------------------------------

def read_data_file(path):
    """Parse the long-format trial file.

    Returns (subject order, {subject: list of (occasion, item, regime,
    response)}) with everything still 1-based; structural errors carry the
    offending line number.
    """
    path = Path(path)
    order: list[str] = []
    trials: dict[str, dict[int, tuple]] = {}
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(str(exc), path=str(path))
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATA_HEADER:
            raise DataFormatError(
                f"expected header {','.join(DATA_HEADER)}", path=str(path), line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 5:
                raise DataFormatError("expected 5 fields", path=str(path), line=lineno)
            sid = row[0].strip()
            if not sid:
                raise DataFormatError("empty subject_id", path=str(path), line=lineno)
            try:
                occasion = int(row[1])
                item = int(row[2])
                regime = int(row[3]) if row[3].strip() else None
                response = int(row[4])
            except ValueError:
                raise DataFormatError("malformed integer field",
                                      path=str(path), line=lineno)
            if response not in (0, 1):
                raise DataFormatError(f"response must be 0/1, got {response}",
                                      path=str(path), line=lineno)
            if sid not in trials:
                trials[sid] = {}
                order.append(sid)
            if occasion in trials[sid]:
                raise DataFormatError(
                    f"duplicate occasion {occasion} for subject {sid}",
                    path=str(path), line=lineno)
            trials[sid][occasion] = (item, regime, response, lineno)
    if not order:
        raise DataFormatError("no trial rows", path=str(path))
    return order, trials


def read_covariates_file(path, covariate_names):
    """Parse the per-subject covariates file into {subject: vector}."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(str(exc), path=str(path))
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or not header or header[0].strip() != "subject_id":
            raise DataFormatError("expected a header starting with subject_id",
                                  path=str(path), line=1)
        names = [h.strip() for h in header[1:]]
        missing = [c for c in covariate_names if c not in names]
        if missing:
            raise DataFormatError(f"covariate columns {missing} not found",
                                  path=str(path), line=1)
        take = [names.index(c) + 1 for c in covariate_names]
        values: dict[str, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            sid = row[0].strip()
            try:
                values[sid] = np.array([float(row[i]) for i in take])
            except (ValueError, IndexError):
                raise DataFormatError("malformed covariate row",
                                      path=str(path), line=lineno)
    return values


def load_dataset(data_path, covariates_path, spec: ModelSpec,
                 covariate_names) -> Dataset:
    """Assemble a Dataset and validate it against ``spec``."""
    order, trials = read_data_file(data_path)
    if covariate_names:
        if covariates_path is None:
            raise DataFormatError("model declares covariates but no covariate "
                                  "file was given", path=str(data_path))
        cov_map = read_covariates_file(covariates_path, covariate_names)
    else:
        cov_map = {}

    n = len(order)
    lengths = np.zeros(n, dtype=np.int64)
    for i, sid in enumerate(order):
        occasions = sorted(trials[sid])
        if occasions != list(range(1, len(occasions) + 1)):
            raise DataFormatError(
                f"subject {sid}: occasions must run 1..T without gaps",
                path=str(data_path))
        lengths[i] = len(occasions)

    t_max = int(lengths.max())
    items = np.full((n, t_max), -1, dtype=np.int64)
    regimes = np.full((n, t_max), -1, dtype=np.int64)
    responses = np.zeros((n, t_max), dtype=np.int8)
    covariates = np.ones((n, spec.n_covariates))
    for i, sid in enumerate(order):
        if covariate_names:
            if sid not in cov_map:
                raise DataFormatError(f"covariates missing for subject {sid}",
                                      path=str(covariates_path))
            covariates[i, 1:] = cov_map[sid]
        for occasion in range(1, int(lengths[i]) + 1):
            item, regime, response, lineno = trials[sid][occasion]
            if not 1 <= item <= spec.n_items:
                raise DataFormatError(f"unknown item type {item}",
                                      path=str(data_path), line=lineno)
            if occasion == 1:
                if regime is not None:
                    raise DataFormatError("occasion 1 must have an empty regime",
                                          path=str(data_path), line=lineno)
            else:
                if regime is None:
                    raise DataFormatError(
                        f"missing regime for occasion {occasion} of subject {sid}",
                        path=str(data_path), line=lineno)
                if not 1 <= regime <= spec.n_regimes:
                    raise DataFormatError(f"unknown regime {regime}",
                                          path=str(data_path), line=lineno)
                regimes[i, occasion - 1] = regime - 1
            items[i, occasion - 1] = item - 1
            responses[i, occasion - 1] = response
    return Dataset(covariates, items, regimes, responses, lengths, order)


def write_data_file(path, data: Dataset) -> int:
    """Write the long-format trial file; returns the number of trial rows."""
    rows = 0
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(DATA_HEADER)
        for i, sid in enumerate(data.subject_ids):
            for t in range(int(data.lengths[i])):
                regime = "" if t == 0 else str(int(data.regimes[i, t]) + 1)
                writer.writerow([sid, t + 1, int(data.items[i, t]) + 1, regime,
                                 int(data.responses[i, t])])
                rows += 1
    return rows


def write_covariates_file(path, data: Dataset, covariate_names) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["subject_id"] + list(covariate_names))
        for i, sid in enumerate(data.subject_ids):
            values = [repr(float(v)) for v in data.covariates[i, 1:]]
            writer.writerow([sid] + values)


def write_truth_file(path, data: Dataset, states: np.ndarray) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRUTH_HEADER)
        for i, sid in enumerate(data.subject_ids):
            for t in range(int(data.lengths[i])):
                writer.writerow([sid, t + 1, int(states[i, t]) + 1])


# --- parameter sets ----------------------------------------------------------

def params_to_dict(params: ParamSet, spec: ModelSpec) -> dict:
    items = params.items
    return {
        "mode": spec.item_bank.mode.value,
        "difficulty": None if items.difficulty is None else items.difficulty.tolist(),
        "discrimination": None if items.discrimination is None
                          else items.discrimination.tolist(),
        "success_table": None if items.success_table is None
                         else items.success_table.tolist(),
        "ability": None if params.support is None else params.support.levels.tolist(),
        "init_coefs": params.chain.init_coefs.tolist(),
        "class_transition": params.chain.class_transition.tolist(),
        "transition_classes": [[r + 1 for r in cls]
                               for cls in spec.constraints.transition_classes],
    }


def params_from_dict(raw: dict, spec: ModelSpec) -> ParamSet:
    def arr(key):
        value = raw.get(key)
        return None if value is None else np.asarray(value, dtype=float)

    items = ItemParams(difficulty=arr("difficulty"),
                       discrimination=arr("discrimination"),
                       success_table=arr("success_table"))
    ability = arr("ability")
    support = None if ability is None else AbilitySupport(ability)
    chain = ChainParams(np.asarray(raw["init_coefs"], dtype=float),
                        np.asarray(raw["class_transition"], dtype=float),
                        spec.regime_class_map())
    return ParamSet(items, support, chain)


# --- generic helpers ---------------------------------------------------------

def write_json(path, payload: dict) -> None:
    with Path(path).open("w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse JSON: {exc}", path=str(path))


def file_sha256(*paths) -> str:
    digest = hashlib.sha256()
    for path in paths:
        if path is None:
            continue
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()
