"""Model families, default search grids and JSON model documents."""

from __future__ import annotations

import json
from functools import partial
from pathlib import Path

from .classic_models import GBRegressor, MeanRegressor, RidgeRegressor, TreeRegressor
from .neural_models import NeuralRegressor

MODEL_SCHEMA = "stepforecast.model"
MODEL_SCHEMA_VERSION = 1

FAMILIES = {
    "ridge": RidgeRegressor,
    "tree": TreeRegressor,
    "gb": GBRegressor,
    "mlp": partial(NeuralRegressor, "mlp"),
    "cnn": partial(NeuralRegressor, "cnn"),
    "lstm": partial(NeuralRegressor, "lstm"),
    "mean": MeanRegressor,
}

DISPLAY_NAMES = {
    "ridge": "Ridge",
    "tree": "Decision Tree",
    "gb": "Gradient Boosting",
    "mlp": "MLP",
    "cnn": "CNN",
    "lstm": "RNN (LSTM)",
    "mean": "Mean baseline",
}

DEFAULT_GRIDS = {
    "ridge": {"lam": [0.1, 1.0, 10.0, 100.0]},
    "tree": {"max_depth": [3, 5, 10, None]},
    "gb": {"n_stages": [100, 300], "learning_rate": [0.05, 0.1], "subsample": [0.7, 1.0]},
    "mlp": {"learning_rate": [1e-3, 3e-4], "dropout": [0.0, 0.2]},
    "cnn": {"learning_rate": [1e-3, 3e-4], "dropout": [0.0, 0.2]},
    "lstm": {"learning_rate": [1e-3, 3e-4], "dropout": [0.0, 0.2]},
}


def make_model(family: str, **params):
    try:
        factory = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; choose from {sorted(FAMILIES)}") from None
    return factory(**params)


def model_to_document(model, preprocessing: dict | None = None) -> dict:
    """Self-describing JSON-ready dict: family, constructor params, fitted state."""
    return {
        "schema": MODEL_SCHEMA,
        "schema_version": MODEL_SCHEMA_VERSION,
        "family": model.family,
        "params": model.get_params(),
        "state": model.state_dict(),
        "preprocessing": preprocessing,
    }


def model_from_document(doc: dict):
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError("not a model document")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')}")
    return make_model(doc["family"], **doc["params"]).load_state(doc["state"])


def save_model_document(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model_document(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
