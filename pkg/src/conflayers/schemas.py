"""JSON Schemas of the files written by the CLI (draft 2020-12)."""

_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 0}}

ITERATION_RECORD = {
    "type": "object",
    "required": ["iter", "round", "skip_set", "drafted", "accepted", "committed"],
    "properties": {
        "iter": {"type": "integer", "minimum": 0},
        "round": {"type": "integer", "minimum": 0},
        "skip_set": _INT_LIST,
        "drafted": {"type": "integer", "minimum": 0},
        "accepted": {"type": "integer", "minimum": 0},
        "committed": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SEARCH_RECORD = {
    "type": "object",
    "required": ["round", "score", "set", "best_score", "decision"],
    "properties": {
        "round": {"type": "integer", "minimum": 0},
        "score": {"type": "number", "minimum": 0},
        "set": _INT_LIST,
        "best_score": {"type": "number", "minimum": 0},
        "decision": {"enum": ["continue", "search", "halt"]},
    },
    "additionalProperties": False,
}

PROGRESSION_RECORD = {
    "type": "object",
    "required": ["round", "score", "set", "best_score", "best_set"],
    "properties": {
        "round": {"type": "integer", "minimum": 0},
        "score": {"type": "number", "minimum": 0},
        "set": _INT_LIST,
        "best_score": {"type": "number", "minimum": 0},
        "best_set": _INT_LIST,
    },
    "additionalProperties": False,
}

METRICS_REPORT = {
    "type": "object",
    "required": ["alpha", "beta_mean", "M", "speedup_est", "rouge2", "iterations", "rounds"],
    "properties": {
        # alpha and M are null for vanilla runs, which draft nothing
        "alpha": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "beta_mean": {"type": "number", "minimum": 0, "maximum": 1},
        "M": {"type": ["number", "null"], "minimum": 0},
        "speedup_est": {"type": "number", "exclusiveMinimum": 0},
        "rouge2": {"type": "number", "minimum": 0, "maximum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "rounds": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

DIAGNOSTIC_RECORD = {
    "type": "object",
    "required": [
        "round",
        "layer",
        "confidence",
        "normalized",
        "gradient",
        "window",
        "local_mean",
        "local_std",
        "threshold",
        "skipped",
    ],
    "properties": {
        "round": {"type": "integer", "minimum": 0},
        "layer": {"type": "integer", "minimum": 1},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "normalized": {"type": "number"},
        "gradient": {"type": "number", "minimum": 0, "maximum": 1},
        "window": {"type": "integer", "minimum": 1},
        "local_mean": {"type": "number"},
        "local_std": {"type": "number", "minimum": 0},
        "threshold": {"type": "number"},
        "skipped": {"type": "boolean"},
    },
    "additionalProperties": False,
}

OUTPUT_RECORD = {
    "type": "object",
    "required": ["prompt", "tokens"],
    "properties": {"prompt": {"type": "integer", "minimum": 0}, "tokens": _INT_LIST},
    "additionalProperties": False,
}

SKIP_SET_FILE = {
    "type": "object",
    "required": ["num_layers", "skip_set"],
    "properties": {
        "num_layers": {"type": "integer", "minimum": 3},
        "skip_set": _INT_LIST,
    },
}

TRACE_HEADER = {
    "type": "object",
    "required": ["meta"],
    "properties": {
        "meta": {
            "type": "object",
            "required": ["K", "num_layers"],
            "properties": {
                "K": {"type": "integer", "minimum": 2},
                "num_layers": {"type": "integer", "minimum": 3},
            },
        }
    },
}

TRACE_RECORD = {
    "type": "object",
    "required": ["pos", "final"],
    "properties": {
        "pos": {"type": "integer", "minimum": 0},
        "final": {"type": "array", "items": {"type": "number"}},
        "sublayers": {
            "type": "array",
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
}

SWEEP_COLUMNS = ["lambda", "beta", "alpha", "M", "speedup_est", "marked_first_round", "rounds"]
