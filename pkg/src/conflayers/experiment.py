"""Experiment configuration and the runs behind each CLI subcommand.

A config is one JSON document.  Every section is optional; omitted values
fall back to the library defaults.  Relative paths resolve against the
directory holding the config file.

    {
      "backend": {"type": "toy", "num_layers": 12, "vocab_size": 64},
      "prompts": "prompts.jsonl",
      "mode": "conflayers",
      "seed": 0,
      "out": "runs/demo",
      "draft": {"max_new_tokens": 128},
      "filter": {"lambda": 0.3},
      "search": {"opt_interval": 30}
    }

The ``trace`` backend takes ``{"type": "trace", "path": "trace.jsonl"}``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backend import Backend, ToyModelConfig, ToyTransformer, load_trace
from .confidence import softmax
from .errors import ConfigError, InvalidInputError
from .layer_filter import FilterConfig, SkipSet
from .metrics import DEFAULT_PROJECTION_COST, RunStats, metrics_report, rouge2
from .schemas import SWEEP_COLUMNS
from .search import FixedController, SearchConfig, SearchController
from .spec_decode import DraftConfig, generate, greedy_decode, prefill, uniform_initial_skip_set

log = logging.getLogger(__name__)

MODES = ("conflayers", "frozen-set", "uniform-baseline", "vanilla")
_TOP_LEVEL = {
    "backend", "prompts", "mode", "seed", "out", "draft", "filter", "search",
    "skip_set", "uniform_ratio", "workers", "projection_cost",
}


@dataclass
class ExperimentConfig:
    backend: dict
    prompts: Optional[Path] = None
    mode: str = "conflayers"
    seed: int = 0
    out: Path = Path("out")
    draft: DraftConfig = field(default_factory=DraftConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    skip_set: Optional[Path] = None
    uniform_ratio: float = 0.5
    workers: int = 1
    projection_cost: float = DEFAULT_PROJECTION_COST

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.mode == "frozen-set" and self.skip_set is None:
            raise ConfigError("mode frozen-set needs a skip_set file")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.projection_cost < 0:
            raise ConfigError("projection_cost must be >= 0")
        kind = self.backend.get("type")
        if kind not in ("toy", "trace"):
            raise ConfigError(f"backend type must be 'toy' or 'trace'; got {kind!r}")
        if kind == "trace" and "path" not in self.backend:
            raise ConfigError("trace backend needs a 'path'")


def _section(cls, raw, name: str, renames: dict | None = None):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be an object")
    raw = {(renames or {}).get(k, k): v for k, v in raw.items()}
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from exc


def _resolve(base: Path, value) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    backend = dict(raw.get("backend") or {"type": "toy"})
    if backend.get("type") == "trace" and "path" in backend:
        backend["path"] = str(_resolve(base_dir, backend["path"]))
    try:
        return ExperimentConfig(
            backend=backend,
            prompts=_resolve(base_dir, raw.get("prompts")),
            mode=raw.get("mode", "conflayers"),
            seed=int(raw.get("seed", 0)),
            out=_resolve(base_dir, raw.get("out", "out")),
            draft=_section(DraftConfig, raw.get("draft"), "draft"),
            filter=_section(FilterConfig, raw.get("filter"), "filter", {"lambda": "lam"}),
            search=_section(SearchConfig, raw.get("search"), "search"),
            skip_set=_resolve(base_dir, raw.get("skip_set")),
            uniform_ratio=float(raw.get("uniform_ratio", 0.5)),
            workers=int(raw.get("workers", 1)),
            projection_cost=float(raw.get("projection_cost", DEFAULT_PROJECTION_COST)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, path.parent)


def build_backend(cfg: ExperimentConfig) -> Backend:
    opts = dict(cfg.backend)
    kind = opts.pop("type")
    if kind == "trace":
        return load_trace(opts["path"])
    # The experiment seed drives the toy weights so --seed changes the model.
    opts.pop("seed", None)
    try:
        return ToyTransformer(ToyModelConfig(seed=cfg.seed, **opts))
    except TypeError as exc:
        raise ConfigError(f"bad toy backend settings: {exc}") from exc


def load_prompts(path) -> list[list[int]]:
    """Read a JSON-lines corpus; each line is a token list or ``{"tokens": [...]}``."""
    if path is None:
        raise ConfigError("config has no 'prompts' file")
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"prompt file not found: {path}") from exc
    prompts = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} line {n}: invalid JSON ({exc})") from exc
        if isinstance(item, dict):
            item = item.get("tokens")
        if not isinstance(item, list) or not item or not all(
            isinstance(t, int) and not isinstance(t, bool) for t in item
        ):
            raise ConfigError(f"{path} line {n}: expected a non-empty list of token ids")
        prompts.append(item)
    if not prompts:
        raise ConfigError(f"{path}: no prompts")
    return prompts


def load_skip_set(path, num_layers: int) -> SkipSet:
    """Read ``{"num_layers": L, "skip_set": [...]}`` or a bare JSON list."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"skip-set file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(raw, dict):
        declared = raw.get("num_layers", num_layers)
        if declared != num_layers:
            raise ConfigError(f"{path}: skip set is for {declared} layers, backend has {num_layers}")
        raw = raw.get("skip_set")
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of layer indices")
    try:
        return SkipSet.of(raw, num_layers)
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- running -------------------------------------------------------------------


@dataclass
class RunResult:
    outputs: list[list[int]]
    references: list[list[int]]
    stats: RunStats
    iterations: list[dict]
    controller: object
    metrics: dict


def _reference(backend: Backend, prompts, draft: DraftConfig, workers: int) -> list[list[int]]:
    def one(prompt):
        return greedy_decode(backend, prompt, draft.max_new_tokens, draft.eos_token)

    return _map(one, prompts, workers)


def _map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fixed_set(cfg: ExperimentConfig, num_layers: int) -> SkipSet:
    if cfg.mode == "frozen-set":
        return load_skip_set(cfg.skip_set, num_layers)
    return uniform_initial_skip_set(num_layers, cfg.uniform_ratio)


def run_experiment(
    cfg: ExperimentConfig,
    backend: Optional[Backend] = None,
    prompts: Optional[Sequence[Sequence[int]]] = None,
) -> RunResult:
    """Generate over the corpus in ``cfg.mode`` and compute the metrics report."""
    backend = backend if backend is not None else build_backend(cfg)
    prompts = [list(p) for p in prompts] if prompts is not None else load_prompts(cfg.prompts)
    n_layers = backend.num_layers
    references = _reference(backend, prompts, cfg.draft, cfg.workers)
    stats = RunStats(num_layers=n_layers)
    records: list[dict] = []

    if cfg.mode == "vanilla":
        outputs = references
        for out in outputs:
            stats.total_committed += len(out)
            stats.layers_executed_verify += len(out) * n_layers
        controller = FixedController(SkipSet.empty(n_layers))
    elif cfg.mode == "conflayers":
        controller = SearchController(
            cfg.search, uniform_initial_skip_set(n_layers, cfg.search.init_skip_ratio)
        )
        outputs = []
        for prompt in prompts:
            out, _ = generate(
                prompt, backend, controller, cfg.draft, cfg.filter, stats, records.append
            )
            outputs.append(out)
    else:
        controller = FixedController(_fixed_set(cfg, n_layers))

        def one(prompt):
            local: list[dict] = []
            out, st = generate(prompt, backend, controller, cfg.draft, cfg.filter, None, local.append)
            return out, st, local

        outputs = []
        # Each prompt has its own stats and records; merge them in corpus order.
        for out, st, local in _map(one, prompts, cfg.workers):
            offset = stats.iterations
            for rec in local:
                rec["iter"] += offset
            records.extend(local)
            stats.merge(st)
            outputs.append(out)

    rouge = float(np.mean([rouge2(o, r) for o, r in zip(outputs, references)]))
    if cfg.mode == "vanilla":
        report = {
            "alpha": None,
            "beta_mean": 0.0,
            "M": None,
            "speedup_est": 1.0,
            "rouge2": rouge,
            "iterations": 0,
            "rounds": 0,
        }
    else:
        report = metrics_report(stats, rouge, controller.round, cfg.projection_cost)
    log.info("mode %s: %s", cfg.mode, report)
    return RunResult(outputs, references, stats, records, controller, report)


# -- output files --------------------------------------------------------------


def _jsonl(path: Path, rows) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_run(result: RunResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _jsonl(out / "iterations.jsonl", result.iterations)
    _jsonl(out / "search_log.jsonl", result.controller.search_log)
    _json(out / "metrics.json", result.metrics)
    _jsonl(out / "outputs.jsonl", ({"prompt": i, "tokens": t} for i, t in enumerate(result.outputs)))
    if cfg.mode == "vanilla":
        _jsonl(
            out / "reference.jsonl",
            ({"prompt": i, "tokens": t} for i, t in enumerate(result.references)),
        )
    else:
        # the best set seen, i.e. the one worth freezing for later runs
        best = result.controller.best_set
        _json(out / "skip_set.json", {"num_layers": best.num_layers, "skip_set": list(best.layers)})


def write_diagnostics(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for round_, res in result.controller.filter_history:
        for row in res.diagnostics():
            rows.append({"round": round_, **row})
    _jsonl(out / "diagnostics.jsonl", rows)
    _jsonl(out / "progression.jsonl", result.controller.progression)


def sweep(cfg: ExperimentConfig, lambdas: Sequence[float]) -> list[dict]:
    """Run the searching pipeline once per lambda and tabulate the outcome."""
    if len(lambdas) < 2:
        raise ConfigError("a sweep needs at least two lambda values")
    backend = build_backend(cfg)
    prompts = load_prompts(cfg.prompts)
    rows = []
    for lam in lambdas:
        run_cfg = replace(cfg, mode="conflayers", filter=replace(cfg.filter, lam=lam))
        result = run_experiment(run_cfg, backend, prompts)
        history = result.controller.filter_history
        rows.append(
            {
                "lambda": lam,
                "beta": result.metrics["beta_mean"],
                "alpha": result.metrics["alpha"],
                "M": result.metrics["M"],
                "speedup_est": result.metrics["speedup_est"],
                "marked_first_round": len(history[0][1].marked) if history else "",
                "rounds": result.metrics["rounds"],
            }
        )
    sizes = [(r["lambda"], r["marked_first_round"]) for r in rows if r["marked_first_round"] != ""]
    ordered = sorted(sizes)
    if any(a[1] < b[1] for a, b in zip(ordered, ordered[1:])):
        log.warning("marked-set sizes are not non-increasing in lambda: %s", ordered)
    else:
        log.info("first-round marked-set sizes by lambda: %s", ordered)
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def generate_corpus(
    backend: ToyTransformer, num_prompts: int, prompt_len: int, seed: int
) -> list[list[int]]:
    """Sample prompts from the toy model's own next-token distribution."""
    if num_prompts < 1 or prompt_len < 1:
        raise ConfigError("num_prompts and prompt_len must be >= 1")
    if prompt_len > backend.max_seq:
        raise ConfigError(f"prompt_len {prompt_len} exceeds max_seq {backend.max_seq}")
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(num_prompts):
        tokens = [int(rng.integers(backend.vocab_size))]
        state = prefill(backend, tokens)
        while len(tokens) < prompt_len:
            (step,) = backend.forward_target(state, [state.pending])
            probs = softmax(step.final_logits)
            tok = int(rng.choice(backend.vocab_size, p=probs))
            tokens.append(tok)
            state.tokens.append(tok)
            state.committed_length += 1
        corpus.append(tokens)
    return corpus

