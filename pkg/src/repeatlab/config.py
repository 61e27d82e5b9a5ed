"""JSON run configuration: defaults, dotted overrides, validation and builders."""

from __future__ import annotations

import copy
import difflib
import json
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from repeatlab.errors import ConfigurationError
from repeatlab.experiments import Interventions, Prephase, RunConfig, lr_grid, check_lr_grid
from repeatlab.model import InitScheme
from repeatlab.optim import OptimConfig
from repeatlab.schedule import ONLINE, Phase, PhaseSchedule
from repeatlab.tasks import TaskSpec

EXPERIMENTS = ("train", "gap_sweep", "init_heatmap", "layerwise_lr", "random_label", "bias_refutation",
               "scaling_ablation", "adam_closure")

PREPHASE_DEFAULTS = {"size": 1024, "steps": 50, "labels": "random"}
PHASE_DEFAULTS = {"size": None, "fraction": None, "steps": None, "epochs": None, "auto": False}
SCHEDULE_DEFAULTS = {
    "phases": [],
    "preset": None,  # "parity-curriculum" | "auto"
    "online_total": None,
    "n_phases": 6,
    "nested": True,
    "with_replacement": True,
    "auto_acc_threshold": 0.75,
    "auto_max_epochs": 50,
}

DEFAULTS: Dict[str, Any] = {
    "name": "run",
    "experiment": "train",
    "base_seed": 0,
    "task": {"kind": "parity", "d": 14, "k": 4, "support": None, "teacher_seed": 0},
    "model": {"width": 64, "depth": 2,
              "init": {"kind": "default-uniform", "alpha": 1.0, "layer_scales": None}},
    "loss": "mse",
    "optim": {"kind": "sgd", "lr": 0.1, "layer_lrs": None, "beta1": 0.9, "beta2": 0.999,
              "weight_decay": 0.0, "eps": 1e-8},
    "data": {"size": 1024, "batch_size": 128},
    "schedule": None,
    "interventions": {"bias_removal": None, "whiten": False, "random_label_prephase": None, "biased_online": None},
    "eval": {"test_size": None, "eval_every": 10},
    "seeds": [0, 1, 2],
    "max_steps": 1000,
    "success_threshold": 0.99,
    "loss_target": None,
    "stop_at_threshold": True,
    "sweep": {
        "lrs": None, "lr_min": 0.1, "lr_max": 0.6, "lr_ratio": 1.2,
        "sizes": [1024, 16384],
        "small": 1024, "large": 16384,
        "first_scales": [0.25, 0.5, 1.0, 2.0], "rest_scales": [0.25, 0.5, 1.0, 2.0], "budget": 200,
        "layer_lr_pairs": None,
        "prephase": None,
        "source_sizes": [1024],
        "online_steps": None,
        "bias_mode": "mean-zero",
        "axis": "width", "values": [64, 1024],
        "beta2s": [0.8, 0.9, 0.95, 0.999],
        "adam_lrs": None, "adam_lr_min": 0.001, "adam_lr_max": 0.02,
    },
    "theory": {
        "d": 16, "Ns": None, "lr": 0.001, "a_star": 0.03, "width": 10_000_000, "eps": 0.01, "trials": 1000,
        "phase1_labels": "true", "schedule_lr": 0.03, "schedule_width": None, "schedule_trials": 300,
        "delta": 0.1, "c0": math.sqrt(3.0 / 8.0), "bernstein_C": 1.0, "slope_target": 0.5, "slope_tol": 0.15,
        "baseline": True, "baseline_a_star": 0.3,
    },
    "verify": {
        "trials": 10000, "trajectories": 1000, "phase1_trials": 2000, "transfer_trials": 20000,
        "d": 10, "N": 40, "lr": 0.1, "contraction_lr": 0.5, "delta": 0.1,
        "anticoncentration_pairs": [[10, 40], [50, 200]], "opnorm_Ns": [10, 40, 160],
        "alignment_dims": [3, 10, 50], "drift_Ns": [10, 100], "long_a_star": 0.3,
    },
}

# keys whose default is None but which accept a nested object with its own schema
NESTED_OPTIONAL = {
    ("schedule",): SCHEDULE_DEFAULTS,
    ("interventions", "random_label_prephase"): PREPHASE_DEFAULTS,
    ("sweep", "prephase"): PREPHASE_DEFAULTS,
}


def _nearest(key: str, valid: Sequence[str]) -> str:
    m = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    return m[0] if m else "(none)"


def _unknown(path: Sequence[str], key: str, valid) -> ConfigurationError:
    where = ".".join(list(path) + [key])
    return ConfigurationError(f"unknown config key '{where}'; nearest valid key is "
                              f"'{'.'.join(list(path) + [_nearest(key, valid)])}'")


def _merge(defaults: dict, given: dict, path=()) -> dict:
    if not isinstance(given, dict):
        raise ConfigurationError(f"config section '{'.'.join(path) or '<root>'}' must be an object")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise _unknown(path, key, defaults)
        sub = path + (key,)
        if sub in NESTED_OPTIONAL and val is not None:
            out[key] = _merge(NESTED_OPTIONAL[sub], val, sub)
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, sub)
        else:
            out[key] = copy.deepcopy(val)
    if path == ("schedule",):
        out["phases"] = [_merge(PHASE_DEFAULTS, p, path + ("phases",)) for p in out["phases"]]
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place (value parsed as JSON when possible)."""
    if "=" not in assignment:
        raise ConfigurationError(f"override {assignment!r} is not of the form key=value")
    dotted, text = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    node, schema, path = cfg, DEFAULTS, ()
    for i, part in enumerate(parts):
        if not isinstance(schema, dict) or part not in schema:
            valid = schema.keys() if isinstance(schema, dict) else []
            raise _unknown(path, part, valid)
        path = path + (part,)
        last = i == len(parts) - 1
        if last:
            val = _parse_value(text)
            if path in NESTED_OPTIONAL and isinstance(val, dict):
                val = _merge(NESTED_OPTIONAL[path], val, path)
            node[part] = val
            return
        nxt_schema = schema[part]
        if path in NESTED_OPTIONAL:
            nxt_schema = NESTED_OPTIONAL[path]
            if node.get(part) is None:
                node[part] = copy.deepcopy(nxt_schema)
        if not isinstance(nxt_schema, dict):
            raise ConfigurationError(f"'{'.'.join(path)}' is not a section; cannot set '{dotted}'")
        node, schema = node[part], nxt_schema


def resolve(raw: Optional[dict] = None, overrides: Sequence[str] = ()) -> dict:
    cfg = _merge(DEFAULTS, raw or {})
    for o in overrides:
        apply_override(cfg, o)
    validate(cfg)
    return cfg


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")


def parse_config(path=None, overrides: Sequence[str] = ()) -> "Resolved":
    """Load, default, override and validate a config; returns a :class:`Resolved`."""
    raw = load_json(path) if path is not None else {}
    return Resolved(resolve(raw, overrides))


# ---------------------------------------------------------------- builders

def build_task(c: dict) -> TaskSpec:
    t = c["task"]
    if t["kind"] == "parity":
        return TaskSpec.parity(int(t["d"]), int(t["k"]), t["support"])
    if t["kind"] == "sim":
        return TaskSpec.sim(int(t["d"]), int(t["k"]), int(t["teacher_seed"]))
    raise ConfigurationError(f"task.kind must be 'parity' or 'sim', got {t['kind']!r}")


def build_widths(c: dict) -> tuple:
    m = c["model"]
    if int(m["depth"]) < 1 or int(m["width"]) < 1:
        raise ConfigurationError("model.depth and model.width must be >= 1")
    return tuple([int(m["width"])] * (int(m["depth"]) - 1)) + (1,)


def build_schedule(c: dict) -> Optional[PhaseSchedule]:
    s = c["schedule"]
    if s is None:
        return None
    kw = dict(nested=s["nested"], with_replacement=s["with_replacement"],
              auto_acc_threshold=s["auto_acc_threshold"], auto_max_epochs=s["auto_max_epochs"])
    if s["preset"] is not None:
        if s["online_total"] is None:
            raise ConfigurationError("schedule presets need schedule.online_total")
        if s["preset"] == "parity-curriculum":
            base = PhaseSchedule.parity_curriculum(int(s["online_total"]))
            return PhaseSchedule(base.phases, **kw)
        if s["preset"] == "auto":
            return PhaseSchedule.auto_sizes(int(s["online_total"]), int(s["n_phases"]), **kw)
        raise ConfigurationError(f"unknown schedule preset {s['preset']!r}; expected 'parity-curriculum' or 'auto'")
    phases = []
    for p in s["phases"]:
        size = p["size"]
        if p["fraction"] is not None:
            if s["online_total"] is None:
                raise ConfigurationError("fractional phase sizes need schedule.online_total")
            size = max(1, int(round(p["fraction"] * s["online_total"])))
        if size is None:
            raise ConfigurationError("each schedule phase needs a size, a fraction, or size='online'")
        phases.append(Phase(size if size == ONLINE else int(size), p["steps"], p["epochs"], bool(p["auto"])))
    return PhaseSchedule(phases, **kw)


def build_prephase(p: Optional[dict]) -> Optional[Prephase]:
    if p is None:
        return None
    return Prephase(int(p["size"]), int(p["steps"]), p["labels"])


def build_run_config(c: dict) -> RunConfig:
    m, o, iv = c["model"], c["optim"], c["interventions"]
    init = m["init"]
    return RunConfig(
        task=build_task(c),
        widths=build_widths(c),
        init=InitScheme(init["kind"], float(init["alpha"]), init["layer_scales"]),
        optim=OptimConfig(o["kind"], float(o["lr"]), o["layer_lrs"], float(o["beta1"]), float(o["beta2"]),
                          float(o["weight_decay"]), float(o["eps"])),
        loss=c["loss"],
        data_size=int(c["data"]["size"]),
        batch_size=None if c["data"]["batch_size"] is None else int(c["data"]["batch_size"]),
        schedule=build_schedule(c),
        interventions=Interventions(iv["bias_removal"], bool(iv["whiten"]), build_prephase(iv["random_label_prephase"]),
                                    None if iv["biased_online"] is None else int(iv["biased_online"])),
        test_size=c["eval"]["test_size"],
        eval_every=int(c["eval"]["eval_every"]),
        seeds=tuple(c["seeds"]),
        max_steps=int(c["max_steps"]),
        success_threshold=float(c["success_threshold"]),
        loss_target=c["loss_target"],
        stop_at_threshold=bool(c["stop_at_threshold"]),
        base_seed=int(c["base_seed"]),
        name=str(c["name"]),
    )


def sweep_lrs(c: dict, prefix: str = "lr") -> tuple:
    s = c["sweep"]
    key = "lrs" if prefix == "lr" else "adam_lrs"
    if s[key] is not None:
        lrs = tuple(float(v) for v in s[key])
        check_lr_grid(lrs, float(s["lr_ratio"]))
        return lrs
    lo, hi = (s["lr_min"], s["lr_max"]) if prefix == "lr" else (s["adam_lr_min"], s["adam_lr_max"])
    return lr_grid(float(lo), float(hi), float(s["lr_ratio"]))


def validate(c: dict) -> None:
    """Build every object the config describes so invariant violations surface early."""
    if c["experiment"] not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {c['experiment']!r}; nearest is "
                                 f"{_nearest(str(c['experiment']), EXPERIMENTS)!r}")
    if not c["seeds"]:
        raise ConfigurationError("seeds must be a non-empty list")
    if float(c["sweep"]["lr_ratio"]) > 1.2:
        raise ConfigurationError("sweep.lr_ratio must be <= 1.2 (multiplicative learning-rate grid)")
    build_run_config(c)
    sweep_lrs(c)
    t = c["theory"]
    if not 0 < float(t["eps"]) < 0.5:
        raise ConfigurationError("theory.eps must lie in (0, 1/2)")
    if t["phase1_labels"] not in ("true", "random"):
        raise ConfigurationError("theory.phase1_labels must be 'true' or 'random'")


@dataclass
class Resolved:
    raw: dict

    @property
    def run(self) -> RunConfig:
        return build_run_config(self.raw)

    @property
    def seeds(self) -> List[int]:
        return [int(s) for s in self.raw["seeds"]]

    def with_seed(self, base_seed: int) -> "Resolved":
        raw = copy.deepcopy(self.raw)
        raw["base_seed"] = int(base_seed)
        return Resolved(raw)
