"""Configuration, dataset/metrics/checkpoint I/O, run directories, SVG plots.

Config files are flat ``key = value`` text with dotted section prefixes
(``flow.eta = 10``). Every key is range-checked against the schema below and
unknown keys are rejected. All file writes go through write-temp-then-rename
so a killed process never leaves a half-written file a reader would accept.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import flow as flow_mod
from . import nnet


def format_float(x) -> str:
    """17 significant digits: exact text round-trip for finite float64."""
    return format(float(x), ".17g")


def atomic_write_bytes(path, payload: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


# --------------------------------------------------------------------------
# configuration schema
# --------------------------------------------------------------------------

def _fraction(lo_open=True):
    def check(v):
        return (v > 0.0 if lo_open else v >= 0.0) and v <= 1.0
    return check


@dataclass
class _Key:
    default: object
    kind: type
    check: object          # predicate on the parsed value
    accepted: str          # human description of the accepted range
    help: str


def _choices(*opts):
    return (lambda v: v in opts), "one of " + "|".join(opts)


_POS = (lambda v: v > 0, "> 0")
_NONNEG = (lambda v: v >= 0, ">= 0")
_POS_INT = (lambda v: v >= 1, ">= 1")
_NONNEG_INT = (lambda v: v >= 0, ">= 0")
_UNIT_OPEN = (_fraction(), "in (0, 1]")
_ANY = (lambda v: True, "any")

CONFIG_SCHEMA = {
    # environment pair
    "env.id": _Key("pointmass", str, *_choices("pointmass", "gaussian", "patrol"),
                   help="environment pair family"),
    "env.shift": _Key("friction", str, *_choices("friction", "kinematic", "none"),
                      help="point-mass shift mode"),
    "env.horizon": _Key(100, int, *_POS_INT, help="episode length"),
    "env.friction_off": _Key(0.05, float, lambda v: 0 <= v < 1, "in [0, 1)",
                             help="offline point-mass friction"),
    "env.friction_on": _Key(0.25, float, lambda v: 0 <= v < 1, "in [0, 1)",
                            help="online point-mass friction"),
    "env.kinematic_limit": _Key(0.4, float, *_POS, help="per-axis clamp in kinematic mode"),
    "env.delta0": _Key(1.2, float, *_ANY, help="gaussian pair mean shift, coord 0"),
    "env.delta1": _Key(1.6, float, *_ANY, help="gaussian pair mean shift, coord 1"),
    "env.sigma_off": _Key(1.0, float, *_POS, help="gaussian pair offline noise scale"),
    "env.sigma_on": _Key(1.0, float, *_POS, help="gaussian pair online noise scale"),
    "env.half_shift": _Key(False, bool, *_ANY, help="apply the gaussian shift on half the state space"),
    "env.displacement_off": _Key(0.5, float, *_POS, help="patrol neighbor-displacement, offline"),
    "env.displacement_on": _Key(1.0, float, *_POS, help="patrol neighbor-displacement, online"),
    "env.attractiveness_seed": _Key(0, int, *_NONNEG_INT, help="patrol attractiveness draw seed"),
    # flow training
    "flow.hidden_layers": _Key(6, int, *_POS_INT, help="flow net hidden layers"),
    "flow.hidden_dim": _Key(256, int, *_POS_INT, help="flow net hidden width"),
    "flow.batch_size": _Key(1024, int, *_POS_INT, help="flow training batch size"),
    "flow.ode_steps": _Key(10, int, *_POS_INT, help="Euler steps per flow interval"),
    "flow.lr": _Key(3e-4, float, *_POS, help="flow learning rate (Adam)"),
    "flow.lr_final": _Key(0.0, float, *_NONNEG,
                          help="final lr for linear decay; 0 keeps lr constant"),
    "flow.eta": _Key(10.0, float, *_NONNEG, help="conditioning weight in the transport cost"),
    "flow.train_freq": _Key(5000, int, *_POS_INT, help="env steps between online-flow retrains"),
    "flow.offline_iters": _Key(2000, int, *_NONNEG_INT, help="offline flow gradient steps"),
    "flow.online_iters": _Key(400, int, *_NONNEG_INT, help="online flow gradient steps per retrain"),
    "flow.solver": _Key("exact", str, *_choices("exact", "entropic"), help="minibatch OT solver"),
    "flow.entropic_eps": _Key(0.01, float, *_POS, help="entropic regularization strength"),
    # RL
    "rl.method": _Key("compflow", str, *_choices("compflow", "sac", "bcsac"),
                      help="training configuration"),
    "rl.gamma": _Key(0.99, float, lambda v: 0 < v < 1, "in (0, 1)", help="discount factor"),
    "rl.alpha_ent": _Key(0.2, float, *_NONNEG, help="entropy temperature"),
    "rl.target_update_rate": _Key(5e-3, float, _fraction(), "in (0, 1]",
                                  help="soft target update rate"),
    "rl.omega": _Key(5.0, float, *_NONNEG, help="behavior cloning weight"),
    "rl.beta": _Key(0.1, float, *_NONNEG, help="gap exploration bonus scale"),
    "rl.xi": _Key(0.5, float, *_UNIT_OPEN, help="offline selection ratio"),
    "rl.grad_steps": _Key(10, int, *_POS_INT, help="gradient steps per interaction"),
    "rl.batch_size": _Key(128, int, *_POS_INT, help="minibatch size per source"),
    "rl.buffer_capacity": _Key(1_000_000, int, *_POS_INT, help="replay buffer capacity"),
    "rl.warmup_steps": _Key(1000, int, *_NONNEG_INT,
                            help="random-action steps before updates and flow retrains"),
    "rl.total_interactions": _Key(40_000, int, *_POS_INT, help="environment interaction budget"),
    "rl.eval_interval": _Key(1000, int, *_POS_INT, help="env steps between evaluations"),
    "rl.eval_episodes": _Key(5, int, *_POS_INT, help="episodes per evaluation"),
    "rl.gap_samples": _Key(30, int, *_POS_INT, help="Monte-Carlo samples per gap estimate"),
    "rl.hidden_dim": _Key(256, int, *_POS_INT, help="actor/critic hidden width"),
    "rl.hidden_layers": _Key(2, int, *_POS_INT, help="actor/critic hidden layers"),
    "rl.lr": _Key(3e-4, float, *_POS, help="actor/critic learning rate (Adam)"),
    "rl.checkpoint_interval": _Key(5000, int, *_POS_INT, help="env steps between checkpoints"),
    # run bookkeeping
    "run.out_dir": _Key("runs", str, *_ANY, help="runs root (COMPFLOW_RUNS_DIR overrides)"),
    "run.label": _Key("", str, *_ANY, help="free-form label used for plot grouping"),
}


class ConfigError(ValueError):
    pass


class RunConfig(dict):
    """Fully-resolved configuration: every schema key is present."""

    def require(self, key):
        if key not in self:
            raise ConfigError(f"missing config key {key}")
        return self[key]


def _parse_value(key, raw):
    spec = CONFIG_SCHEMA[key]
    raw = raw.strip()
    try:
        if spec.kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                value = True
            elif lowered in ("false", "0", "no"):
                value = False
            else:
                raise ValueError(raw)
        elif spec.kind is int:
            value = int(raw)
        elif spec.kind is float:
            value = float(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {spec.kind.__name__}") from None
    if not spec.check(value):
        raise ConfigError(f"{key} must be {spec.accepted}, got {value!r}")
    return value


def parse_config_text(text) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys rejected."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        items[key] = _parse_value(key, raw)
    return items


def make_config(items=None) -> RunConfig:
    """Defaults overlaid with ``items`` (already-validated key/value pairs)."""
    cfg = RunConfig({k: spec.default for k, spec in CONFIG_SCHEMA.items()})
    for key, value in (items or {}).items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value if not isinstance(value, str) or CONFIG_SCHEMA[key].kind is str \
            else _parse_value(key, value)
    return cfg


def load_config(path) -> RunConfig:
    """Load and validate a config file; an empty file yields all defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return make_config(parse_config_text(text))


def parse_overrides(assignments) -> dict:
    """Validate repeatable ``--set key=value`` arguments."""
    items = {}
    for entry in assignments or ():
        if "=" not in entry:
            raise ConfigError(f"override {entry!r} is not of the form key=value")
        key, raw = entry.split("=", 1)
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        items[key] = _parse_value(key, raw)
    return items


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = format_float(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Content hash of the resolved config; stable across key reordering."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]


def config_help_lines() -> list[str]:
    out = []
    for key, spec in CONFIG_SCHEMA.items():
        default = repr(spec.default) if isinstance(spec.default, float) else spec.default
        out.append(f"  {key} = {default}  ({spec.help}; {spec.accepted})")
    return out


def flow_train_config(cfg: RunConfig, iters_key="flow.offline_iters") -> flow_mod.FlowTrainConfig:
    return flow_mod.FlowTrainConfig(
        hidden_layers=cfg["flow.hidden_layers"],
        hidden_dim=cfg["flow.hidden_dim"],
        batch_size=cfg["flow.batch_size"],
        ode_steps=cfg["flow.ode_steps"],
        lr=cfg["flow.lr"],
        lr_final=cfg["flow.lr_final"],
        iters=cfg[iters_key],
        solver=cfg["flow.solver"],
        entropic_eps=cfg["flow.entropic_eps"],
    )


# --------------------------------------------------------------------------
# run directories and manifests
# --------------------------------------------------------------------------

def runs_root(cfg: RunConfig, cli_out_dir=None) -> str:
    return os.environ.get("COMPFLOW_RUNS_DIR") or cli_out_dir or cfg["run.out_dir"]


def run_directory(root, cfg: RunConfig, seed) -> str:
    path = os.path.join(root, config_hash(cfg), str(seed))
    os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(path, "plots"), exist_ok=True)
    return path


def write_manifest(run_dir, cfg: RunConfig, seeds):
    """Write manifest.json once; an existing manifest is left untouched."""
    path = os.path.join(run_dir, "manifest.json")
    if os.path.exists(path):
        return path
    manifest = {
        "config": dict(sorted(cfg.items())),
        "config_hash": config_hash(cfg),
        "created_unix": time.time(),
        "seeds": seeds,
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(run_dir) -> dict:
    with open(os.path.join(run_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# transition dataset CSV (schema owned by the envs module)
# --------------------------------------------------------------------------

_dataset_reads: list[str] = []


def dataset_read_log() -> list[str]:
    return list(_dataset_reads)


def reset_dataset_read_log():
    _dataset_reads.clear()


def dataset_header(s_dim, a_dim) -> str:
    cols = [f"s{i}" for i in range(s_dim)] + [f"a{i}" for i in range(a_dim)]
    cols += ["r"] + [f"sp{i}" for i in range(s_dim)] + ["done"]
    return ",".join(cols)


def write_dataset(path, dataset):
    rows = [dataset_header(dataset.s_dim, dataset.a_dim)]
    for i in range(len(dataset)):
        cells = [format_float(v) for v in dataset.states[i]]
        cells += [format_float(v) for v in dataset.actions[i]]
        cells.append(format_float(dataset.rewards[i]))
        cells += [format_float(v) for v in dataset.next_states[i]]
        cells.append("1" if dataset.dones[i] else "0")
        rows.append(",".join(cells))
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_dataset(path):
    from .envs import TransitionDataset

    _dataset_reads.append(os.path.abspath(os.fspath(path)))
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        s_dim = sum(1 for c in cols if c.startswith("s") and not c.startswith("sp"))
        a_dim = sum(1 for c in cols if c.startswith("a"))
        if dataset_header(s_dim, a_dim) != header:
            raise ValueError(f"unrecognized dataset header: {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if os.path.getsize(path) > len(header) + 1 else np.empty((0, len(cols)))
    states = data[:, :s_dim]
    actions = data[:, s_dim:s_dim + a_dim]
    rewards = data[:, s_dim + a_dim]
    next_states = data[:, s_dim + a_dim + 1:s_dim + a_dim + 1 + s_dim]
    dones = data[:, -1] > 0.5
    return TransitionDataset(states, actions, rewards, next_states, dones)


# --------------------------------------------------------------------------
# metrics CSV
# --------------------------------------------------------------------------

METRICS_FIELDS = ["step", "eval_return_mean", "eval_return_std", "critic_loss",
                  "actor_loss", "lambda", "mean_kept_gap", "mean_rejected_gap",
                  "buffer_size"]
METRICS_HEADER = ",".join(METRICS_FIELDS)


class MetricsWriter:
    """Append-only metrics CSV, flushed per record."""

    def __init__(self, path, resume=False):
        self.path = os.fspath(path)
        exists = os.path.exists(self.path) and os.path.getsize(self.path) > 0
        if resume and exists:
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self._fh = open(self.path, "w", encoding="utf-8")
            self._fh.write(METRICS_HEADER + "\n")
            self._fh.flush()

    def write(self, record: dict):
        cells = []
        for field in METRICS_FIELDS:
            value = record[field]
            if field in ("step", "buffer_size"):
                cells.append(str(int(value)))
            else:
                cells.append(format_float(value))
        self._fh.write(",".join(cells) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class MetricsFile:
    records: list
    truncated: bool


def read_metrics(path) -> MetricsFile:
    """Read a metrics CSV, tolerating a partial (crash-cut) final line."""
    with open(path, "r", encoding="utf-8") as fh:
        content = fh.read()
    lines = content.split("\n")
    header = lines[0].strip()
    if header != METRICS_HEADER:
        raise ValueError(f"metrics header mismatch:\n  found:    {header!r}\n  expected: {METRICS_HEADER!r}")
    ends_with_newline = content.endswith("\n")
    body = [ln for ln in lines[1:] if ln != ""]
    truncated = False
    if not ends_with_newline and body:
        body = body[:-1]
        truncated = True
    records = []
    for ln in body:
        cells = ln.split(",")
        if len(cells) != len(METRICS_FIELDS):
            raise ValueError(f"malformed metrics line: {ln!r}")
        rec = {}
        for field, cell in zip(METRICS_FIELDS, cells):
            rec[field] = int(cell) if field in ("step", "buffer_size") else float(cell)
        records.append(rec)
    return MetricsFile(records, truncated)


# --------------------------------------------------------------------------
# checkpoints (nnet-format nets + npz arrays + JSON manifest, atomic)
# --------------------------------------------------------------------------

def save_checkpoint(ckpt_root, step, snapshot):
    """Persist a training snapshot under ``ckpt_root/step_<n>``.

    ``snapshot`` holds 'nets' (name -> DenseNet), 'flows' (name ->
    ConditionalFlow), 'arrays' (name -> ndarray), and 'meta' (JSON-safe
    dict, including rng states). The 'latest' pointer is updated last, so a
    crash mid-write leaves the previous checkpoint in effect.
    """
    ckpt_root = os.fspath(ckpt_root)
    os.makedirs(ckpt_root, exist_ok=True)
    name = f"step_{int(step):09d}"
    tmp_dir = os.path.join(ckpt_root, f".writing-{name}")
    final_dir = os.path.join(ckpt_root, name)
    if os.path.exists(tmp_dir):
        _remove_tree(tmp_dir)
    os.makedirs(tmp_dir)
    manifest = {"step": int(step), "nets": [], "flows": [], "meta": snapshot.get("meta", {})}
    for net_name, net in snapshot.get("nets", {}).items():
        nnet.save_net(net, os.path.join(tmp_dir, f"{net_name}.net"))
        manifest["nets"].append(net_name)
    for flow_name, fl in snapshot.get("flows", {}).items():
        flow_mod.save_flow(fl, os.path.join(tmp_dir, f"{flow_name}.flow"))
        manifest["flows"].append(flow_name)
    arrays = snapshot.get("arrays", {})
    if arrays:
        np.savez(os.path.join(tmp_dir, "arrays.npz"), **arrays)
    atomic_write_text(os.path.join(tmp_dir, "manifest.json"),
                      json.dumps(manifest, sort_keys=True) + "\n")
    if os.path.exists(final_dir):
        _remove_tree(final_dir)
    os.replace(tmp_dir, final_dir)
    atomic_write_text(os.path.join(ckpt_root, "latest"), name + "\n")
    return final_dir


def latest_checkpoint(ckpt_root):
    pointer = os.path.join(os.fspath(ckpt_root), "latest")
    if not os.path.exists(pointer):
        return None
    with open(pointer, "r", encoding="utf-8") as fh:
        name = fh.read().strip()
    path = os.path.join(os.fspath(ckpt_root), name)
    return path if os.path.isdir(path) else None


def load_checkpoint(ckpt_dir):
    ckpt_dir = os.fspath(ckpt_dir)
    with open(os.path.join(ckpt_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    snapshot = {"nets": {}, "flows": {}, "arrays": {}, "meta": manifest.get("meta", {}),
                "step": manifest["step"]}
    for net_name in manifest["nets"]:
        net, _ = nnet.load_net(os.path.join(ckpt_dir, f"{net_name}.net"))
        snapshot["nets"][net_name] = net
    for flow_name in manifest["flows"]:
        snapshot["flows"][flow_name] = flow_mod.load_flow(os.path.join(ckpt_dir, f"{flow_name}.flow"))
    arrays_path = os.path.join(ckpt_dir, "arrays.npz")
    if os.path.exists(arrays_path):
        with np.load(arrays_path) as data:
            snapshot["arrays"] = {k: data[k] for k in data.files}
    return snapshot


def _remove_tree(path):
    for root, dirs, files in os.walk(path, topdown=False):
        for f in files:
            os.unlink(os.path.join(root, f))
        for d in dirs:
            os.rmdir(os.path.join(root, d))
    os.rmdir(path)


# --------------------------------------------------------------------------
# SVG learning curves
# --------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 720, 460
_ML, _MR, _MT, _MB = 70, 24, 30, 52


def _fmt(v):
    return f"{v:.2f}"


def render_learning_curve(groups, out_path, title="evaluation return"):
    """Write an SVG with one mean line per group and a +-1 std band across seeds.

    ``groups`` is a list of (label, [metrics paths]); all runs in a group must
    share the same evaluation step grid.
    """
    if not groups:
        raise ValueError("no metrics files to plot")
    series = []
    for label, paths in groups:
        if not paths:
            raise ValueError(f"group {label!r} has no metrics files")
        curves = []
        steps_ref = None
        for p in paths:
            mf = read_metrics(p)
            if not mf.records:
                raise ValueError(f"metrics file {p} has no records")
            steps = np.array([r["step"] for r in mf.records], dtype=float)
            vals = np.array([r["eval_return_mean"] for r in mf.records], dtype=float)
            if steps_ref is None:
                steps_ref = steps
            elif len(steps) != len(steps_ref) or np.any(steps != steps_ref):
                raise ValueError(f"run {p} has a different step grid than its group")
            curves.append(vals)
        curves = np.stack(curves)
        mean = curves.mean(axis=0)
        std = curves.std(axis=0, ddof=1) if curves.shape[0] > 1 else np.zeros_like(mean)
        series.append((label, steps_ref, mean, std))

    x_min = min(s[1].min() for s in series)
    x_max = max(s[1].max() for s in series)
    y_lo = min((s[2] - s[3]).min() for s in series)
    y_hi = max((s[2] + s[3]).max() for s in series)
    pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 1.0
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_span = x_max - x_min if x_max > x_min else 1.0

    def px(x):
        return _ML + (x - x_min) / x_span * (_W - _ML - _MR)

    def py(y):
        return _MT + (y_hi - y) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # axes + ticks
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for i in range(5):
        fx = x_min + i / 4 * x_span
        fy = y_lo + i / 4 * (y_hi - y_lo)
        parts.append(f'<line x1="{_fmt(px(fx))}" y1="{_H - _MB}" x2="{_fmt(px(fx))}" y2="{_H - _MB + 5}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(px(fx))}" y="{_H - _MB + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{fx:.4g}</text>')
        parts.append(f'<line x1="{_ML - 5}" y1="{_fmt(py(fy))}" x2="{_ML}" y2="{_fmt(py(fy))}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{_fmt(py(fy))}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="11">{fy:.4g}</text>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 14}" text-anchor="middle" font-family="sans-serif" font-size="12">step</text>')
    parts.append(f'<text x="16" y="{(_MT + _H - _MB) / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.0f})">return</text>')

    for idx, (label, steps, mean, std) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        upper = [(px(x), py(m + s)) for x, m, s in zip(steps, mean, std)]
        lower = [(px(x), py(m - s)) for x, m, s in zip(steps, mean, std)]
        band_pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower[::-1])
        parts.append(f'<polygon class="band" points="{band_pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        mean_pts = " ".join(f"{_fmt(px(x))},{_fmt(py(m))}" for x, m in zip(steps, mean))
        parts.append(f'<polyline class="mean" points="{mean_pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 16 + 16 * idx
        parts.append(f'<line x1="{_W - _MR - 150}" y1="{ly}" x2="{_W - _MR - 126}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 120}" y="{ly + 4}" font-family="sans-serif" font-size="12">{label}</text>')

    parts.append("</svg>")
    atomic_write_text(out_path, "\n".join(parts) + "\n")
    return out_path
