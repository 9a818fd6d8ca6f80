"""Flat key=value run configuration with strict key checking."""

import hashlib
import json
import time
from pathlib import Path

from .errors import ConfigError

# every known key with its default (the default's type drives coercion)
DEFAULTS = {
    "seed": 0,
    "dataset": "synth",               # synth | idx

    "synth.family": "bars",
    "synth.classes": 3,
    "synth.size": 12,
    "synth.noise": 0.1,
    "synth.channels": 1,
    "synth.train": 600,
    "synth.test": 300,

    "idx.train_images": "",
    "idx.train_labels": "",
    "idx.test_images": "",
    "idx.test_labels": "",
    "idx.limit": 0,                   # 0 = no limit

    "model.kind": "mlp",              # mlp | cnn

    "train.epochs": 30,
    "train.batch": 64,
    "train.lr": 1e-3,
    "train.optimizer": "adam",

    "gen.z_dim": 64,
    "gen.cond_mode": "hidden",        # hot | hidden
    "gen.cond_dim": 32,
    "gen.dropout": 0.5,
    "gen.hidden": "128,256",

    "inv.alpha": 1.0,
    "inv.beta": 1.0,
    "inv.gamma": 0.5,
    "inv.delta": 0.1,
    "inv.batch": 32,
    "inv.steps": 3000,
    "inv.lr": 2e-3,
    "inv.soften": 0.1,
    "inv.target_accuracy": 0.95,
    "inv.eval_every": 200,
    "inv.eval_samples": 256,

    "recon.alpha_pert": 1.0,
    "recon.beta_pert": 1.0,
    "recon.gamma": 0.25,
    "recon.eta_var": 0.1,
    "recon.eta_pix": 1.0,
    "recon.eta_grad": 0.01,
    "recon.eps_pert": 0.05,
    "recon.steps": 600,
    "recon.samples": 32,
    "recon.cond_mode": "hot",         # hot conditioning elicits confident matches

    "ood.cycles": 5,
    "ood.epochs": 12,
    "ood.garbage_init": 100,
    "ood.budget": 0,                  # 0 = one ID class's training count
    "ood.capacity_factor": 4,
    "ood.inv_steps": 800,
    "ood.probes": 200,

    "eval.pairs": "",                 # name=checkpoint[,name=checkpoint...]
}


def _coerce(key, raw, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected boolean for {key}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(path=None, overrides=None):
    """Read `key = value` lines; every problem is reported in one pass."""
    values = dict(DEFAULTS)
    problems = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                problems.append(f"line {lineno}: not a key = value pair: {line.strip()!r}")
                continue
            key, raw = (s.strip() for s in stripped.split("=", 1))
            if key not in DEFAULTS:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            try:
                values[key] = _coerce(key, raw, DEFAULTS[key])
            except ValueError:
                problems.append(f"line {lineno}: bad value for {key!r}: {raw!r}")
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            problems.append(f"override: unknown key {key!r}")
        else:
            values[key] = val
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return values


def write_resolved(values, out_dir):
    """Materialize every default into the run directory."""
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    path = Path(out_dir) / "resolved.conf"
    path.write_text("\n".join(lines) + "\n")
    return path


def derive_seed(root_seed, phase):
    """Phase-isolated stream: hash of (root seed, phase name)."""
    digest = hashlib.sha256(f"{root_seed}:{phase}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class ManifestWriter:
    def __init__(self, out_dir, values):
        self.out_dir = Path(out_dir)
        self.values = values
        self.artifacts = {}
        self.timings = {}
        self._t0 = None
        self._phase = None

    def start(self, phase):
        self._phase = phase
        self._t0 = time.monotonic()

    def stop(self):
        if self._phase is not None:
            self.timings[self._phase] = time.monotonic() - self._t0
            self._phase = None

    def record(self, path):
        path = Path(path)
        self.artifacts[path.name] = file_sha256(path)
        return path

    def write(self, extra=None):
        manifest = {
            "format_version": 1,
            "seed": self.values["seed"],
            "config": self.values,
            "artifacts": self.artifacts,
            "wall_clock_seconds": self.timings,
        }
        if extra:
            manifest.update(extra)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path
