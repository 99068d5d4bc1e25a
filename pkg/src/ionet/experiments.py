"""Experiment configs and the gen-data / train / eval / reproduce pipeline.

Every command reads and writes only inside its output directory::

    out/config.ini             resolved configuration
    out/data/train.jsonl       input functions (and test.jsonl)
    out/data/test_labels.bin   reference values at the evaluation points
    out/data/train_labels.bin  training labels (data-driven regimes, 1D only)
    out/history.csv            loss components per iteration
    out/model.ckpt             final parameters; checkpoint.ckpt while training
    out/metrics.csv            relative L2 error per test function
    out/summary.csv            mean, std and acceptance verdict
    out/pointwise.csv          reference, prediction and error for a few functions
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import problems
from .fields import read_dataset, write_dataset
from .losses import ConfigError, LossWeights
from .networks import ModelConfig, build_model
from .solvers import exact_solution, mean_relative_l2, solve_interface_1d
from .training import (Labels, TrainConfig, load_checkpoint, read_history, save_checkpoint,
                       train, write_history)

# experiment id -> registered desk-scale config
DEFAULT_CONFIGS = {
    "ex1": "ex1-pi-ionet",
    "ex1-3sub": "ex1-3sub-pi-ionet",
    "ex2": "ex2-pi-ionet",
    "ex3": "ex3-pi-ionet",
    "ex6": "ex6-pi-ionet",
}


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def _fmt_list(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


@dataclass
class ExperimentConfig:
    name: str
    experiment: str
    model: str = "ionet"
    regime: str = "pi"
    threshold: float | None = None
    n_train: int = 1000
    n_test: int = 100
    sensors: int | None = None
    data_seed: int = 0
    scales: list | None = None
    offsets: list | None = None
    grid_n: int = 1000
    mc_points: int = 10_000
    depth: int = 5
    width: int = 100
    latent: int | None = None
    activation: str = "tanh"
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.experiment not in problems.EXPERIMENT_IDS:
            raise UsageError(f"unknown experiment id '{self.experiment}'")
        if self.model not in ("ionet", "deeponet"):
            raise ConfigError(f"unknown model kind '{self.model}'")
        if self.regime != self.train.regime:
            self.train.regime = self.regime
        if self.regime in ("dd", "composite") and self.experiment in ("ex3", "ex6"):
            raise ConfigError(f"{self.experiment} has no reference solver; only the pi regime is supported")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("dataset sizes must be positive")

    # INI round trip ---------------------------------------------------------
    @classmethod
    def from_ini(cls, text: str, overrides: dict | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        for key, value in (overrides or {}).items():
            if "." not in key:
                raise UsageError(f"override '{key}' must look like section.key")
            sec, k = key.split(".", 1)
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, k, str(value))
        e, d, m, t, w = (cp[s] if cp.has_section(s) else {} for s in
                         ("experiment", "data", "model", "train", "loss"))
        regime = e.get("regime", "pi")
        tkw = {}
        for f in fields(TrainConfig):
            if f.name in t and f.name != "regime":
                raw = t[f.name]
                tkw[f.name] = (raw.lower() in ("1", "true", "yes", "on")) if f.type in (bool, "bool") \
                    else type(f.default)(float(raw)) if isinstance(f.default, (int, float)) else raw
        tcfg = TrainConfig(regime=regime, **tkw)
        base = LossWeights.regime(regime)
        weights = LossWeights(
            residual=_floats(w["residual"]) if "residual" in w else [1.0, 1.0],
            interface=float(w.get("interface", 10.0)), boundary=float(w.get("boundary", 100.0)),
            physics=float(w.get("physics", base.physics)), data=float(w.get("data", base.data)),
            fd_epsilon=float(w.get("fd_epsilon", 1e-5)))
        thr = e.get("threshold", "")
        return cls(
            name=e.get("name", "unnamed"), experiment=e.get("id", ""), model=e.get("model", "ionet"),
            regime=regime, threshold=float(thr) if thr not in ("", "none") else None,
            n_train=int(d.get("n_train", 1000)), n_test=int(d.get("n_test", 100)),
            sensors=int(d["sensors"]) if d.get("sensors", "") not in ("", "none") else None,
            data_seed=int(d.get("seed", 0)),
            scales=_floats(d["scales"]) if d.get("scales", "") not in ("", "none") else None,
            offsets=_floats(d["offsets"]) if d.get("offsets", "") not in ("", "none") else None,
            grid_n=int(d.get("grid_n", 1000)), mc_points=int(d.get("mc_points", 10_000)),
            depth=int(m.get("depth", 5)), width=int(m.get("width", 100)),
            latent=int(m["latent"]) if m.get("latent", "") not in ("", "none") else None,
            activation=m.get("activation", "tanh"), train=tcfg, weights=weights)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        none = lambda v: "none" if v is None else v
        cp["experiment"] = {"name": self.name, "id": self.experiment, "model": self.model,
                            "regime": self.regime, "threshold": repr(self.threshold) if self.threshold is not None else "none"}
        cp["data"] = {"n_train": str(self.n_train), "n_test": str(self.n_test),
                      "sensors": str(none(self.sensors)), "seed": str(self.data_seed),
                      "scales": _fmt_list(self.scales) if self.scales is not None else "none",
                      "offsets": _fmt_list(self.offsets) if self.offsets is not None else "none",
                      "grid_n": str(self.grid_n), "mc_points": str(self.mc_points)}
        cp["model"] = {"depth": str(self.depth), "width": str(self.width),
                       "latent": str(none(self.latent)), "activation": self.activation}
        cp["train"] = {f.name: (repr(getattr(self.train, f.name)) if isinstance(getattr(self.train, f.name), float)
                                else str(getattr(self.train, f.name)))
                       for f in fields(TrainConfig) if f.name != "regime"}
        w = self.weights
        cp["loss"] = {"residual": _fmt_list(w.residual), "interface": repr(float(w.interface)),
                      "boundary": repr(float(w.boundary)), "physics": repr(float(w.physics)),
                      "data": repr(float(w.data)), "fd_epsilon": repr(float(w.fd_epsilon))}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def model_config(self, branch_sizes, geom) -> ModelConfig:
        return ModelConfig(kind=self.model, branch_sizes=list(branch_sizes), n_subdomains=geom.n_subdomains,
                           dim=geom.dim, depth=self.depth, width=self.width, latent=self.latent,
                           activation=self.activation, trunk_box=list(geom.bounding_box()))


def registered_configs() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("ionet.configs").iterdir() if p.name.endswith(".ini"))


def load_config(name_or_path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Load a config file, a registered config name, or an experiment id."""
    if os.path.isfile(name_or_path):
        text = Path(name_or_path).read_text()
    else:
        name = DEFAULT_CONFIGS.get(name_or_path, name_or_path)
        res = resources.files("ionet.configs") / f"{name}.ini"
        if not res.is_file():
            raise UsageError(f"unknown experiment or config '{name_or_path}'; registered: "
                             f"{', '.join(registered_configs())}")
        text = res.read_text()
    return ExperimentConfig.from_ini(text, overrides)


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def _paths(out) -> dict:
    out = Path(out)
    return {"out": out, "data": out / "data", "config": out / "config.ini",
            "train": out / "data" / "train.jsonl", "test": out / "data" / "test.jsonl",
            "train_labels": out / "data" / "train_labels.bin",
            "test_labels": out / "data" / "test_labels.bin",
            "history": out / "history.csv", "model": out / "model.ckpt",
            "checkpoint": out / "checkpoint.ckpt", "metrics": out / "metrics.csv",
            "summary": out / "summary.csv", "pointwise": out / "pointwise.csv",
            "figures": out / "figures"}


def _save_labels(path, labels: Labels, meta: dict) -> None:
    ad.save_arrays(path, {"points": labels.points, "sides": labels.sides.astype(np.float64),
                          "values": labels.values}, {k: str(v) for k, v in meta.items()})


def _load_labels(path) -> Labels:
    arrays, _ = ad.load_arrays(path)
    pts = arrays["points"]
    return Labels(pts.reshape(len(pts), -1), arrays["sides"].astype(int).reshape(-1),
                  arrays["values"].reshape(-1, len(pts)))


def reference_values(cfg: ExperimentConfig, geom, fs, points, sides) -> np.ndarray:
    """(N, P) references: the 1D solver or the closed-form solution."""
    n = len(fs)
    if geom.kind == "interval":
        problem = problems.build_problem(cfg.experiment, geom, fs)
        grid = np.linspace(geom.lo, geom.hi, cfg.grid_n + 1)
        if points.shape[0] != len(grid) or not np.allclose(points[:, 0], grid):
            raise ConfigError("1D references live on the solver mesh nodes")
        return np.array([solve_interface_1d(problem, cfg.grid_n, i).grid_values("inner") for i in range(n)])
    exact = problems.EXACT_PARAMS[cfg.experiment]
    params = fs.channels["f"].params
    if not np.allclose(params, exact[None]):
        raise ConfigError("closed-form references exist only at the distinguished parameters")
    row = np.empty(len(points))
    for r in (1, 2):
        mask = sides == r
        row[mask] = exact_solution(cfg.experiment, points[mask], region=r)
    return np.repeat(row[None], n, axis=0)


def _eval_points(cfg, geom):
    return problems.evaluation_points(cfg.experiment, geom, cfg.grid_n, cfg.mc_points, cfg.data_seed)


def cmd_gen_data(cfg: ExperimentConfig, out) -> dict:
    p = _paths(out)
    p["data"].mkdir(parents=True, exist_ok=True)
    p["config"].write_text(cfg.to_ini())
    written = {}
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        geom, fs, meta = problems.build_functions(cfg.experiment, count, cfg.data_seed, split,
                                                  cfg.sensors, cfg.scales, cfg.offsets)
        write_dataset(p[split], fs, meta)
        written[split] = (geom, fs)
    geom, fs_test = written["test"]
    pts, sides = _eval_points(cfg, geom)
    meta = {"experiment": cfg.experiment, "split": "test"}
    _save_labels(p["test_labels"], Labels(pts, sides, reference_values(cfg, geom, fs_test, pts, sides)), meta)
    if cfg.weights.data > 0:
        geom, fs_train = written["train"]
        _save_labels(p["train_labels"],
                     Labels(pts, sides, reference_values(cfg, geom, fs_train, pts, sides)),
                     {"experiment": cfg.experiment, "split": "train"})
    return p


def _load_split(cfg, p, split):
    fs, _ = read_dataset(p[split], problems.fixed_channels(cfg.experiment))
    return problems.make_geometry_for(cfg.experiment), fs


def cmd_train(cfg: ExperimentConfig, out, resume: bool = False, log=None):
    p = _paths(out)
    if not p["train"].exists():
        raise UsageError(f"no dataset in {p['data']}; run gen-data first")
    geom, fs = _load_split(cfg, p, "train")
    problem = problems.build_problem(cfg.experiment, geom, fs)
    labels = _load_labels(p["train_labels"]) if cfg.weights.data > 0 else None
    start, state, history = 0, None, []
    if resume and p["checkpoint"].exists():
        model, state, start, _ = load_checkpoint(p["checkpoint"])
        if p["history"].exists():
            history = [r for r in read_history(p["history"]) if r["iteration"] < start]
    else:
        mcfg = cfg.model_config(fs.branch_sizes(), geom)
        model = build_model(mcfg, cfg.train.seed)
    done = list(history)
    flush = lambda rows: write_history(p["history"], done + rows, geom.n_subdomains)
    model, rows, state = train(model, problem, fs, cfg.train, cfg.weights, labels, state, start,
                               checkpoint_path=p["checkpoint"], log=log, on_checkpoint=flush)
    history = done + rows
    write_history(p["history"], history, geom.n_subdomains)
    save_checkpoint(p["model"], model, state, cfg.train.epochs, {"config": cfg.name})
    return model, history


def cmd_eval(cfg: ExperimentConfig, out, checkpoint=None, figures: bool = True) -> dict:
    p = _paths(out)
    model, _, _, _ = load_checkpoint(checkpoint or p["model"])
    geom, fs = _load_split(cfg, p, "test")
    labels = _load_labels(p["test_labels"])
    pred = model.predict(fs.branch_inputs(np.arange(len(fs))), labels.points, labels.sides)
    mean, std, per = mean_relative_l2(pred, labels.values)
    passed = None if cfg.threshold is None else bool(mean < cfg.threshold)
    with open(p["metrics"], "w") as fh:
        fh.write("function,rel_l2\n")
        for i, e in enumerate(per):
            fh.write(f"{i},{float(e)!r}\n")
    with open(p["summary"], "w") as fh:
        fh.write("config,experiment,model,regime,n_test,mean_rel_l2,std_rel_l2,threshold,passed\n")
        fh.write(f"{cfg.name},{cfg.experiment},{cfg.model},{cfg.regime},{len(per)},{float(mean)!r},{float(std)!r},"
                 f"{'' if cfg.threshold is None else repr(cfg.threshold)},{'' if passed is None else passed}\n")
    shown = min(5, len(fs))
    with open(p["pointwise"], "w") as fh:
        dims = labels.points.shape[1]
        fh.write("function," + ",".join(f"x{j + 1}" for j in range(dims)) + ",side,reference,prediction,abs_error\n")
        for i in range(shown):
            for x, s, r, q in zip(labels.points, labels.sides, labels.values[i], pred[i]):
                fh.write(f"{i}," + ",".join(repr(float(c)) for c in x)
                         + f",{int(s)},{float(r)!r},{float(q)!r},{abs(float(r - q))!r}\n")
    result = {"mean": mean, "std": std, "per_function": per, "passed": passed, "paths": p}
    if figures:
        from .report import render_figures
        render_figures(cfg, geom, fs, labels, pred, per, p)
    return result


def cmd_reproduce(cfg: ExperimentConfig, out, log=None, figures: bool = True) -> dict:
    cmd_gen_data(cfg, out)
    cmd_train(cfg, out, log=log)
    return cmd_eval(cfg, out, figures=figures)
