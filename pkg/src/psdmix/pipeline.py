"""Run configuration and end-to-end orchestration.

A run reads a binned series, optionally picks k with the reversible-jump
sampler, fits the chosen temporal regime, relabels (independent and
informed regimes only), computes diagnostics and summaries and writes
every artifact under one output directory.

Config files are INI style::

    [run]
    grid = data/grid.csv
    counts = data/counts.csv
    output = out
    regime = informed
    k = 3
    iterations = 5000
    burn_in = 2000

    [informed]
    theta = 0.8

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .binned import read_series, rescale_counts
from .errors import ConfigError, NumericalFailure, ParameterError, StageError
from .mixture import ChainConfig, Stage2Hyperparams, read_trace, run_chain, write_trace
from .relabel import write_relabel_report
from .rjmcmc import RJConfig, Stage1Hyperparams, rjmcmc_run, select_k_for_stage2, write_stage1_k
from .rng import RngStream
from .simulate import read_truth
from .summary import (gelman_rubin_table, summarize, write_rhat, write_summary,
                      write_switching_report)
from .temporal import (HierConfig, InformedConfig, PenalisedConfig, relabel_trace,
                       run_hierarchical, run_informed, run_penalised)

log = logging.getLogger(__name__)

REGIMES = ("independent", "informed", "penalised", "hierarchical")
# keys that must be given explicitly for each regime
REQUIRED = {
    "informed": ("theta",),
    "penalised": ("phi",),
    "hierarchical": ("eps_d_mu", "eps_s_phi", "eps_d_lambda", "eps_s_gamma"),
}
# stream tags keep stages independent of each other and of scheduling
_STAGE1, _STAGE2, _JOINT = 1, 2, 3


def _floats(text):
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    grid: Path
    counts: Path
    output: Path
    regime: str = "independent"
    truth: Path | None = None
    stage1: bool = False
    k: int | None = None
    iterations: int = 50_000
    burn_in: int = 20_000
    n_chains: int = 1
    sub_per_bin: int = 3
    seed: int = 0
    rescale_divisor: float = 1.0
    relabel: str = "distance"
    truncation: str = "augment"
    stage1_iterations: int = 200_000
    stage1_burn_in: int = 100_000
    prior: dict = field(default_factory=dict)
    informed: dict = field(default_factory=dict)
    penalised: dict = field(default_factory=dict)
    hierarchical: dict = field(default_factory=dict)
    text: str | None = field(default=None, repr=False)

    # ---- parsing -------------------------------------------------------
    _RUN_TYPES = {
        "grid": Path, "counts": Path, "output": Path, "truth": Path, "regime": str,
        "stage1": _bool, "k": int, "iterations": int, "burn_in": int, "n_chains": int,
        "sub_per_bin": int, "seed": int, "rescale_divisor": float, "relabel": str,
        "truncation": str, "stage1_iterations": int, "stage1_burn_in": int,
    }
    _SECTION_TYPES = {
        "prior": {"xi": _floats, "alpha": _floats, "n": _floats, "v": _floats, "s2": _floats},
        "informed": {"theta": _floats, "n_carry": float, "smooth_mu": _bool,
                     "smooth_sigma": _bool, "smooth_lambda": _bool},
        "penalised": {"phi": float, "max_rejects": int, "exponent": float},
        "hierarchical": {"eps_d_mu": float, "eps_s_phi": float, "eps_d_lambda": float,
                         "eps_s_gamma": float, "proposal_var": float, "proposal": str,
                         "warm_start": int},
    }

    @classmethod
    def from_text(cls, text: str, base_dir=".") -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not cp.has_section("run"):
            raise ConfigError("config needs a [run] section")
        unknown = set(cp.sections()) - {"run"} - set(cls._SECTION_TYPES)
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        kw = {}
        base = Path(base_dir)
        for key, raw in cp.items("run"):
            if key not in cls._RUN_TYPES:
                raise ConfigError(f"unknown key [run] {key}")
            try:
                val = cls._RUN_TYPES[key](raw)
            except ValueError as exc:
                raise ConfigError(f"[run] {key}: {exc}") from exc
            if isinstance(val, Path) and not val.is_absolute():
                val = base / val
            kw[key] = val
        for sec, types in cls._SECTION_TYPES.items():
            if not cp.has_section(sec):
                continue
            d = {}
            for key, raw in cp.items(sec):
                if key not in types:
                    raise ConfigError(f"unknown key [{sec}] {key}")
                try:
                    d[key] = types[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from exc
            kw[sec] = d
        for key in ("grid", "counts", "output"):
            if key not in kw:
                raise ConfigError(f"[run] {key} is required")
        return cls(**kw, text=text).validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, path.parent)

    def validate(self) -> "RunConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, not {self.regime!r}")
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError("need iterations > burn_in >= 0")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be >= 1")
        if self.sub_per_bin < 1:
            raise ConfigError("sub_per_bin must be >= 1")
        if not self.rescale_divisor > 0:
            raise ConfigError("rescale_divisor must be positive")
        if self.relabel not in ("distance", "allocation"):
            raise ConfigError("relabel must be 'distance' or 'allocation'")
        if self.truncation not in ("augment", "ignore"):
            raise ConfigError("truncation must be 'augment' or 'ignore'")
        if self.k is None and not self.stage1:
            raise ConfigError("give k or enable stage1")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.stage1 and not self.stage1_iterations > self.stage1_burn_in >= 0:
            raise ConfigError("need stage1_iterations > stage1_burn_in >= 0")
        for key in REQUIRED.get(self.regime, ()):
            if key not in getattr(self, self.regime):
                raise ConfigError(f"regime {self.regime} needs [{self.regime}] {key}")
        try:
            if self.regime == "informed":
                self.informed_config().validate(self.k)
            elif self.regime == "penalised":
                self.penalised_config().validate()
            elif self.regime == "hierarchical":
                self.hier_config()[0].validate()
        except ParameterError as exc:
            raise ConfigError(f"[{self.regime}] {exc}") from exc
        return self

    # ---- derived objects ------------------------------------------------
    def chain_config(self) -> ChainConfig:
        return ChainConfig(iterations=self.iterations, burn_in=self.burn_in,
                           sub_per_bin=self.sub_per_bin, seed=self.seed,
                           truncation=self.truncation)

    def stage2_hyper(self, k: int) -> Stage2Hyperparams:
        p = self.prior
        xi = p.get("xi")
        if xi is not None and len(xi) != k:
            raise ConfigError(f"[prior] xi has {len(xi)} entries for k={k}")
        h = Stage2Hyperparams.study_defaults(k, xi)
        try:
            for key in ("alpha", "n", "v", "s2"):
                if key in p:
                    vals = np.asarray(p[key], dtype=float)
                    if vals.size not in (1, k):
                        raise ConfigError(f"[prior] {key} has {vals.size} entries for k={k}")
                    setattr(h, key, vals)
            Stage2Hyperparams.__post_init__(h)
        except ParameterError as exc:
            raise ConfigError(f"[prior] {exc}") from exc
        return h

    def informed_config(self) -> InformedConfig:
        d = dict(self.informed)
        th = d.pop("theta")
        return InformedConfig(theta=np.asarray(th) if len(th) > 1 else th[0], **d)

    def penalised_config(self) -> PenalisedConfig:
        return PenalisedConfig(**self.penalised)

    def hier_config(self) -> tuple[HierConfig, int]:
        d = dict(self.hierarchical)
        warm = d.pop("warm_start", 300)
        return HierConfig(**d), warm

    def echo(self) -> str:
        """Config text written to the output directory."""
        if self.text is not None:
            return self.text
        lines = ["[run]"]
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("prior", "informed", "penalised", "hierarchical", "text") or v is None:
                continue
            lines.append(f"{f.name} = {v}")
        for sec in ("prior", "informed", "penalised", "hierarchical"):
            d = getattr(self, sec)
            if d:
                lines.append(f"\n[{sec}]")
                for key, v in d.items():
                    if isinstance(v, list):
                        v = ", ".join(repr(x) for x in v)
                    lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

def _stage(name):
    """Wrap library errors so the caller sees which stage failed."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, typ, exc, tb):
            if exc is None or isinstance(exc, StageError):
                return False
            if isinstance(exc, (ParameterError, NumericalFailure, ConfigError, OSError)):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def _trace_name(t, T):
    return f"trace_t{t:0{max(3, len(str(T)))}d}.csv"


def run_pipeline(cfg: RunConfig, csv_only: bool = False) -> dict:
    """Execute a configured run; returns a dict of written artifact paths.

    Raises
    ------
    StageError
        Tagged with the failing stage; artifacts written so far are kept.
    """
    out = Path(cfg.output)
    artifacts = {}
    with _stage("io"):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.echo(), encoding="utf-8")
        artifacts["config"] = out / "config.ini"
        series = read_series(cfg.grid, cfg.counts)
        series = rescale_counts(series, cfg.rescale_divisor)
        truth = read_truth(cfg.truth, series.grid, series.times) if cfg.truth else None
    root = RngStream(cfg.seed)

    k = cfg.k
    if cfg.stage1:
        with _stage("stage1"):
            rj_cfg = RJConfig(iterations=cfg.stage1_iterations, burn_in=cfg.stage1_burn_in,
                              seed=cfg.seed, sub_per_bin=cfg.sub_per_bin)
            hyper1 = Stage1Hyperparams.from_grid(series.grid)
            posts = [rjmcmc_run(series.counts[t], series.grid, hyper1, rj_cfg,
                                rng=root.child(_STAGE1, t))[0] for t in range(series.T)]
            artifacts["stage1"] = write_stage1_k(posts, out / "stage1_k.csv", hyper1.k_max)
            selected = select_k_for_stage2(posts)
            log.info("stage 1 selects k=%d", selected)
            if k is None:
                k = selected
    with _stage("config"):
        hyper = cfg.stage2_hyper(k)
        chain = cfg.chain_config()

    with _stage("stage2"):
        chains, reports = [], []
        extras = {}
        for c in range(cfg.n_chains):
            traces, perms = _run_regime(cfg, series, hyper, chain, root, c, extras)
            chains.append(traces)
            reports.append(perms)

    with _stage("relabel"):
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        pooled = []
        for t in range(series.T):
            tr = chains[0][t]
            for ch in chains[1:]:
                tr = tr.concat(ch[t])
            if cfg.n_chains > 1 and cfg.regime in ("independent", "informed"):
                # chains were relabelled separately; bring them onto one labelling
                tr, _ = relabel_trace(tr, cfg.relabel, series.counts[t], series.grid)
            pooled.append(tr)
        if cfg.regime in ("independent", "informed"):
            rows = [(t + 1, cfg.relabel,
                     float(np.mean([r[t].nonidentity_fraction for r in reports])))
                    for t in range(series.T)]
            artifacts["relabel"] = write_relabel_report(rows, out / "relabel_report.csv")
        else:
            artifacts["switching"] = write_switching_report(pooled, out / "switching_report.csv")

    with _stage("diagnostics"):
        diag = {"regime": cfg.regime, "k": k, "T": series.T, "n_chains": cfg.n_chains,
                "sampler_warnings": int(sum(tr.warnings for tr in pooled))}
        diag.update(extras)
        if cfg.n_chains > 1:
            split = [[tr.split(cfg.n_chains)[c] for tr in pooled] for c in range(cfg.n_chains)]
            rhat = gelman_rubin_table(split)
            diag["converged"] = write_rhat(rhat, out / "rhat.csv")
            diag["max_rhat"] = f"{float(np.max(rhat)):.6f}"
            artifacts["rhat"] = out / "rhat.csv"
        with open(out / "diagnostics.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("key,value\n")
            for key, v in diag.items():
                fh.write(f"{key},{v}\n")
        artifacts["diagnostics"] = out / "diagnostics.csv"

    with _stage("summary"):
        for t, tr in enumerate(pooled, 1):
            write_trace(tr, tdir / _trace_name(t, series.T))
        artifacts["traces"] = tdir
        summary = summarize(pooled, N=series.sizes, times=series.times)
        artifacts["summary"] = write_summary(summary, out / "summary.csv")

    if not csv_only:
        with _stage("plots"):
            from .plots import emit_plots

            artifacts["plots"] = emit_plots(summary, out / "plots", truth)
    return artifacts


def _run_regime(cfg, series, hyper, chain, root, c, extras):
    """One chain of the configured regime: (list of T traces, list of PermutationSeries)."""
    if cfg.regime == "independent":
        traces, perms = [], []
        for t in range(series.T):
            tr = run_chain(series.counts[t], series.grid, hyper, chain,
                           rng=root.child(_STAGE2, c, t))
            tr, p = relabel_trace(tr, cfg.relabel, series.counts[t], series.grid)
            traces.append(tr)
            perms.append(p)
        return traces, perms
    if cfg.regime == "informed":
        return run_informed(series, hyper, cfg.informed_config(), chain,
                            rng=root.child(_STAGE2, c), relabel=cfg.relabel)
    if cfg.regime == "penalised":
        jt = run_penalised(series, hyper, cfg.penalised_config(), chain,
                           rng=root.child(_JOINT, c))
        extras[f"max_reject_events_chain{c + 1}"] = jt.max_reject_events
        return jt.traces, None
    hcfg, warm = cfg.hier_config()
    t1 = run_chain(series.counts[0], series.grid, hyper, chain, rng=root.child(_STAGE2, c, 0))
    t1, _ = relabel_trace(t1, "distance")
    jt = run_hierarchical(series, hyper, hcfg, chain, t1, rng=root.child(_JOINT, c),
                          warm_start=warm)
    extras[f"mean_w_acceptance_chain{c + 1}"] = f"{float(np.mean(jt.w_acceptance)):.6f}"
    return jt.traces, None


def load_traces(directory) -> list:
    """Read ``trace_t*.csv`` files in time order."""
    paths = sorted(Path(directory).glob("trace_t*.csv"))
    if not paths:
        raise FileNotFoundError(f"no trace_t*.csv files in {directory}")
    return [read_trace(p) for p in paths]
