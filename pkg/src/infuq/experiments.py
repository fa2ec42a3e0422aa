"""Named experiments. Each returns tables ready for CSV plus a summary dict for the manifest."""
from __future__ import annotations

import csv
import math
import time
import timeit
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics, kernels, mfvi, nets, nlm
from .architecture import Architecture
from .config import ExperimentConfig
from .gp import Dataset, gp_posterior
from .kernels import RBFParams, nngp_kernel, ntk_kernel, rbf_matrices
from .linalg_stats import SeededRng


@dataclass
class Table:
    columns: list[str]
    rows: list[list]


@dataclass
class ExperimentResult:
    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    jitters: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)


class _Stages:
    def __init__(self, result: ExperimentResult):
        self.result = result

    def __call__(self, name: str):
        result = self.result

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                result.stage_seconds[name] = time.perf_counter() - self.t0

        return _Timer()


# --- datasets ----------------------------------------------------------------


def toy_dataset(n: int, seed: int, low=-2.0, high=2.0, gap=(-0.5, 0.5), noise=0.0, test=None) -> Dataset:
    """``y = sin(2x)`` at ``n`` points spread over ``[low, high]`` minus the gap.

    The usable length is cut into ``n`` equal strata and each point sits at its
    stratum centre plus a seeded offset of at most a quarter stratum, so no two
    points come closer than half a stratum (keeps noiseless Gram matrices usable).
    """
    gen = SeededRng(seed).stream(1).generator()
    gap_lo = max(gap[0], low)
    gap_width = max(0.0, min(gap[1], high) - gap_lo)
    width = (high - low) - gap_width
    stratum = width / n
    u = (np.arange(n) + 0.5 + gen.uniform(-0.25, 0.25, size=n)) * stratum
    x = low + u
    x = np.where(x >= gap_lo, x + gap_width, x)
    y = np.sin(2.0 * x)
    if noise > 0:
        y = y + noise * gen.standard_normal(n)
    if test is None:
        test = np.linspace(-3.0, 3.0, 41)
    return Dataset(x[:, None], y, np.asarray(test, dtype=np.float64).reshape(len(test), -1))


def _as_points(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    grid = np.linspace(cfg.test_low, cfg.test_high, cfg.test_n)
    if cfg.dataset == "toy":
        return toy_dataset(cfg.toy_n, cfg.seed, cfg.toy_low, cfg.toy_high, (cfg.gap_low, cfg.gap_high),
                           cfg.toy_noise, grid)
    if cfg.dataset == "inline":
        train_x = _as_points(cfg.train_x)
        test = _as_points(cfg.test_x) if cfg.test_x else grid[:, None]
        return Dataset(train_x, np.asarray(cfg.train_y, dtype=np.float64), test)
    # csv: columns x..., y ; a 'split' column with train/test is optional
    with open(cfg.csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{cfg.csv_path} has no rows")
    xcols = [c for c in reader.fieldnames if c.startswith("x")]
    train = [r for r in rows if r.get("split", "train") == "train"]
    test = [r for r in rows if r.get("split", "train") == "test"]
    tx = np.array([[float(r[c]) for c in xcols] for r in train])
    ty = np.array([float(r["y"]) for r in train])
    sx = np.array([[float(r[c]) for c in xcols] for r in test]) if test else grid[:, None]
    return Dataset(tx, ty, sx)


def architecture(cfg: ExperimentConfig, data: Dataset, width=None) -> Architecture:
    w = cfg.width if width is None else width
    return Architecture(data.input_dim, (w,) * cfg.depth, cfg.activation, cfg.sigma_w, cfg.sigma_b)


def _x0(data: Dataset, i: int) -> float:
    return float(data.test_x[i, 0])


# --- experiments -----------------------------------------------------------


def kernel_convergence(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    xs = data.train_x
    base = SeededRng(cfg.seed)
    rows, summary_rows = [], []
    with stage("analytic"):
        analytic = kernels.nngp_gram(architecture(cfg, data, None), xs)
    with stage("monte_carlo"):
        for i, width in enumerate(cfg.widths):
            arch = architecture(cfg, data, width)
            errs = []
            for r in range(cfg.repetitions):
                est, se = kernels.empirical_nngp(arch, xs, cfg.samples, base.stream(i).stream(r))
                err = kernels.max_entry_error(est.train_train, analytic)
                z = float(np.max(kernels.z_scores(est.train_train, analytic, se)))
                rows.append([width, r, err, z])
                errs.append(err)
            summary_rows.append([width, float(np.median(errs))])
    res.tables["kernel_convergence.csv"] = Table(["width", "repetition", "max_abs_error", "max_z"], rows)
    res.tables["kernel_convergence_summary.csv"] = Table(["width", "median_max_abs_error"], summary_rows)
    res.summary["median_errors"] = {str(w): e for w, e in summary_rows}
    return res


def posterior_compare(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    arch = architecture(cfg, data, None)
    with stage("kernels"):
        k = nngp_kernel(arch, data.train_x, data.test_x)
        theta = ntk_kernel(arch, data.train_x, data.test_x)
    with stage("posteriors"):
        nngp = dynamics.nngp_posterior(k, data, cfg.noise)
        ntkgp = dynamics.ntkgp_moments(theta, data)
        de = dynamics.de_gp_moments(k, theta, data)
    res.jitters = {"nngp": nngp.jitter, "ntkgp": ntkgp.jitter, "de": de.jitter}
    rows = [
        [_x0(data, i), nngp.mean[i], nngp.cov[i, i], ntkgp.mean[i], ntkgp.cov[i, i], de.mean[i], de.cov[i, i]]
        for i in range(data.n_test)
    ]
    res.tables["posterior_compare.csv"] = Table(
        ["x", "mean_nngp", "var_nngp", "mean_ntkgp", "var_ntkgp", "mean_de", "var_de"], rows
    )
    res.summary["de_vs_nngp_rel_frobenius"] = dynamics.relative_frobenius(de.cov, nngp.cov)
    return res


def trajectory(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    arch = architecture(cfg, data)
    params = nets.init(arch, SeededRng(cfg.seed).stream(0))
    theta0 = nets.empirical_ntk(arch, params, data.train_x).train_train
    f0 = nets.forward(arch, params, data.train_x)
    tcfg = nets.TrainingConfig(cfg.learning_rate, cfg.steps, nets.TrainingMode.FULL, cfg.record_every,
                               cfg.loss_tol, record_predictions=True)
    with stage("train"):
        _, trace = nets.train(arch, params, data, tcfg)
    rate = float(nets.function_space_rate(trace.learning_rate, data.n_train))
    rows = []
    with stage("analytic"):
        for step, value, out in zip(trace.steps, trace.loss, trace.train_predictions):
            lin = dynamics.analytic_trajectory(theta0, f0, data.train_y, rate, float(step))
            rows.append([step, rate * step, float(value), float(np.mean(np.square(lin - data.train_y))),
                         float(np.max(np.abs(lin - out)))])
    res.tables["trajectory.csv"] = Table(["step", "scaled_time", "loss_network", "loss_linearized",
                                          "max_abs_diff"], rows)
    res.summary.update(learning_rate=float(trace.learning_rate), steps_taken=trace.steps_taken,
                       converged=trace.converged)
    return res


def ensemble_compare(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    arch = architecture(cfg, data)
    rows = []
    for m_i, mode in enumerate(cfg.modes):
        tcfg = nets.TrainingConfig(cfg.learning_rate, cfg.steps, mode, max(cfg.steps, 1), cfg.loss_tol)
        with stage(f"ensemble_{mode}"):
            rep = dynamics.run_ensemble(arch, data, tcfg, cfg.members, SeededRng(cfg.seed).stream(m_i))
        ref = rep.reference
        for i in range(data.n_test):
            rows.append([mode, i, _x0(data, i), rep.mean[i], rep.cov[i, i],
                         ref.mean[i] if ref else math.nan, ref.cov[i, i] if ref else math.nan,
                         float(rep.z_mean[i]) if ref else math.nan, float(rep.z_cov[i, i]) if ref else math.nan])
        res.summary[mode] = {
            "max_z": rep.max_z if ref else None,
            "rel_frobenius": rep.rel_frobenius,
            "steps_taken": rep.steps_taken,
            "converged": rep.converged,
            "max_final_loss": float(np.max(rep.final_loss)),
        }
        if ref:
            res.jitters[mode] = ref.jitter
    res.tables["ensemble_compare.csv"] = Table(
        ["mode", "point", "x", "emp_mean", "emp_var", "ref_mean", "ref_var", "z_mean", "z_var"], rows
    )
    return res


def nlm_compare(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    arch = architecture(cfg, data)
    ncfg = nlm.NLMConfig(cfg.alpha, cfg.beta, nets.TrainingConfig(cfg.learning_rate, cfg.steps,
                                                                  nets.TrainingMode.FULL, max(cfg.steps, 1),
                                                                  cfg.loss_tol))
    with stage("nlm"):
        fit = nlm.nlm_fit(arch, data, ncfg, SeededRng(cfg.seed).stream(0))
        pred = nlm.nlm_predictive(fit, data.test_x)
    with stage("gp"):
        noise = 1.0 / cfg.alpha
        nngp = dynamics.nngp_posterior(nngp_kernel(arch.with_width(None), data.train_x, data.test_x), data, noise)
        rbf = gp_posterior(rbf_matrices(data.train_x, data.test_x, RBFParams(cfg.rbf_sigma, cfg.rbf_length)),
                           data, noise)
    res.jitters = {"nngp": nngp.jitter, "rbf": rbf.jitter}
    rows = [[_x0(data, i), pred.mean[i], pred.cov[i, i], nngp.mean[i], nngp.cov[i, i], rbf.mean[i], rbf.cov[i, i]]
            for i in range(data.n_test)]
    res.tables["nlm_compare.csv"] = Table(
        ["x", "nlm_mean", "nlm_var", "nngp_mean", "nngp_var", "rbf_mean", "rbf_var"], rows
    )
    return res


def mfvi_collapse(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    data = load_dataset(cfg)
    with stage("sweep"):
        table = mfvi.collapse_experiment(
            cfg.widths, data, cfg.prior_std, cfg.mfvi_steps, cfg.repetitions, SeededRng(cfg.seed),
            activation=cfg.activation, sigma_w=cfg.sigma_w, sigma_b=cfg.sigma_b, learning_rate=cfg.mfvi_lr,
            mc_samples=cfg.mc_samples, obs_std=cfg.obs_std, predictive_samples=cfg.predictive_samples,
        )
    res.tables["mfvi_collapse.csv"] = Table(["width", "repetition", "abs_predictive_mean"],
                                            [list(r) for r in table.rows])
    res.tables["mfvi_collapse_summary.csv"] = Table(
        ["width", "median_abs_predictive_mean", "nngp_abs_mean"],
        [[w, m, table.nngp_abs_mean] for w, m in zip(table.widths, table.medians)],
    )
    res.summary.update(spearman=table.spearman, nngp_abs_mean=table.nngp_abs_mean)
    return res


def gp_solve_seconds(n: int, repeats: int, seed: int) -> float:
    """Seconds per RBF GP posterior with ``n`` training and ``n`` test points.

    Each of ``repeats`` measurements loops the solve long enough (timeit's
    autorange, at least 0.2 s) to swamp timer jitter; the best is returned.
    """
    gen = SeededRng(seed).stream(n).generator()
    x = np.sort(gen.uniform(-5.0, 5.0, size=n))
    test = gen.uniform(-5.0, 5.0, size=n)
    data = Dataset(x[:, None], np.sin(x), test[:, None])
    k = rbf_matrices(data.train_x, data.test_x, RBFParams(1.0, 0.5))
    timer = timeit.Timer(lambda: gp_posterior(k, data, noise=1e-6))
    best = math.inf
    for _ in range(repeats):
        loops, total = timer.autorange()
        best = min(best, total / loops)
    return best


def loglog_slope(sizes, seconds) -> float:
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def timing_scaling(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult()
    stage = _Stages(res)
    with stage("timing"):
        secs = [gp_solve_seconds(n, cfg.timing_repeats, cfg.seed) for n in cfg.sizes]
    slope = loglog_slope(cfg.sizes, secs)
    res.tables["timing_scaling.csv"] = Table(["n_train", "seconds"], [[n, s] for n, s in zip(cfg.sizes, secs)])
    res.summary["loglog_slope"] = slope
    return res


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "kernel-convergence": kernel_convergence,
    "posterior-compare": posterior_compare,
    "trajectory": trajectory,
    "ensemble-compare": ensemble_compare,
    "nlm-compare": nlm_compare,
    "mfvi-collapse": mfvi_collapse,
    "timing-scaling": timing_scaling,
}

#: Experiments whose tables contain wall-clock measurements and so cannot be byte-reproducible.
TIMING_EXPERIMENTS = ("timing-scaling",)
