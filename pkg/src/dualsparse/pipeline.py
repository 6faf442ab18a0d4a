"""Group -> sparse decomposition -> frequency split -> aggregate.

Two dictionary scopes are available. ``global`` learns one dictionary from
the patches of the whole image, codes every patch once and splits once;
``per_group`` learns and splits a separate dictionary inside every group.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import digamma, polygamma

from dualsparse.errors import ContractError, DegenerateDataError, DimensionError
from dualsparse.grouping import GroupingConfig, PatchIndex, form_group, reference_indices
from dualsparse.image import as_array
from dualsparse.patches import PixelAccumulator, extract_patches, sparsity_weights
from dualsparse.sparse import SparseConfig, UnderdeterminedWarning, encode_all, ksvd_learn, reconstruct
from dualsparse.subdict import TypicalRegimeWarning, compute_split, principal_reconstruct, split

logger = logging.getLogger(__name__)

MODES = ("additive", "speckle")
SCOPES = ("global", "per_group")
WEIGHTINGS = ("sparsity", "uniform")


@dataclass
class DenoiseConfig:
    """Full configuration of a denoising run.

    ``epsilon=None`` means "equal to the noise level": ``sigma`` in additive
    mode, the log-speckle standard deviation in speckle mode.
    ``max_support=None`` caps supports at ``N // 2``. ``debias`` controls the
    log-speckle mean correction applied before exponentiation.
    """

    sigma: float = 35.0
    patch_edge: int = 8
    dict_atoms: int = 256
    epsilon: float | None = None
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    mode: str = "additive"
    dict_scope: str = "global"
    learn_iters: int = 12
    seed: int = 0
    max_support: int | None = None
    patch_stride: int = 1
    weighting: str = "sparsity"
    split: bool = True
    remove_mean: bool = True
    train_patches: int | None = 20000
    debias: bool = True

    def __post_init__(self):
        if isinstance(self.grouping, dict):
            self.grouping = GroupingConfig(**self.grouping)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.dict_scope not in SCOPES:
            raise ValueError(f"dict_scope must be one of {SCOPES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.patch_edge < 1 or self.dict_atoms < 1 or self.patch_stride < 1:
            raise ValueError("patch_edge, dict_atoms and patch_stride must be positive")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.learn_iters < 0:
            raise ValueError("learn_iters must be >= 0")
        if self.train_patches is not None and self.train_patches < 1:
            raise ValueError("train_patches must be positive")
        if self.grouping.window < self.patch_edge:
            raise ValueError("search window must be at least one patch wide")

    @property
    def gamma(self) -> int:
        return self.grouping.gamma

    def noise_level(self) -> float:
        if self.mode == "speckle":
            return log_speckle_std(self.grouping.looks)
        return self.sigma

    def resolved_epsilon(self) -> float:
        return self.noise_level() if self.epsilon is None else self.epsilon

    def resolved_max_support(self) -> int:
        return self.max_support if self.max_support is not None else max(1, self.patch_edge**2 // 2)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["resolved_epsilon"] = self.resolved_epsilon()
        out["resolved_max_support"] = self.resolved_max_support()
        return out


@dataclass
class DenoiseReport:
    """Per-group cuts and errors plus timings of one run."""

    cuts: list[int] = field(default_factory=list)
    modal_frequencies: list[int] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    n_groups: int = 0
    n_patches: int = 0
    n_atoms: int = 0
    epsilon: float = 0.0
    split: bool = True
    bias_correction: float | None = None
    capped_patches: int = 0
    notes: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        cuts = np.asarray(self.cuts, dtype=float)
        errs = np.asarray(self.errors, dtype=float)
        out = {
            "groups": self.n_groups,
            "patches": self.n_patches,
            "atoms": self.n_atoms,
            "epsilon": self.epsilon,
            "split": int(self.split),
            "cut_mean": float(cuts.mean()) if cuts.size else 0.0,
            "cut_min": int(cuts.min()) if cuts.size else 0,
            "cut_max": int(cuts.max()) if cuts.size else 0,
            "error_rms_mean": float(errs.mean()) if errs.size else 0.0,
            "capped_patches": self.capped_patches,
        }
        if self.bias_correction is not None:
            out["bias_correction"] = self.bias_correction
        for k, v in self.timings.items():
            out[f"time_{k}_s"] = v
        return out

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self.summary().items()]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Tab-separated per-group table."""
        rows = ["group\tcut\tmodal_frequency\terror_rms"]
        for i, (p, m, e) in enumerate(zip(self.cuts, self.modal_frequencies, self.errors)):
            rows.append(f"{i}\t{p}\t{m}\t{_fmt(e)}")
        return "\n".join(rows) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def log_speckle_std(looks: float) -> float:
    """Standard deviation of log(Gamma(L, 1/L))."""
    return float(np.sqrt(polygamma(1, looks)))


def log_speckle_bias(looks: float) -> float:
    """Mean of log(Gamma(L, 1/L)); equals minus Euler's constant for L = 1."""
    return float(digamma(looks) - np.log(looks))


def _group_seed(seed: int, ref: int) -> int:
    return int(np.random.SeedSequence([seed, ref]).generate_state(1)[0])


def _run(values: np.ndarray, cfg: DenoiseConfig, epsilon: float, dual: bool) -> tuple[np.ndarray, DenoiseReport]:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    h, w = values.shape
    if min(h, w) < cfg.patch_edge:
        raise DegenerateDataError(f"{h}x{w} image is smaller than one {cfg.patch_edge}x{cfg.patch_edge} patch")
    patches = extract_patches(values, cfg.patch_edge, cfg.patch_stride)
    means = patches.data.mean(axis=0) if cfg.remove_mean else np.zeros(patches.count)
    Xc = patches.data - means
    sc = SparseConfig(epsilon=epsilon, max_support=cfg.resolved_max_support(), learn_iters=cfg.learn_iters, seed=cfg.seed)
    report = DenoiseReport(n_patches=patches.count, epsilon=epsilon, split=dual)

    index = PatchIndex(patches)
    refs = reference_indices(patches, cfg.grouping.ref_stride)
    groups = [form_group(patches, int(r), cfg.grouping, index) for r in refs]
    report.n_groups = len(groups)
    short = sum(g.shortfall > 0 for g in groups)
    if short:
        report.notes.append(f"{short} groups smaller than gamma={cfg.gamma}")
    timings["grouping"] = time.perf_counter() - t0

    acc = PixelAccumulator((h, w))
    if cfg.dict_scope == "global":
        _run_global(patches, Xc, means, groups, cfg, sc, dual, acc, report, timings)
    else:
        _run_per_group(patches, Xc, means, groups, cfg, sc, dual, acc, report, timings)

    t = time.perf_counter()
    out = acc.result()
    timings["aggregate"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    report.timings = timings
    return out, report


def _weights(cfg: DenoiseConfig, support_sizes: np.ndarray) -> np.ndarray:
    if cfg.weighting == "uniform":
        return np.ones(support_sizes.size)
    return sparsity_weights(support_sizes)


def _run_global(patches, Xc, means, groups, cfg, sc, dual, acc, report, timings):
    t = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    train = np.arange(patches.count)
    if cfg.train_patches is not None and patches.count > cfg.train_patches:
        train = np.sort(rng.choice(patches.count, size=cfg.train_patches, replace=False))
    if not np.any(Xc[:, train]):
        raise DegenerateDataError("all patches are flat; nothing to learn")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnderdeterminedWarning)
        D, _ = ksvd_learn(Xc[:, train], cfg.dict_atoms, sc)
    report.notes += [str(c.message) for c in caught if issubclass(c.category, UnderdeterminedWarning)]
    timings["learn"] = time.perf_counter() - t

    t = time.perf_counter()
    codes = encode_all(D, Xc, sc)
    report.n_atoms = D.shape[1]
    report.capped_patches = int(codes.capped.sum())
    full = reconstruct(D, codes)
    if dual:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TypicalRegimeWarning)
            s = compute_split(codes)
        for c in caught:
            warnings.warn(c.message, c.category, stacklevel=4)
            report.notes.append(str(c.message))
        principal, _ = split(D, codes, s)
        est = principal_reconstruct(principal)
        cut, modal = s.cut, s.modal_frequency
    else:
        est = full
        cut, modal = D.shape[1], 0
    weights = _weights(cfg, codes.support_sizes())
    timings["code"] = time.perf_counter() - t

    # Each patch has one estimate whatever the group, so it is aggregated once.
    # Counting it per group would weight patches by how often the similarity
    # search selects them, which biases skewed (log-speckle) data.
    members = np.unique(np.concatenate([g.member_indices for g in groups]))
    acc.add(patches.origins[members], patches.patch_edge, est[:, members] + means[members], weights[members])
    resid = Xc - full
    for g in groups:
        m = g.member_indices
        report.cuts.append(cut)
        report.modal_frequencies.append(modal)
        report.errors.append(float(np.sqrt(np.mean(resid[:, m] ** 2))))


def _run_per_group(patches, Xc, means, groups, cfg, sc, dual, acc, report, timings):
    t = time.perf_counter()
    k_group = min(cfg.dict_atoms, 2 * cfg.gamma)
    tol = sc.epsilon * np.sqrt(patches.dim)
    underdetermined = 0
    for g in groups:
        m = g.member_indices
        Z = Xc[:, m]
        if np.all(np.linalg.norm(Z, axis=0) <= tol):
            est = np.zeros_like(Z)
            support = np.zeros(m.size, dtype=int)
            cut, modal, err = 0, 0, float(np.sqrt(np.mean(Z**2)))
        else:
            gcfg = SparseConfig(sc.epsilon, sc.max_support, sc.learn_iters, _group_seed(cfg.seed, g.reference_index))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", UnderdeterminedWarning)
                D, codes = ksvd_learn(Z, k_group, gcfg)
            underdetermined += bool(caught)
            full = reconstruct(D, codes)
            err = float(np.sqrt(np.mean((Z - full) ** 2)))
            support = codes.support_sizes()
            report.capped_patches += int(codes.capped.sum())
            if dual:
                s = compute_split(codes, warn=False)
                principal, _ = split(D, codes, s)
                est = principal_reconstruct(principal)
                cut, modal = s.cut, s.modal_frequency
            else:
                est, cut, modal = full, k_group, 0
        acc.add(patches.origins[m], patches.patch_edge, est + means[m], _weights(cfg, support))
        report.cuts.append(int(cut))
        report.modal_frequencies.append(int(modal))
        report.errors.append(err)
    report.n_atoms = k_group
    if underdetermined:
        report.notes.append(f"{underdetermined} groups learned {k_group} atoms from fewer columns")
    timings["learn_code"] = time.perf_counter() - t


def _prepare(noisy, cfg: DenoiseConfig) -> tuple[np.ndarray, float | None]:
    values = as_array(noisy)
    if cfg.mode == "speckle":
        if np.any(values <= 0):
            raise ContractError("despeckling needs strictly positive intensities")
        return np.log(values), log_speckle_bias(cfg.grouping.looks) if cfg.debias else 0.0
    return values, None


def _finish(out: np.ndarray, bias: float | None) -> np.ndarray:
    if bias is None:
        return out
    return np.exp(out - bias)


def denoise(noisy, cfg: DenoiseConfig | None = None) -> tuple[np.ndarray, DenoiseReport]:
    """Dual sparse decomposition denoising of one image.

    In speckle mode the image is processed in the log domain with the PPB
    metric and the output is exponentiated after removing the mean of
    log-speckle.

    Returns:
        ``(estimate, report)``.
    """
    cfg = cfg or DenoiseConfig()
    if cfg.mode == "speckle" and cfg.grouping.metric != "ppb":
        cfg = _with_metric(cfg, "ppb")
    values, bias = _prepare(noisy, cfg)
    out, report = _run(values, cfg, cfg.resolved_epsilon(), dual=cfg.split)
    if bias is not None:
        report.bias_correction = bias
        report.notes.append(f"log-speckle mean {bias:.6f} removed before exponentiation")
    logger.debug("denoise finished: %s", report.summary())
    return _finish(out, bias), report


def denoise_single(noisy, cfg: DenoiseConfig | None = None, epsilon: float | None = None) -> np.ndarray:
    """Same pipeline with full-dictionary reconstruction (no split)."""
    cfg = cfg or DenoiseConfig()
    if cfg.mode == "speckle" and cfg.grouping.metric != "ppb":
        cfg = _with_metric(cfg, "ppb")
    values, bias = _prepare(noisy, cfg)
    eps = cfg.resolved_epsilon() if epsilon is None else epsilon
    out, _ = _run(values, cfg, eps, dual=False)
    return _finish(out, bias)


def despeckle(noisy_intensity, cfg: DenoiseConfig | None = None) -> tuple[np.ndarray, DenoiseReport]:
    """Homomorphic despeckling: :func:`denoise` forced into speckle mode."""
    cfg = cfg or DenoiseConfig(mode="speckle")
    if cfg.mode != "speckle":
        cfg = replace(cfg, mode="speckle")
    return denoise(noisy_intensity, cfg)


def _with_metric(cfg: DenoiseConfig, metric: str) -> DenoiseConfig:
    return replace(cfg, grouping=replace(cfg.grouping, metric=metric))
