"""Synthetic data generators.

``gen_imgpert`` simulates the image-perturbation benchmark::

    t ~ Multinomial(p)                 pattern index
    Z = pattern_t                      10x10 binary template (plus t itself)
    W ~ Multinomial(Delta_t)           treatment index in {0, 1, 2, 3}
    f_w: 1000 draws g ~ N(loc(W), I_2); each draw whose floored pixel
         lies inside the image adds eta to that pixel
    X = Z + f_w + N(0, noise_x^2)      per pixel
    phi = quadrant convolutions of X with kernel t
    Y = theta0 + theta . phi + N(0, noise_y^2)

Templates, ``Delta``, the treatment-to-location map and the kernel seed
live in ``data/imgpert.json``. Rows are stored as ``w = [W]``,
``z = [pattern pixels (100), t]`` and ``x = image pixels (100)``.

``gen_linear_gaussian`` is a small linear testbed whose conditional
expectations ``E[phi | w, z]`` are known in closed form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .features import Builtin, ConvBank, FeatureLibrary, quadrant_library

__all__ = [
    "load_fixture",
    "ImgPertConfig",
    "ImgPertGenerator",
    "OutcomeSpec",
    "gen_imgpert",
    "make_benchmark",
    "sample_theta_trial",
    "LinearGaussianTruth",
    "gen_linear_gaussian",
    "provenance",
    "BENCHMARK_THETA",
]

BENCHMARK_THETA = (0.7, 0.0, 0.0, -0.5)
_CHUNK = 256


def load_fixture() -> dict:
    text = resources.files("pragmed").joinpath("data/imgpert.json").read_text(encoding="utf-8")
    return json.loads(text)


def _templates(fix: dict) -> np.ndarray:
    rows = [fix["templates"][name] for name in fix["template_order"]]
    return np.array([[[int(ch) for ch in r] for r in tpl] for tpl in rows], dtype=np.float64)


@dataclass(frozen=True)
class OutcomeSpec:
    theta0: float
    theta: tuple[float, ...]
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if self.noise_std < 0:
            raise ConfigError("noise std must be nonnegative")


def sample_theta_trial(seed: int | None = None, mode: str = "single", d: int = 4,
                       low: float = -0.3, high: float = 0.3, noise_std: float = 0.1) -> OutcomeSpec:
    """Outcome weights for one benchmark run.

    ``single``: the fixed weights (0.7, 0, 0, -0.5) with noise std 0.1.
    ``multi``: weights drawn i.i.d. from Unif(low, high); noise std 0.1
    (variance 0.01).
    """
    if mode == "single":
        return OutcomeSpec(0.0, BENCHMARK_THETA, 0.1)
    if mode == "multi":
        theta = np.random.default_rng(seed).uniform(low, high, d)
        return OutcomeSpec(0.0, tuple(theta), noise_std)
    raise ConfigError(f"unknown theta mode {mode!r}")


@dataclass(frozen=True)
class ImgPertConfig:
    n: int = 10_000
    side: int = 10
    pattern_probs: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    delta: tuple[tuple[float, ...], ...] | None = None
    locations: dict | None = None
    eta: float = 0.1
    draws: int = 1000
    noise_x: float = 0.5
    noise_y: float = 0.1
    theta: tuple[float, ...] = BENCHMARK_THETA
    theta0: float = 0.0
    kernel_seed: int | None = None
    seed: int = 0
    templates: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        fix = load_fixture()
        if self.delta is None:
            object.__setattr__(self, "delta", tuple(tuple(r) for r in fix["delta"]))
        if self.locations is None:
            object.__setattr__(self, "locations", {int(k): tuple(v) for k, v in fix["locations"].items()})
        else:
            object.__setattr__(self, "locations", {int(k): tuple(v) for k, v in self.locations.items()})
        if self.kernel_seed is None:
            object.__setattr__(self, "kernel_seed", int(fix["kernel_seed"]))
        if self.templates is None:
            object.__setattr__(self, "templates", _templates(fix))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        delta = np.asarray(self.delta, dtype=np.float64)
        p = np.asarray(self.pattern_probs, dtype=np.float64)
        if delta.ndim != 2 or delta.shape[0] != p.size:
            raise ConfigError("delta must have one row per pattern")
        if np.any(delta < 0) or np.any(np.abs(delta.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("every row of delta must be a probability simplex")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("pattern probabilities must form a simplex")
        for w in range(delta.shape[1]):
            if w not in self.locations:
                raise ConfigError(f"no location defined for treatment {w}")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.noise_x < 0 or self.noise_y < 0:
            raise ConfigError("noise stds must be nonnegative")
        if self.templates.shape != (p.size, self.side, self.side):
            raise ConfigError("templates do not match pattern count / image side")

    def with_outcome(self, outcome: OutcomeSpec) -> "ImgPertConfig":
        return _replace(self, theta=outcome.theta, theta0=outcome.theta0, noise_y=outcome.noise_std)

    def template_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.templates, dtype=np.uint8).tobytes()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("templates")
        d["delta"] = [list(r) for r in self.delta]
        d["locations"] = {str(k): list(v) for k, v in self.locations.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImgPertConfig":
        d = dict(d)
        for key in ("pattern_probs", "theta"):
            if key in d:
                d[key] = tuple(d[key])
        if "delta" in d and d["delta"] is not None:
            d["delta"] = tuple(tuple(r) for r in d["delta"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown image-perturbation settings: {sorted(unknown)}")
        return cls(**d)


def _replace(cfg, **kw):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d.update(kw)
    return type(cfg)(**d)


class ImgPertGenerator:
    """Sampler for the image-perturbation model; also the oracle handle."""

    def __init__(self, cfg: ImgPertConfig):
        self.cfg = cfg
        self.bank = ConvBank(seed=cfg.kernel_seed, side=cfg.side, n_kernels=len(cfg.pattern_probs))

    @property
    def n_pixels(self) -> int:
        return self.cfg.side**2

    @property
    def t_column(self) -> int:
        return self.n_pixels

    def library(self) -> FeatureLibrary:
        return quadrant_library(self.bank, t_column=self.t_column)

    def location(self, w) -> np.ndarray:
        try:
            return np.asarray(self.cfg.locations[int(w)], dtype=np.float64)
        except KeyError:
            raise ConfigError(f"no location defined for treatment {w}") from None

    def z_for(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        pix = self.cfg.templates[t].reshape(t.size, -1)
        return np.column_stack([pix, t.astype(np.float64)])

    def perturbation(self, w, rng) -> np.ndarray:
        """Perturbation masks ``f_w`` for a vector of treatments; shape (n, side**2)."""
        w = np.atleast_1d(w)
        s, n = self.cfg.side, w.size
        locs = np.stack([self.location(v) for v in w]) if n else np.empty((0, 2))
        g = rng.standard_normal((n, self.cfg.draws, 2)) + locs[:, None, :]
        pix = np.floor(g).astype(np.int64)
        ok = np.all((pix >= 0) & (pix < s), axis=2)
        flat = pix[..., 0] * s + pix[..., 1] + (np.arange(n) * s * s)[:, None]
        counts = np.bincount(flat[ok], minlength=n * s * s)
        return self.cfg.eta * counts.reshape(n, s * s)

    def sample_x(self, w, z, m: int, rng) -> np.ndarray:
        """``m`` draws of ``X | w, z`` (all for the same ``w`` and ``z``)."""
        z = np.asarray(z, dtype=np.float64).ravel()
        base = z[: self.n_pixels]
        f = self.perturbation(np.full(m, int(np.asarray(w).ravel()[0])), rng)
        return base + f + self.cfg.noise_x * rng.standard_normal((m, self.n_pixels))

    def generate(self, regime: int = 0, w_override=None, t=None, n: int | None = None,
                 seed: int | None = None) -> Dataset:
        cfg = self.cfg
        if t is not None:
            t = np.asarray(t, dtype=np.int64)
            n = t.size
        n = cfg.n if n is None else int(n)
        seed = cfg.seed if seed is None else seed
        n_chunks = max(1, -(-n // _CHUNK))
        streams = np.random.SeedSequence([int(seed), int(regime)]).spawn(n_chunks)
        p = np.asarray(cfg.pattern_probs)
        delta = np.asarray(cfg.delta)
        T, W, X, Y = [], [], [], []
        lib = self.library()
        theta = np.asarray(cfg.theta)
        for c, ss in enumerate(streams):
            lo, hi = c * _CHUNK, min(n, (c + 1) * _CHUNK)
            k = hi - lo
            if k <= 0:
                break
            rng = np.random.default_rng(ss)
            tc = t[lo:hi] if t is not None else rng.choice(p.size, size=k, p=p)
            if w_override is None:
                u = rng.random(k)
                wc = (u[:, None] > np.cumsum(delta[tc], axis=1)).sum(axis=1)
                wc = np.minimum(wc, delta.shape[1] - 1)
            else:
                wc = np.full(k, int(w_override))
            zc = self.z_for(tc)
            xc = zc[:, : self.n_pixels] + self.perturbation(wc, rng) \
                + cfg.noise_x * rng.standard_normal((k, self.n_pixels))
            phi = lib.evaluate(xc, zc)
            if phi.shape[1] != theta.size:
                raise ConfigError(f"theta has {theta.size} entries but there are {phi.shape[1]} features")
            yc = cfg.theta0 + phi @ theta + cfg.noise_y * rng.standard_normal(k)
            T.append(tc); W.append(wc); X.append(xc); Y.append(yc)
        t_all = np.concatenate(T)
        return Dataset(
            regime=np.full(n, int(regime)),
            w=np.concatenate(W).astype(np.float64).reshape(-1, 1),
            z=self.z_for(t_all),
            x=np.vstack(X),
            y=np.concatenate(Y),
        )


def gen_imgpert(cfg: ImgPertConfig, regime: int = 0, w_override=None, t=None) -> Dataset:
    """One labeled dataset from the image-perturbation model.

    ``w_override`` fixes the treatment for every row (a ``do(w)`` regime);
    ``t`` optionally fixes the pattern indices (and hence ``n``).
    """
    return ImgPertGenerator(cfg).generate(regime, w_override, t)


def make_benchmark(cfg: ImgPertConfig, n_new: int = 2000, w_new: int = 5,
                   historic_regime: int = 0, new_regime: int = 1) -> tuple[Dataset, Dataset, ImgPertGenerator]:
    """Historic pool plus an unseen ``do(w_new)`` regime.

    The new regime re-uses the patterns of the first ``n_new`` historic
    images and perturbs them afresh at location ``w_new``.
    """
    gen = ImgPertGenerator(cfg)
    historic = gen.generate(historic_regime)
    if n_new > historic.n:
        raise ConfigError("n_new cannot exceed the historic pool size")
    t_new = historic.z[:n_new, gen.t_column].astype(np.int64)
    new = gen.generate(new_regime, w_override=w_new, t=t_new)
    return historic, new, gen


def provenance(cfg: ImgPertConfig, **extra) -> dict:
    doc = {"generator": "imgpert", "config": cfg.to_dict(), "template_hash": cfg.template_hash()}
    doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# Linear-Gaussian testbed

@dataclass(frozen=True, eq=False)
class LinearGaussianTruth:
    """``w = A z + e_w``, ``x = B w + C z + e_x``, ``phi = D x``, ``y = theta0 + theta . phi + e_y``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    theta: np.ndarray
    theta0: float
    noise_w: float
    noise_x: float
    noise_y: float

    def library(self) -> FeatureLibrary:
        return FeatureLibrary([Builtin(f"phi{i + 1}", "linear_x", weights=self.D[i])
                               for i in range(self.D.shape[0])])

    def cond_expectation(self, W, Z) -> np.ndarray:
        """Closed-form ``E[phi | w, z] = D (B w + C z)`` row-wise."""
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return (W @ self.B.T + Z @ self.C.T) @ self.D.T

    def do_response(self, W, Z) -> np.ndarray:
        return self.theta0 + self.cond_expectation(W, Z) @ self.theta

    def sample_x(self, w, z, m: int, rng) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64).ravel()
        z = np.asarray(z, dtype=np.float64).ravel()
        mean = self.B @ w + self.C @ z
        return mean + self.noise_x * rng.standard_normal((m, mean.size))


def gen_linear_gaussian(d_w: int, d_z: int, d_x: int, d_phi: int, n: int, seed: int = 0,
                        B=None, theta=None, theta0: float = 0.0, noise_w: float = 1.0,
                        noise_x: float = 1.0, noise_y: float = 0.1, regime: int = 0,
                        truth: LinearGaussianTruth | None = None):
    """Sample ``n`` labeled rows; returns ``(Dataset, LinearGaussianTruth)``.

    Matrices not supplied are drawn from N(0, 1) with ``seed``; passing
    ``truth`` re-uses an existing ground truth (e.g. for a second regime).
    """
    if min(d_w, d_z, d_x, d_phi) < 1:
        raise ConfigError("all dimensions must be at least 1")
    rng = np.random.default_rng(seed)
    if truth is None:
        A = rng.standard_normal((d_w, d_z))
        Bm = rng.standard_normal((d_x, d_w)) if B is None else np.asarray(B, dtype=np.float64)
        C = rng.standard_normal((d_x, d_z))
        D = rng.standard_normal((d_phi, d_x)) / np.sqrt(d_x)
        th = rng.uniform(-1, 1, d_phi) if theta is None else np.asarray(theta, dtype=np.float64)
        if Bm.shape != (d_x, d_w):
            raise ConfigError(f"B must have shape {(d_x, d_w)}")
        if th.shape != (d_phi,):
            raise ConfigError(f"theta must have length {d_phi}")
        truth = LinearGaussianTruth(A, Bm, C, D, th, float(theta0), noise_w, noise_x, noise_y)
    Z = rng.standard_normal((n, d_z))
    W = Z @ truth.A.T + truth.noise_w * rng.standard_normal((n, d_w))
    X = W @ truth.B.T + Z @ truth.C.T + truth.noise_x * rng.standard_normal((n, d_x))
    phi = X @ truth.D.T
    y = truth.theta0 + phi @ truth.theta + truth.noise_y * rng.standard_normal(n)
    return Dataset(np.full(n, regime), W, Z, X, y), truth
