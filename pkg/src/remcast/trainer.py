"""Joint training of the field regressor and unknown transmitter parameters.

The composite loss blends a mean-absolute data term with a physics term:
the stencil Laplacian of the predicted field is compared against the
analytic multi-transmitter right-hand side evaluated at the *current*
transmitter estimates, so gradients flow both into the network and into
the transmitter powers and positions.

Scale convention: the physics residual is the discrete curvature mismatch
at the stencil scale, (laplacian - rhs) * h^2, which is a dB quantity. A
raw dB/m^2 residual on a kilometer-scale domain is ~1e-5 while the data
term is ~dB, which would make the blend weight meaningless; at the stencil
scale both loss terms and their output-gradients are commensurate, so the
documented default weight balances them as intended.

Transmitter positions are optimized in normalized coordinates and powers
in decibel/10 units for the same reason: the adaptive optimizer's step
size is then meaningful for every parameter group.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import field_model as fm
from . import net as nets
from .dataset import Dataset
from .errors import DataError, NumericalError
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

STENCIL_OFFSETS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
)
STENCIL_COEFFS = np.array([-4.0, 1.0, 1.0, 1.0, 1.0])

# residual scale constant: the physics residual is (laplacian - rhs) * h^2
# * PHYSICS_SCALE, i.e. dB at the stencil footprint amplified so that the
# default blend weight balances the two loss terms (calibrated empirically)
PHYSICS_SCALE = 32.0


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.459  # physics weight in the composite loss
    learning_rate: float = 0.00369
    max_epochs: int = 5000
    batch_size: int | None = None  # None = full batch
    patience: int = 200
    min_delta: float = 0.01  # dB of validation MAE improvement
    collocation_count: int = 256
    collocation_mode: str = "domain"  # "domain" or "sensors"
    num_transmitters: int = 1
    eta: float = 2.7
    eta_trainable: bool = False
    d0: float = 1.0
    r_min: float | None = None
    stencil_h: float | None = None
    val_fraction: float = 0.2
    seed: int = 0
    net: nets.NetSpec | None = None
    # optional known transmitters: overrides the data-driven initialization;
    # entries with trainable=False are held fixed during optimization
    tx_init: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("loss weight must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.num_transmitters < 1:
            raise ValueError("need at least one transmitter")
        if self.collocation_mode not in ("domain", "sensors"):
            raise ValueError("collocation mode must be 'domain' or 'sensors'")

    def resolved_net(self) -> nets.NetSpec:
        if self.net is not None:
            return self.net
        return nets.NetSpec(seed=derive_seed(self.seed, "net"))


@dataclass
class TrainReport:
    epoch: np.ndarray
    l_d: np.ndarray
    l_p: np.ndarray
    l_total: np.ndarray
    val_mae: np.ndarray
    tx_power_db: np.ndarray
    tx_xy: np.ndarray
    eta: float
    wall_seconds: float
    stop_reason: str
    best_epoch: int

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("epoch,l_d,l_p,l_total,val_mae\n")
            for i in range(len(self.epoch)):
                fh.write(
                    f"{int(self.epoch[i])},{self.l_d[i]:.9f},{self.l_p[i]:.9f},"
                    f"{self.l_total[i]:.9f},{self.val_mae[i]:.9f}\n"
                )


@dataclass
class RemRaster:
    """Rectangular grid of predictions; cells row-major from the south-west."""

    bounds: tuple[float, float, float, float]
    nx: int
    ny: int
    values: np.ndarray  # shape (ny, nx)
    std: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.bounds
        if not (x_max > x_min and y_max > y_min):
            raise ValueError("raster bounds are degenerate")
        if self.values.shape != (self.ny, self.nx):
            raise ValueError("raster value shape does not match cell counts")

    def cell_centers(self) -> np.ndarray:
        x_min, x_max, y_min, y_max = self.bounds
        dx = (x_max - x_min) / self.nx
        dy = (y_max - y_min) / self.ny
        xs = x_min + (np.arange(self.nx) + 0.5) * dx
        ys = y_min + (np.arange(self.ny) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


class Adam:
    """Adaptive moment estimation over a list of parameter arrays."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def data_loss(model: nets.NetModel, batch) -> float:
    """Mean absolute error between predictions and observed dB values."""
    points, observed = batch
    observed = np.asarray(observed, dtype=float)
    if observed.size == 0:
        raise DataError("empty batch")
    pred = nets.forward(model, np.atleast_2d(points))
    return float(np.mean(np.abs(pred - observed)))


def total_loss(ld: float, lp: float, lam: float) -> float:
    """Convex blend of the data and physics terms."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("loss weight must lie in [0, 1]")
    return (1.0 - lam) * ld + lam * lp


def physics_loss(model, scene_estimate, collocation_points, h=None) -> float:
    """Mean absolute mismatch between the model's discrete curvature and the
    analytic right-hand side, expressed in dB at the stencil scale
    ((laplacian - rhs) * h^2)."""
    pts = np.atleast_2d(np.asarray(collocation_points, dtype=float))
    if pts.size == 0:
        log.warning("physics loss evaluated with zero collocation points")
        return 0.0
    if h is None:
        h = model.default_stencil_h()
    lap = nets.laplacian(model, pts, h=h)
    rhs = fm.pde_rhs(scene_estimate, pts)
    return float(np.mean(np.abs(lap - rhs)) * h * h * PHYSICS_SCALE)


def _init_transmitters(dataset: Dataset, m: int, diag: float):
    """Seed transmitter estimates from the data: positions at the top-power
    sample locations with a spread-out tie-break, powers at max + 20 dB."""
    order = np.argsort(-dataset.rssi_db, kind="stable")
    pts = dataset.points
    chosen: list[int] = []
    spacing = 0.1 * diag
    while len(chosen) < m and spacing > 1e-9:
        for idx in order:
            if len(chosen) == m:
                break
            if idx in chosen:
                continue
            if all(np.linalg.norm(pts[idx] - pts[c]) >= spacing for c in chosen):
                chosen.append(int(idx))
        spacing /= 2.0
    for idx in order:
        if len(chosen) == m:
            break
        if idx not in chosen:
            chosen.append(int(idx))
    positions = pts[chosen]
    powers = np.full(m, float(dataset.rssi_db.max()) + 20.0)
    return powers, positions


def _scene_from_arrays(power_db, xy, eta, d0, r_min) -> fm.FieldScene:
    txs = tuple(
        fm.Transmitter(fm.Point(float(x), float(y)), float(p))
        for (x, y), p in zip(xy, power_db)
    )
    return fm.FieldScene(
        transmitters=txs, params=fm.PropagationParams(eta=float(eta), d0=d0, r_min=r_min)
    )


def _draw_collocation(rng, bounds, count, tx_xy, r_min):
    """Uniform domain points, excluding discs of radius r_min around the
    current transmitter estimates."""
    x_min, x_max, y_min, y_max = bounds
    pts = np.empty((count, 2))
    need = np.ones(count, dtype=bool)
    for _ in range(50):
        k = int(need.sum())
        if k == 0:
            break
        cand = np.column_stack(
            [rng.uniform(x_min, x_max, k), rng.uniform(y_min, y_max, k)]
        )
        d = np.linalg.norm(cand[:, None, :] - tx_xy[None, :, :], axis=2).min(axis=1)
        ok = d >= r_min
        idx = np.flatnonzero(need)[: len(cand)]
        pts[idx[ok]] = cand[ok]
        need[idx[ok]] = False
    if need.any():
        # r_min discs nearly cover the domain; keep the last draws regardless
        k = int(need.sum())
        pts[need] = np.column_stack(
            [rng.uniform(x_min, x_max, k), rng.uniform(y_min, y_max, k)]
        )
    return pts


def train(dataset: Dataset, config: TrainConfig, bounds=None):
    """Optimize network and transmitter parameters under the composite loss.

    Returns (model, transmitter estimates, report). Deterministic for a
    fixed config: every random stream is derived from ``config.seed``.
    """
    t_start = time.perf_counter()
    n = len(dataset)
    m = config.num_transmitters
    if n < m + 3:
        raise DataError(f"need at least {m + 3} samples to fit {m} transmitters")
    if np.ptp(dataset.x) == 0 and np.ptp(dataset.y) == 0:
        raise DataError("degenerate dataset: all sample locations identical")

    if bounds is None:
        bounds = dataset.bounding_box()
    x_min, x_max, y_min, y_max = bounds
    diag = float(np.hypot(x_max - x_min, y_max - y_min))

    model = nets.net_new(config.resolved_net())
    model.set_input_bounds(bounds)
    model.set_output_norm(dataset.rssi_db.mean(), dataset.rssi_db.std())
    model.eta = config.eta

    # train/validation split
    val_count = int(round(config.val_fraction * n))
    if 0 < config.val_fraction and val_count == 0:
        val_count = 1
    perm = rng_for(config.seed, "val-split").permutation(n)
    val_idx = perm[:val_count]
    train_idx = perm[val_count:]
    if len(train_idx) == 0:
        raise DataError("validation split leaves no training samples")
    train_pts = dataset.points[train_idx]
    train_obs = dataset.rssi_db[train_idx]
    val_pts = dataset.points[val_idx]
    val_obs = dataset.rssi_db[val_idx]

    # transmitter parameters, optimized in normalized units
    if config.tx_init is not None:
        if len(config.tx_init) != m:
            raise ValueError("tx_init length must match num_transmitters")
        init_power = np.array([t.power_db for t in config.tx_init])
        init_xy = np.array([[t.position[0], t.position[1]] for t in config.tx_init])
        tx_free = np.array([t.trainable for t in config.tx_init], dtype=bool)
    else:
        init_power, init_xy = _init_transmitters(dataset, m, diag)
        tx_free = np.ones(m, dtype=bool)
    pow_s = init_power / 10.0
    pos_n = (init_xy - model.in_center) / model.in_halfwidth
    eta_arr = np.array(float(config.eta))

    params = list(model.weights) + list(model.biases) + [pow_s, pos_n]
    if config.eta_trainable:
        params.append(eta_arr)
    opt = Adam(params, lr=config.learning_rate)

    rng_drop = rng_for(config.seed, "dropout")
    rng_coll = rng_for(config.seed, "collocation")
    rng_batch = rng_for(config.seed, "batching")

    h = config.stencil_h if config.stencil_h is not None else model.default_stencil_h()
    r_min = config.r_min if config.r_min is not None else config.d0
    lam = config.lam
    use_physics = lam > 0.0

    n_w = len(model.weights)
    n_b = len(model.biases)

    hist_ld, hist_lp, hist_lt, hist_val = [], [], [], []
    best_val = np.inf
    best_epoch = -1
    patience_left = config.patience
    stop_reason = "max_epochs"

    n_train = len(train_idx)
    batch = config.batch_size if config.batch_size else n_train
    batch = min(batch, n_train)

    def tx_phys():
        return model.in_center + pos_n * model.in_halfwidth

    def rhs_at(pts, pow_s_v, pos_n_v, eta_v):
        scene = _scene_from_arrays(
            10.0 * pow_s_v,
            model.in_center + pos_n_v * model.in_halfwidth,
            float(eta_v),
            config.d0,
            r_min,
        )
        return fm.pde_rhs(scene, pts)

    for epoch in range(config.max_epochs):
        if batch == n_train:
            batches = [np.arange(n_train)]
        else:
            order = rng_batch.permutation(n_train)
            batches = [order[i : i + batch] for i in range(0, n_train, batch)]

        ep_ld, ep_lp, ep_n = 0.0, 0.0, 0
        for bidx in batches:
            bpts = train_pts[bidx]
            bobs = train_obs[bidx]
            pred, tape_d = nets.forward_tape(
                model, bpts, dropout_on=True, rng=rng_drop
            )
            err = pred - bobs
            ld = float(np.mean(np.abs(err)))
            d_pred = (1.0 - lam) * np.sign(err) / len(bobs)
            g_w, g_b = nets.backward(model, tape_d, d_pred)

            lp = 0.0
            g_pow = None
            g_pos = None
            g_eta = None
            if use_physics:
                if config.collocation_mode == "sensors":
                    coll = bpts
                else:
                    coll = _draw_collocation(
                        rng_coll, bounds, config.collocation_count, tx_phys(), r_min
                    )
                k = len(coll)
                stacked = (
                    coll[None, :, :] + (h * STENCIL_OFFSETS)[:, None, :]
                ).reshape(-1, 2)
                vals, tape_p = nets.forward_tape(model, stacked)
                vals = vals.reshape(5, k)
                # residual in dB at the stencil scale: second difference
                # minus rhs * h^2 (avoids the 1/h^2 round trip)
                second_diff = (STENCIL_COEFFS[:, None] * vals).sum(axis=0)
                rhs = rhs_at(coll, pow_s, pos_n, eta_arr)
                resid = (second_diff - rhs * h**2) * PHYSICS_SCALE
                lp = float(np.mean(np.abs(resid)))
                sign_r = np.sign(resid)
                d_vals = (
                    lam
                    * (sign_r[None, :] * STENCIL_COEFFS[:, None])
                    * (PHYSICS_SCALE / k)
                ).reshape(-1)
                pg_w, pg_b = nets.backward(model, tape_p, d_vals)
                for i in range(n_w):
                    g_w[i] += pg_w[i]
                for i in range(n_b):
                    g_b[i] += pg_b[i]

                # transmitter-parameter gradients: central differences on the
                # analytic right-hand side (the only path they influence)
                def rhs_grad_scalar(arr, idx, step):
                    old = arr[idx]
                    arr[idx] = old + step
                    hi = rhs_at(coll, pow_s, pos_n, eta_arr)
                    arr[idx] = old - step
                    lo = rhs_at(coll, pow_s, pos_n, eta_arr)
                    arr[idx] = old
                    d_rhs = (hi - lo) / (2 * step)
                    return (
                        lam
                        * h**2
                        * PHYSICS_SCALE
                        * float(np.mean(sign_r * (-d_rhs)))
                    )

                g_pow = np.array(
                    [
                        rhs_grad_scalar(pow_s, (i,), 1e-3) if tx_free[i] else 0.0
                        for i in range(m)
                    ]
                )
                g_pos = np.array(
                    [
                        [
                            rhs_grad_scalar(pos_n, (i, j), 1e-4) if tx_free[i] else 0.0
                            for j in range(2)
                        ]
                        for i in range(m)
                    ]
                )
                if config.eta_trainable:
                    g_eta = np.array(rhs_grad_scalar(eta_arr, (), 1e-4))

            ltot = total_loss(ld, lp, lam)
            if not np.isfinite(ltot):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} (l_d={ld}, l_p={lp})"
                )

            grads = g_w + g_b + [g_pow, g_pos]
            if config.eta_trainable:
                grads.append(g_eta)
            opt.step(grads)

            ep_ld += ld * len(bobs)
            ep_lp += lp * len(bobs)
            ep_n += len(bobs)

        ld_epoch = ep_ld / ep_n
        lp_epoch = ep_lp / ep_n
        if len(val_idx):
            val_pred = nets.forward(model, val_pts)
            val_mae = float(np.mean(np.abs(val_pred - val_obs)))
        else:
            val_mae = ld_epoch
        hist_ld.append(ld_epoch)
        hist_lp.append(lp_epoch)
        hist_lt.append(total_loss(ld_epoch, lp_epoch, lam))
        hist_val.append(val_mae)

        if val_mae < best_val - config.min_delta:
            best_val = val_mae
            best_epoch = epoch
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                stop_reason = "early_stop"
                break

    tx_power = 10.0 * pow_s
    tx_pos = model.in_center + pos_n * model.in_halfwidth
    model.tx_power_db = tx_power.copy()
    model.tx_xy = tx_pos.copy()
    model.eta = float(eta_arr)

    transmitters = [
        fm.Transmitter(fm.Point(float(x), float(y)), float(p))
        for (x, y), p in zip(tx_pos, tx_power)
    ]
    report = TrainReport(
        epoch=np.arange(len(hist_ld)),
        l_d=np.array(hist_ld),
        l_p=np.array(hist_lp),
        l_total=np.array(hist_lt),
        val_mae=np.array(hist_val),
        tx_power_db=tx_power.copy(),
        tx_xy=tx_pos.copy(),
        eta=float(eta_arr),
        wall_seconds=time.perf_counter() - t_start,
        stop_reason=stop_reason,
        best_epoch=best_epoch,
    )
    return model, transmitters, report


def predict_raster(model: nets.NetModel, bounds, nx: int, ny: int) -> RemRaster:
    """Dropout-off predictions at every cell center."""
    raster = RemRaster(bounds=tuple(bounds), nx=nx, ny=ny, values=np.zeros((ny, nx)))
    values = nets.forward(model, raster.cell_centers())
    raster.values = values.reshape(ny, nx)
    return raster


def uncertainty_raster(
    model: nets.NetModel,
    bounds,
    nx: int,
    ny: int,
    passes: int = 50,
    threshold_db: float = 3.0,
    seed: int = 0,
) -> RemRaster:
    """Monte-Carlo dropout mean/std per cell plus the exceedance mask."""
    raster = RemRaster(bounds=tuple(bounds), nx=nx, ny=ny, values=np.zeros((ny, nx)))
    if model.spec.dropout_rate == 0.0:
        log.warning("dropout rate is zero: uncertainty std is identically zero")
    mean, std = nets.mc_forward(model, raster.cell_centers(), passes=passes, seed=seed)
    raster.values = mean.reshape(ny, nx)
    raster.std = std.reshape(ny, nx)
    raster.mask = raster.std > threshold_db
    return raster


def config_with(config: TrainConfig, **overrides) -> TrainConfig:
    return dataclasses.replace(config, **overrides)
