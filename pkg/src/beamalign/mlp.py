"""Self-contained dense network: forward, backprop, Adam, training, persistence.

The network maps a stacked steering-vector query representation to a
beamforming vector. Training minimizes an indicator-shaping loss: squared
deviation of the noise-free power profile from an ideal region indicator
(level 1/K inside, 0 outside) plus a margin hinge on the separation
statistic the diagnostics measure. The 1-bit variant hinges received
powers at the secondary midpoints; the full-rule variant hinges the
probability factors at the sub-interval midpoints.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import AngleGrid, Query, bin_midpoints, secondary_midpoints, steering_matrix

MAGIC = b"BAMLPMDL"
FORMAT_VERSION = 1


class ModelFormatError(RuntimeError):
    """Model file is corrupt, truncated, or structurally inconsistent."""


class ModelNotFoundError(FileNotFoundError):
    """No trained model available for the requested (grid, K, rule)."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


def relu(x):
    return np.maximum(x, 0.0)


_ACTIVATIONS = {"relu": relu, "linear": lambda x: x}


def default_widths(grid: AngleGrid, K: int) -> list[int]:
    """[input, 1024, 1024, 2*N_R]; input stacks Re/Im of K*k steering vectors."""
    return [2 * grid.k * K * grid.N_R, 1024, 1024, 2 * grid.N_R]


def stack_to_input(stack: np.ndarray) -> np.ndarray:
    """Flatten a (K*k, N_R) steering stack into the network input layout."""
    return np.concatenate([stack.real.ravel(), stack.imag.ravel()])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batches_per_epoch: int = 10
    batch_size: int = 800
    max_epochs: int = 200
    patience: int = 10        # epochs without validation improvement
    dataset_size: int = 10_000
    val_fraction: float = 0.2
    margin: float = 0.05      # hinge margin on the separation statistic
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class MlpModel:
    """Dense network with a complex reassembly + unit-norm output stage."""

    def __init__(self, widths, weights, biases, activation="relu",
                 trained_for_K=None, metadata=None):
        self.widths = list(int(w) for w in widths)
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.trained_for_K = trained_for_K
        self.metadata = dict(metadata or {})
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if self.widths[-1] % 2 != 0:
            raise ValueError("output width must be even (Re/Im pairs)")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.widths[l], self.widths[l + 1]) or b.shape != (self.widths[l + 1],):
                raise ValueError(f"layer {l} shapes inconsistent with widths {self.widths}")

    @property
    def n_antennas(self) -> int:
        return self.widths[-1] // 2

    def params(self):
        return list(self.weights) + list(self.biases)

    def copy_params(self):
        return [p.copy() for p in self.params()]

    def set_params(self, params):
        L = len(self.weights)
        self.weights = [p.copy() for p in params[:L]]
        self.biases = [p.copy() for p in params[L:]]

    def forward_batch(self, X: np.ndarray, keep_cache: bool = False):
        """Pre-normalization outputs for a (B, in) batch; optionally caches
        layer inputs and pre-activations for backprop."""
        act = _ACTIVATIONS[self.activation]
        h = X
        cache = []
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if keep_cache:
                cache.append((h, z))
            h = z if l == last else act(z)   # linear output layer
        return (h, cache) if keep_cache else h

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Unit-norm complex beamformer for one input vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.widths[0],):
            raise ValueError(f"input length {x.shape} != first width {self.widths[0]}")
        o = self.forward_batch(x[None, :])[0]
        v = o[: self.n_antennas] + 1j * o[self.n_antennas:]
        nrm = np.linalg.norm(v)
        if nrm < 1e-12:
            from .beammaps import DegenerateBeamError
            raise DegenerateBeamError("network emitted an all-zero pre-normalization output")
        return v / nrm

    def backward_batch(self, cache, dL_dO: np.ndarray):
        """Parameter gradients (matching ``params()`` order) from output grads."""
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dL_dO
        for l in range(len(self.weights) - 1, -1, -1):
            h, z = cache[l]
            grads_W[l] = h.T @ delta
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = delta @ self.weights[l].T
                if self.activation == "relu":
                    delta = delta * (cache[l][0] > 0)  # h_l = act(z_{l-1})
        return grads_W + grads_b


def init_model(widths, rng: np.random.Generator, activation="relu") -> MlpModel:
    """Gaussian init scaled by 1/sqrt(fan_in); biases start at zero."""
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))
        biases.append(np.zeros(n_out))
    return MlpModel(widths, weights, biases, activation=activation)


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class SeparationLoss:
    """Indicator-shaping loss on the normalized beam implied by raw outputs.

    value_and_grad consumes the pre-normalization batch O (B, 2*N_R) plus the
    per-sample query bins and returns (mean loss, dL/dO). All probe geometry
    is precomputed once per grid.
    """

    def __init__(self, grid: AngleGrid, rule: str = "1bit", margin: float = 0.05):
        if rule not in ("1bit", "full"):
            raise ValueError(f"unknown rule {rule!r}")
        self.grid = grid
        self.rule = rule
        self.margin = margin
        self.bins_A = steering_matrix(bin_midpoints(grid), grid)          # (M, N)
        sec = np.concatenate([secondary_midpoints(i, grid) for i in range(1, grid.M + 1)])
        self.sec_A = steering_matrix(sec, grid)                           # (M*k, N)
        self.name = "indicator-mse+power-hinge" if rule == "1bit" else "indicator-mse+nu-hinge"

    def _responses(self, V, A):
        # c[s, m] = A(theta_m)^H v_s; power p = |c|^2 / ||v||^2.
        return V @ A.conj().T

    def _accumulate_probe_grad(self, S, C, A, n2, dOR, dOI, qacc):
        """Add d(sum_m S_m * p_m)/dO for one probe family (direct term only);
        the shared -2*o*sum(S*p)/n2 norm term is accumulated into qacc."""
        X, Y = C.real, C.imag
        SX, SY = S * X, S * Y
        dOR += (2.0 / n2)[:, None] * (SX @ A.real - SY @ A.imag)
        dOI += (2.0 / n2)[:, None] * (SX @ A.imag + SY @ A.real)
        qacc += (S * (X * X + Y * Y)).sum(axis=1) / n2

    def value_and_grad(self, O: np.ndarray, query_bins: np.ndarray):
        """query_bins: (B, K) 1-based sub-interval indices per sample."""
        grid = self.grid
        B = O.shape[0]
        N = O.shape[1] // 2
        K = query_bins.shape[1]
        OR, OI = O[:, :N], O[:, N:]
        V = OR + 1j * OI
        n2 = np.einsum("ij,ij->i", O, O)
        if np.any(n2 < 1e-24):
            raise TrainingDivergedError("pre-normalization output collapsed to zero")

        member = np.zeros((B, grid.M), dtype=bool)
        np.put_along_axis(member, query_bins - 1, True, axis=1)

        C_bins = self._responses(V, self.bins_A)                 # (B, M)
        P_bins = (np.abs(C_bins) ** 2) / n2[:, None]
        target = member / K
        resid = P_bins - target
        loss = np.einsum("ij,ij->i", resid, resid) / grid.M      # per-sample MSE
        S_bins = 2.0 * resid / grid.M                            # dL/dP_bins

        dOR = np.zeros_like(OR)
        dOI = np.zeros_like(OI)
        qacc = np.zeros(B)
        self._accumulate_probe_grad(S_bins, C_bins, self.bins_A, n2, dOR, dOI, qacc)

        if self.rule == "1bit":
            loss += self._power_hinge(V, n2, member, dOR, dOI, qacc)
        else:
            loss += self._nu_hinge(C_bins, n2, query_bins, member, dOR, dOI, qacc)

        # norm term shared by every probe power: dp/dO includes -p*2*O/n2
        dOR -= (2.0 * qacc / n2)[:, None] * OR
        dOI -= (2.0 * qacc / n2)[:, None] * OI

        dL_dO = np.concatenate([dOR, dOI], axis=1) / B
        return float(loss.mean()), dL_dO

    def _power_hinge(self, V, n2, member, dOR, dOI, qacc):
        grid = self.grid
        B = V.shape[0]
        C = self._responses(V, self.sec_A)                       # (B, M*k)
        P = (np.abs(C) ** 2) / n2[:, None]
        msec = np.repeat(member, grid.k, axis=1)
        p_in = np.where(msec, P, np.inf).min(axis=1)
        i_in = np.where(msec, P, np.inf).argmin(axis=1)
        has_out = ~msec.all(axis=1)
        p_out = np.where(~msec, P, -np.inf).max(axis=1)
        i_out = np.where(~msec, P, -np.inf).argmax(axis=1)
        h = self.margin + p_out - p_in
        active = (h > 0) & has_out
        S = np.zeros_like(P)
        rows = np.flatnonzero(active)
        S[rows, i_out[rows]] += 1.0
        S[rows, i_in[rows]] -= 1.0
        self._accumulate_probe_grad(S, C, self.sec_A, n2, dOR, dOI, qacc)
        return np.where(active, h, 0.0)

    def _nu_hinge(self, C_bins, n2, query_bins, member, dOR, dOI, qacc):
        grid = self.grid
        B, K = query_bins.shape
        Cq = np.take_along_axis(C_bins, query_bins - 1, axis=1)  # (B, K)
        D = Cq[:, :, None] - C_bins[:, None, :]                  # (B, K, M)
        Pt = (np.abs(D) ** 2) / n2[:, None, None]
        in3 = np.broadcast_to(member[:, None, :], Pt.shape)
        # nu_min over the region <-> largest in-region pair distance
        pt_in = np.where(in3, Pt, -np.inf).reshape(B, -1)
        j_in = pt_in.argmax(axis=1)
        pt_in_max = pt_in[np.arange(B), j_in]
        has_out = ~member.all(axis=1)
        pt_out = np.where(~in3, Pt, np.inf).reshape(B, -1)
        j_out = pt_out.argmin(axis=1)
        pt_out_min = np.where(has_out, pt_out[np.arange(B), j_out], np.inf)
        nu_min = np.exp(-pt_in_max)
        nu_max = np.exp(-pt_out_min)
        h = self.margin + nu_max - nu_min
        active = (h > 0) & has_out
        # chain: dL/d(pt_in_max) = +exp(-pt_in_max), dL/d(pt_out_min) = -exp(-pt_out_min)
        for rows, flat_idx, sgn, pt_val in (
            (np.flatnonzero(active), j_in, +1.0, nu_min),
            (np.flatnonzero(active), j_out, -1.0, nu_max),
        ):
            if rows.size == 0:
                continue
            jj = flat_idx[rows] // grid.M
            mm = flat_idx[rows] % grid.M
            a = self.bins_A[query_bins[rows, jj] - 1] - self.bins_A[mm]   # (r, N)
            c = D[rows, jj, mm]
            s = sgn * pt_val[rows]
            x, y = c.real, c.imag
            scale = 2.0 * s / n2[rows]
            dOR[rows] += scale[:, None] * (x[:, None] * a.real - y[:, None] * a.imag)
            dOI[rows] += scale[:, None] * (x[:, None] * a.imag + y[:, None] * a.real)
            qacc[rows] += s * (x * x + y * y) / n2[rows]
        return np.where(active, h, 0.0)


def loss_and_param_grads(model: MlpModel, loss: SeparationLoss,
                         X: np.ndarray, query_bins: np.ndarray):
    """Mean loss and analytic gradients for every parameter of ``model``."""
    O, cache = model.forward_batch(X, keep_cache=True)
    value, dL_dO = loss.value_and_grad(O, query_bins)
    return value, model.backward_batch(cache, dL_dO)


def _sample_queries(rng: np.random.Generator, M: int, K: int, count: int) -> np.ndarray:
    out = np.empty((count, K), dtype=np.int64)
    for s in range(count):
        out[s] = np.sort(rng.choice(M, size=K, replace=False)) + 1
    return out


def _build_inputs(query_bins: np.ndarray, sec_A: np.ndarray, k: int) -> np.ndarray:
    """Assemble network inputs for a batch of queries from the secondary
    steering matrix (rows grouped k per sub-interval, ascending)."""
    B, K = query_bins.shape
    rows = ((query_bins - 1)[:, :, None] * k + np.arange(k)[None, None, :]).reshape(B, K * k)
    stacks = sec_A[rows]                                          # (B, K*k, N)
    return np.concatenate(
        [stacks.real.reshape(B, -1), stacks.imag.reshape(B, -1)], axis=1)


def train(config: TrainConfig, grid: AngleGrid, K: int, rule: str = "1bit",
          log=None) -> MlpModel:
    """Train the query->beamformer network for one query size.

    Returns the parameters with the best validation loss. Dataset is
    ``dataset_size`` random size-K queries with a fixed-seed train/validation
    split; epochs are ``batches_per_epoch`` Adam steps.
    """
    if not 1 <= K <= grid.M:
        raise ValueError(f"K={K} outside [1..{grid.M}]")
    rng = np.random.default_rng(config.seed)
    loss_fn = SeparationLoss(grid, rule=rule, margin=config.margin)

    queries = _sample_queries(rng, grid.M, K, config.dataset_size)
    n_val = max(1, int(round(config.val_fraction * config.dataset_size)))
    val_q, train_q = queries[:n_val], queries[n_val:]
    n_train = len(train_q)
    bs = min(config.batch_size, n_train)

    model = init_model(default_widths(grid, K), rng)
    model.trained_for_K = K
    adam = Adam(config.learning_rate)

    def eval_loss(qs):
        total = 0.0
        for lo in range(0, len(qs), 1024):
            chunk = qs[lo:lo + 1024]
            X = _build_inputs(chunk, loss_fn.sec_A, grid.k)
            O = model.forward_batch(X)
            v, _ = loss_fn.value_and_grad(O, chunk)
            total += v * len(chunk)
        return total / len(qs)

    best_val = np.inf
    best_params = model.copy_params()
    best_epoch = -1
    history = {"train": [], "val": []}
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        for b in range(config.batches_per_epoch):
            idx = np.take(perm, np.arange(b * bs, (b + 1) * bs), mode="wrap")
            batch = train_q[idx]
            X = _build_inputs(batch, loss_fn.sec_A, grid.k)
            value, grads = loss_and_param_grads(model, loss_fn, X, batch)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b} (K={K}, rule={rule})")
            adam.step(model.params(), grads)
            epoch_loss += value
        history["train"].append(epoch_loss / config.batches_per_epoch)
        val = eval_loss(val_q)
        history["val"].append(val)
        if log is not None:
            log(f"epoch {epoch:3d}  train {history['train'][-1]:.6f}  val {val:.6f}")
        if val < best_val - 1e-12:
            best_val, best_epoch = val, epoch
            best_params = model.copy_params()
        elif epoch - best_epoch >= config.patience:
            break

    model.set_params(best_params)
    model.metadata = {
        "grid": {"theta_min": grid.theta_min, "theta_max": grid.theta_max,
                 "M": grid.M, "k": grid.k, "N_R": grid.N_R,
                 "d_over_lambda": grid.d_over_lambda},
        "rule": rule,
        "loss": loss_fn.name,
        "margin": config.margin,
        "seed": config.seed,
        "learning_rate": config.learning_rate,
        "dataset_size": config.dataset_size,
        "epochs_trained": len(history["train"]),
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "train_history": history["train"],
        "val_history": history["val"],
    }
    return model


def save(model: MlpModel, path) -> None:
    """Self-describing container: magic, version, JSON header, float64 LE arrays."""
    header = {
        "widths": model.widths,
        "activation": model.activation,
        "trained_for_K": model.trained_for_K,
        "metadata": model.metadata,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([FORMAT_VERSION, len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        for arr in model.params():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> MlpModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a model file")
    off = len(MAGIC)
    version, hlen = np.frombuffer(raw, dtype="<u4", count=2, offset=off)
    off += 8
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[off: off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from exc
    off += int(hlen)
    widths = header["widths"]
    shapes = [(a, b) for a, b in zip(widths[:-1], widths[1:])] + [(b,) for b in widths[1:]]
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        if off + 8 * count > len(raw):
            raise ModelFormatError(f"{path}: truncated weight data")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                      .reshape(shape).copy())
        off += 8 * count
    if off != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - off} trailing bytes")
    L = len(widths) - 1
    return MlpModel(widths, arrays[:L], arrays[L:],
                    activation=header["activation"],
                    trained_for_K=header["trained_for_K"],
                    metadata=header["metadata"])


def model_filename(grid: AngleGrid, K: int, rule: str) -> str:
    return f"mlp_M{grid.M}_NR{grid.N_R}_k{grid.k}_K{K}_{rule}.bamlp"


def load_for(model_dir, grid: AngleGrid, K: int, rule: str) -> MlpModel:
    """Load the model trained for (grid, K, rule), verifying its metadata."""
    path = os.path.join(model_dir, model_filename(grid, K, rule))
    if not os.path.exists(path):
        raise ModelNotFoundError(f"no trained model at {path}")
    model = load(path)
    g = model.metadata.get("grid", {})
    expect = {"theta_min": grid.theta_min, "theta_max": grid.theta_max,
              "M": grid.M, "k": grid.k, "N_R": grid.N_R,
              "d_over_lambda": grid.d_over_lambda}
    if model.trained_for_K != K or any(g.get(key) != val for key, val in expect.items()):
        raise ModelNotFoundError(f"{path}: trained for a different grid or query size")
    return model
