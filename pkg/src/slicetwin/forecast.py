"""Sequential demand forecasting.

Four interchangeable forecasters sit behind one observe/predict interface:
a last-value baseline, a recursive-least-squares autoregressive model, a
gated recurrent encoder-decoder trained online, and a perfect-foresight
oracle that reads the pre-generated workload.  All of them track an
exponentially weighted residual variance that downstream risk estimation
treats as the forecast noise scale.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import streams
from .domain import ScenarioConfig, TelemetryVector
from .textio import round9

RESIDUAL_DECAY = 0.99
MIN_NORM_OBSERVATIONS = 10


class HistoryWindow:
    """Ring buffer of the most recent telemetry vectors, oldest first."""

    def __init__(self, capacity: int):
        self._items: deque[TelemetryVector] = deque(maxlen=capacity)

    def push(self, item: TelemetryVector) -> None:
        self._items.append(item)

    def items(self) -> list[TelemetryVector]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


@dataclass(frozen=True)
class Forecast:
    point: tuple[float, ...]  # predicted rates for the next h slots, req/ms
    residual_std: float


class Forecaster:
    """Shared observe/predict machinery and residual tracking.

    Subclasses implement _update (consume one telemetry vector) and
    _point_estimate (h raw rate predictions from current state).
    """

    def __init__(self, default_rate: float):
        self.default_rate = default_rate
        self.history = HistoryWindow(256)
        self._observations = 0
        self._ew_var = 0.0
        self._last_rate = None

    def observe(self, telemetry: TelemetryVector) -> None:
        rate = telemetry.lambda_
        if self._observations > 0:
            residual = rate - self._point_estimate(1)[0]
            self._ew_var = RESIDUAL_DECAY * self._ew_var + (1.0 - RESIDUAL_DECAY) * residual ** 2
        self._observations += 1
        self.history.push(telemetry)
        self._last_rate = rate
        self._update(telemetry)

    def predict(self, h: int) -> Forecast:
        point = tuple(round9(max(0.0, v)) for v in self._point_estimate(h))
        return Forecast(point=point, residual_std=round9(self.residual_std()))

    def residual_std(self) -> float:
        return math.sqrt(max(self._ew_var, 0.0))

    def _fallback(self, h: int) -> list[float]:
        base = self.default_rate if self._last_rate is None else self._last_rate
        return [base] * h

    # subclass hooks
    def _update(self, telemetry: TelemetryVector) -> None:
        raise NotImplementedError

    def _point_estimate(self, h: int) -> list[float]:
        raise NotImplementedError


class LastValueForecaster(Forecaster):
    """Carries the latest observed rate forward over the whole horizon."""

    def _update(self, telemetry: TelemetryVector) -> None:
        pass

    def _point_estimate(self, h: int) -> list[float]:
        return self._fallback(h)


class ARForecaster(Forecaster):
    """Autoregressive model with bias, fitted by recursive least squares.

    Multi-step predictions iterate the one-step model on its own output,
    clamped to a sane range so transiently unstable coefficients cannot
    run away.
    """

    def __init__(self, default_rate: float, order: int = 3, forgetting: float = 1.0):
        # Forgetting < 1 winds up the covariance on weakly exciting input
        # (demand is near-constant between bursts) and eventually makes the
        # weights spike; plain RLS stays stable on these workloads.
        super().__init__(default_rate)
        self.order = order
        self._ff = forgetting
        dim = order + 1
        self._w = [0.0] * dim
        self._p = [[1000.0 if i == j else 0.0 for j in range(dim)] for i in range(dim)]
        self._recent: deque[float] = deque(maxlen=order)  # newest first
        self._max_seen = default_rate
        self._fitted = 0

    def _update(self, telemetry: TelemetryVector) -> None:
        y = telemetry.lambda_
        self._max_seen = max(self._max_seen, y)
        if len(self._recent) == self.order:
            x = list(self._recent) + [1.0]
            self._rls_step(x, y)
            self._fitted += 1
        self._recent.appendleft(y)

    def _rls_step(self, x: list[float], y: float) -> None:
        dim = len(x)
        p = self._p
        px = [sum(p[i][j] * x[j] for j in range(dim)) for i in range(dim)]
        denom = self._ff + sum(x[i] * px[i] for i in range(dim))
        k = [v / denom for v in px]
        err = y - sum(self._w[i] * x[i] for i in range(dim))
        for i in range(dim):
            self._w[i] += k[i] * err
        inv_ff = 1.0 / self._ff
        for i in range(dim):
            ki = k[i]
            row = p[i]
            for j in range(dim):
                row[j] = (row[j] - ki * px[j]) * inv_ff

    def _point_estimate(self, h: int) -> list[float]:
        if self._fitted < 1 or len(self._recent) < self.order:
            return self._fallback(h)
        cap = 5.0 * max(self._max_seen, self.default_rate, 1e-9)
        window = list(self._recent)
        w = self._w
        preds = []
        for _ in range(h):
            yhat = sum(w[i] * window[i] for i in range(self.order)) + w[self.order]
            yhat = min(max(yhat, 0.0), cap)
            preds.append(yhat)
            window = [yhat] + window[:-1]
        return preds


class OracleForecaster(Forecaster):
    """Perfect foresight: reads the realized rate series of its slice.

    Assumes exactly one observation per slot; delay_offset is the lag
    between the engine slot and the slot of the observation it is fed, so
    returned entries line up with realized future slots.
    """

    def __init__(self, rate_series: np.ndarray, delay_offset: int = 0):
        super().__init__(default_rate=float(rate_series[0]) if len(rate_series) else 0.0)
        self._series = rate_series
        self._delay = delay_offset

    def _update(self, telemetry: TelemetryVector) -> None:
        pass

    def _point_estimate(self, h: int) -> list[float]:
        last = len(self._series) - 1
        base = self._observations - 1 - self._delay
        return [float(self._series[min(max(base + j, 0), last)]) for j in range(1, h + 1)]


# --- gated recurrent encoder-decoder -------------------------------------

@dataclass
class TrainingSample:
    """One normalized training instance for the recurrent model."""

    inputs: np.ndarray   # (window, features)
    first_input: float   # normalized rate the decoder starts from
    targets: np.ndarray  # (horizon,) normalized rates


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class GruCell:
    """Single gated recurrent cell with fused gate weights."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        scale = 1.0 / math.sqrt(hidden_size + input_size)
        self.Wg = rng.normal(0.0, scale, size=(input_size + hidden_size, 2 * hidden_size))
        self.bg = np.zeros(2 * hidden_size)
        self.Wc = rng.normal(0.0, scale, size=(input_size + hidden_size, hidden_size))
        self.bc = np.zeros(hidden_size)

    def forward(self, x: np.ndarray, h_prev: np.ndarray):
        hs = self.hidden_size
        v = np.concatenate((x, h_prev))
        a = v @ self.Wg + self.bg
        z = _sigmoid(a[:hs])
        r = _sigmoid(a[hs:])
        u = np.concatenate((x, r * h_prev))
        c = np.tanh(u @ self.Wc + self.bc)
        h = (1.0 - z) * h_prev + z * c
        return h, (v, u, z, r, c, h_prev)

    def backward(self, dh: np.ndarray, cache, gWg, gbg, gWc, gbc):
        v, u, z, r, c, h_prev = cache
        d = self.input_size
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        gWc += np.outer(u, dac)
        gbc += dac
        du = self.Wc @ dac
        dx = du[:d].copy()
        drh = du[d:]
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        da = np.concatenate((dz * z * (1.0 - z), dr * r * (1.0 - r)))
        gWg += np.outer(v, da)
        gbg += da
        dv = self.Wg @ da
        dx += dv[:d]
        dh_prev = dh_prev + dv[d:]
        return dx, dh_prev


class RecurrentForecaster(Forecaster):
    """Encoder-decoder of gated recurrent cells, trained online.

    The encoder digests a window of normalized telemetry; the decoder
    rolls the horizon forward feeding each prediction back as its next
    input.  One optimizer step runs per observation once enough history
    exists, on the most recent fully observed (window, horizon) pair.
    """

    PARAM_NAMES = ("enc_Wg", "enc_bg", "enc_Wc", "enc_bc",
                   "dec_Wg", "dec_bg", "dec_Wc", "dec_bc", "out_W", "out_b")

    def __init__(self, default_rate: float, horizon: int, hidden_size: int = 64,
                 learning_rate: float = 0.001, window: int = 8, features: str = "full",
                 rng: np.random.Generator | None = None):
        super().__init__(default_rate)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.horizon = horizon
        self.hidden_size = hidden_size
        self.window = window
        self.n_features = 4 if features == "full" else 1
        self.learning_rate = learning_rate
        self.encoder = GruCell(self.n_features, hidden_size, rng)
        self.decoder = GruCell(1, hidden_size, rng)
        self.out_W = rng.normal(0.0, 0.01, size=hidden_size)
        self.out_b = np.zeros(1)
        self._adam_m = {n: np.zeros_like(p) for n, p in self._params().items()}
        self._adam_v = {n: np.zeros_like(p) for n, p in self._params().items()}
        self._adam_t = 0
        self._raw: deque[np.ndarray] = deque(maxlen=max(window + horizon, 64))
        self._count = 0
        self._mean = np.zeros(self.n_features)
        self._m2 = np.zeros(self.n_features)
        self._max_seen = default_rate

    # --- parameter plumbing ---

    def _params(self) -> dict[str, np.ndarray]:
        return {
            "enc_Wg": self.encoder.Wg, "enc_bg": self.encoder.bg,
            "enc_Wc": self.encoder.Wc, "enc_bc": self.encoder.bc,
            "dec_Wg": self.decoder.Wg, "dec_bg": self.decoder.bg,
            "dec_Wc": self.decoder.Wc, "dec_bc": self.decoder.bc,
            "out_W": self.out_W, "out_b": self.out_b,
        }

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params().values())

    # --- normalization ---

    def _features_of(self, t: TelemetryVector) -> np.ndarray:
        if self.n_features == 4:
            return np.array([t.lambda_, t.rho, t.gamma, t.eta])
        return np.array([t.lambda_])

    def _stats(self):
        if self._count < 2:
            return self._mean, np.ones(self.n_features)
        std = np.sqrt(self._m2 / (self._count - 1))
        return self._mean, np.maximum(std, 1e-6)

    def _normalize(self, rows: np.ndarray) -> np.ndarray:
        mean, std = self._stats()
        return (rows - mean) / std

    def _denorm_rate(self, y: float) -> float:
        mean, std = self._stats()
        return y * std[0] + mean[0]

    def _norm_rate(self, y: float) -> float:
        mean, std = self._stats()
        return (y - mean[0]) / std[0]

    # --- online training ---

    def _update(self, telemetry: TelemetryVector) -> None:
        row = self._features_of(telemetry)
        self._max_seen = max(self._max_seen, telemetry.lambda_)
        self._count += 1
        delta = row - self._mean
        self._mean += delta / self._count
        self._m2 += delta * (row - self._mean)
        self._raw.append(row)
        if self._count >= MIN_NORM_OBSERVATIONS and len(self._raw) >= self.window + self.horizon:
            rows = np.array(list(self._raw)[-(self.window + self.horizon):])
            norm = self._normalize(rows)
            sample = TrainingSample(
                inputs=norm[:self.window],
                first_input=float(norm[self.window - 1, 0]),
                targets=norm[self.window:, 0].copy(),
            )
            self.train_step(sample)

    def _rollout(self, inputs: np.ndarray, first_input: float, steps: int,
                 with_cache: bool = False):
        h = np.zeros(self.hidden_size)
        enc_caches = []
        for t in range(inputs.shape[0]):
            h, cache = self.encoder.forward(inputs[t], h)
            enc_caches.append(cache)
        d = h
        y_prev = first_input
        preds = np.empty(steps)
        dec_caches = []
        dec_hiddens = []
        for j in range(steps):
            d, cache = self.decoder.forward(np.array([y_prev]), d)
            y = float(d @ self.out_W + self.out_b[0])
            preds[j] = y
            y_prev = y
            if with_cache:
                dec_caches.append(cache)
                dec_hiddens.append(d)
        if with_cache:
            return preds, enc_caches, dec_caches, dec_hiddens
        return preds

    def forward_loss(self, sample: TrainingSample, loss_scale: float = 1.0) -> float:
        preds = self._rollout(sample.inputs, sample.first_input, len(sample.targets))
        return loss_scale * float(np.mean((preds - sample.targets) ** 2))

    def loss_and_grads(self, sample: TrainingSample, loss_scale: float = 1.0):
        steps = len(sample.targets)
        preds, enc_caches, dec_caches, dec_hiddens = self._rollout(
            sample.inputs, sample.first_input, steps, with_cache=True)
        loss = loss_scale * float(np.mean((preds - sample.targets) ** 2))
        grads = {n: np.zeros_like(p) for n, p in self._params().items()}
        dpred = loss_scale * 2.0 * (preds - sample.targets) / steps

        dd_next = np.zeros(self.hidden_size)
        dy_feedback = 0.0
        for j in range(steps - 1, -1, -1):
            dy = dpred[j] + dy_feedback
            grads["out_W"] += dec_hiddens[j] * dy
            grads["out_b"][0] += dy
            dd = self.out_W * dy + dd_next
            dx, dd_next = self.decoder.backward(
                dd, dec_caches[j],
                grads["dec_Wg"], grads["dec_bg"], grads["dec_Wc"], grads["dec_bc"])
            dy_feedback = float(dx[0])

        dh = dd_next
        for t in range(len(enc_caches) - 1, -1, -1):
            _, dh = self.encoder.backward(
                dh, enc_caches[t],
                grads["enc_Wg"], grads["enc_bg"], grads["enc_Wc"], grads["enc_bc"])
        return loss, grads

    def train_step(self, sample: TrainingSample) -> float:
        loss, grads = self.loss_and_grads(sample)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > 1.0:
            scale = 1.0 / norm
            for g in grads.values():
                g *= scale
        self._adam_t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** self._adam_t
        c2 = 1.0 - b2 ** self._adam_t
        for name, p in self._params().items():
            g = grads[name]
            m = self._adam_m[name]
            v = self._adam_v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
        if not all(np.all(np.isfinite(p)) for p in self._params().values()):
            raise FloatingPointError("recurrent forecaster parameters diverged")
        return loss

    def _point_estimate(self, h: int) -> list[float]:
        if self._count < MIN_NORM_OBSERVATIONS or len(self._raw) < self.window:
            return self._fallback(h)
        rows = np.array(list(self._raw)[-self.window:])
        norm = self._normalize(rows)
        preds = self._rollout(norm, float(norm[-1, 0]), h)
        cap = 5.0 * max(self._max_seen, self.default_rate, 1e-9)
        return [min(max(self._denorm_rate(float(y)), 0.0), cap) for y in preds]


def random_sample(model: RecurrentForecaster, rng: np.random.Generator,
                  steps: int | None = None) -> TrainingSample:
    """Random normalized-domain sample, for gradient checks and tests."""
    steps = steps if steps is not None else model.horizon
    return TrainingSample(
        inputs=rng.standard_normal((model.window, model.n_features)),
        first_input=float(rng.standard_normal()),
        targets=rng.standard_normal(steps),
    )


def gradient_check(model: RecurrentForecaster, sample: TrainingSample,
                   n_params: int = 120, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences."""
    _, grads = model.loss_and_grads(sample)
    params = model._params()
    names = list(RecurrentForecaster.PARAM_NAMES)
    sizes = [params[n].size for n in names]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    worst = 0.0
    for flat in sorted(int(i) for i in picks):
        offset = flat
        for name, size in zip(names, sizes):
            if offset < size:
                break
            offset -= size
        p = params[name].reshape(-1)
        keep = p[offset]
        p[offset] = keep + step
        up = model.forward_loss(sample)
        p[offset] = keep - step
        down = model.forward_loss(sample)
        p[offset] = keep
        fd = (up - down) / (2.0 * step)
        analytic = float(grads[name].reshape(-1)[offset])
        rel = abs(analytic - fd) / max(1e-8, abs(analytic), abs(fd))
        worst = max(worst, rel)
    return worst


def make_forecaster(config: ScenarioConfig, slice_index: int, default_rate: float,
                    seed: int, oracle_rates: np.ndarray | None = None) -> Forecaster:
    kind = config.forecaster_kind
    if kind == "last_value":
        return LastValueForecaster(default_rate)
    if kind == "ar":
        return ARForecaster(default_rate, order=config.ar_order)
    if kind == "recurrent":
        rng = streams.make_rng(seed, streams.MODEL_INIT, slice_index)
        return RecurrentForecaster(
            default_rate, horizon=config.prediction_horizon,
            hidden_size=config.recurrent_hidden_size,
            learning_rate=config.recurrent_learning_rate,
            window=config.recurrent_window,
            features=config.forecast_features, rng=rng)
    if kind == "oracle":
        if oracle_rates is None:
            raise ValueError("oracle forecaster needs the realized rate series")
        delay = config.twin_update_interval_slots - 1 + config.sync_delay_slots
        return OracleForecaster(oracle_rates, delay_offset=delay)
    raise ValueError(f"unknown forecaster kind {kind!r}")
