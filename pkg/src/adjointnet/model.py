"""The adjoint forecaster: main LSTM + feed-forward network, ancillary
calendar network, and a ReLU-weighted combiner, behind a scikit-learn style
estimator interface."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.metrics import r2_score
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .autograd import Adam, Tensor, backward, count_parameters, mul, no_grad, relu, rmse_loss
from .exceptions import DimensionError, DomainError, TrainingError
from .layers import DropoutSpec, LstmLayer, build_dense_stack, dense_forward, lstm_encode
from .validation import check_binary, check_targets, check_windows, substream

logger = logging.getLogger(__name__)

_PREDICT_CHUNK = 256


def combine(y_main, y_anc, w1, w2):
    """Elementwise ``ReLU(w1 * y_main + w2 * y_anc)`` on plain arrays."""
    y_main = np.asarray(y_main, dtype=np.float64)
    y_anc = np.asarray(y_anc, dtype=np.float64)
    if y_main.shape != y_anc.shape:
        raise DimensionError(f"combine: main output {y_main.shape} vs ancillary output {y_anc.shape}")
    return np.maximum(np.asarray(w1) * y_main + np.asarray(w2) * y_anc, 0.0)


@dataclass
class StageLog:
    """Per-epoch RMSE history (degrees) of one training stage."""

    name: str
    train_rmse: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False


@dataclass
class TrainingReport:
    stages: dict
    n_parameters: int
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing=False):
        out = {"stages": {k: asdict(v) for k, v in self.stages.items()}, "n_parameters": self.n_parameters}
        if include_timing:
            out["wall_clock_seconds"] = self.wall_clock
        return out


class AdjointForecaster(BaseEstimator):
    """Multi-horizon forecaster with an ancillary calendar network.

    The main network encodes a ``(lookback, n_features)`` window with a
    stacked LSTM and maps the final states of every layer through a deep
    ReLU feed-forward stack to ``horizon`` outputs. The ancillary network maps
    0/1 calendar indicators through a shallow stack to the same ``horizon``
    outputs. The forecast is ``ReLU(w1 * main + w2 * ancillary)`` in target
    units.

    Training runs in stages: the main network alone, the ancillary network
    alone, then only ``(w1, w2)`` with both subnetworks frozen. Each stage
    minimises RMSE against the targets and early-stops on validation RMSE
    when ``eval_set`` is given.

    Parameters
    ----------
    lookback, horizon : int
        Input window length and number of forecast steps.
    lstm_hidden, lstm_layers : int
        Width and depth of the main LSTM encoder.
    main_widths : tuple of int
        Hidden widths of the main feed-forward stack; an identity output layer
        of size ``horizon`` is appended.
    anc_widths : tuple of int
        Hidden widths of the ancillary stack (output layer appended).
    anc_lstm_hidden : int or None
        If set, the ancillary indicators pass through a one-layer LSTM first.
    dropout : float
        Dropout rate after every hidden dense layer, used while training and
        for Monte-Carlo sampling.
    use_ancillary : bool
        ``False`` gives the plain main-network model.
    combiner : {"scalar", "per_step"}
        Shape of the combiner weights.
    joint_finetune : bool
        After the combiner stage, train every parameter jointly.
    epochs : int or tuple of int
        Epochs for the main and ancillary stages (one int, or one per stage).
    combiner_epochs : int
        Epochs for the combiner stage (and joint fine-tuning, if enabled).
    batch_size, learning_rate, combiner_learning_rate, patience : numbers
        Optimisation settings. ``patience`` counts epochs without validation
        improvement before a stage stops; the best parameters are restored.
    max_batches_per_epoch : int or None
        Cap on mini-batches per epoch (drawn from a fresh shuffle each epoch).
    random_state : int
        Root seed; every stochastic choice derives from it.
    """

    def __init__(
        self,
        lookback=96,
        horizon=96,
        lstm_hidden=64,
        lstm_layers=2,
        main_widths=(128, 128, 128, 112, 112, 96),
        anc_widths=(32, 48, 64),
        anc_lstm_hidden=None,
        dropout=0.1,
        use_ancillary=True,
        combiner="scalar",
        joint_finetune=False,
        epochs=20,
        combiner_epochs=20,
        batch_size=64,
        learning_rate=1e-3,
        combiner_learning_rate=1e-2,
        patience=5,
        max_batches_per_epoch=None,
        random_state=0,
        verbose=False,
    ):
        self.lookback = lookback
        self.horizon = horizon
        self.lstm_hidden = lstm_hidden
        self.lstm_layers = lstm_layers
        self.main_widths = main_widths
        self.anc_widths = anc_widths
        self.anc_lstm_hidden = anc_lstm_hidden
        self.dropout = dropout
        self.use_ancillary = use_ancillary
        self.combiner = combiner
        self.joint_finetune = joint_finetune
        self.epochs = epochs
        self.combiner_epochs = combiner_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.combiner_learning_rate = combiner_learning_rate
        self.patience = patience
        self.max_batches_per_epoch = max_batches_per_epoch
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------------
    # construction

    def build(self, n_features, anc_shape=None):
        """Initialise all parameters for ``n_features`` main inputs.

        ``anc_shape`` is ``(steps, n_indicators)`` of one ancillary window;
        required when ``use_ancillary`` is set.
        """
        if self.combiner not in ("scalar", "per_step"):
            raise DomainError(f"combiner must be 'scalar' or 'per_step', got {self.combiner!r}")
        for name in ("lookback", "horizon", "lstm_hidden", "lstm_layers", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be positive")
        self._dropout_spec(None)
        rng = substream(self.random_state, "init")
        h = int(self.lstm_hidden)
        self.main_lstm_ = []
        n_in = int(n_features)
        for k in range(int(self.lstm_layers)):
            self.main_lstm_.append(LstmLayer(n_in, h, rng, name=f"main.lstm{k}"))
            n_in = h
        self.main_net_ = build_dense_stack(2 * h * int(self.lstm_layers), self.main_widths, self.horizon, rng, "main.dense")
        self.anc_lstm_, self.anc_net_, self.w1_, self.w2_ = [], [], None, None
        if self.use_ancillary:
            if anc_shape is None:
                raise DomainError("ancillary network needs the ancillary window shape")
            steps, k = anc_shape
            if self.anc_lstm_hidden:
                self.anc_lstm_ = [LstmLayer(k, int(self.anc_lstm_hidden), rng, name="anc.lstm0")]
                anc_in = 2 * int(self.anc_lstm_hidden)
            else:
                anc_in = steps * k
            self.anc_net_ = build_dense_stack(anc_in, self.anc_widths, self.horizon, rng, "anc.dense")
            wshape = () if self.combiner == "scalar" else (self.horizon,)
            self.w1_ = Tensor(np.full(wshape, 0.5), requires_grad=True, name="combiner.w1")
            self.w2_ = Tensor(np.full(wshape, 0.5), requires_grad=True, name="combiner.w2")
        self.anc_shape_ = None if anc_shape is None else tuple(int(v) for v in anc_shape)
        self.n_features_in_ = int(n_features)
        self.x_mean_ = np.zeros(self.n_features_in_)
        self.x_scale_ = np.ones(self.n_features_in_)
        self.y_mean_ = 0.0
        self.y_scale_ = 1.0
        return self

    def parameter_groups(self):
        groups = {"main": [p for layer in self.main_lstm_ + self.main_net_ for p in layer.parameters()]}
        if self.use_ancillary:
            groups["ancillary"] = [p for layer in self.anc_lstm_ + self.anc_net_ for p in layer.parameters()]
            groups["combiner"] = [self.w1_, self.w2_]
        return groups

    def parameters(self):
        return [p for ps in self.parameter_groups().values() for p in ps]

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def n_parameters(self):
        return count_parameters(self.parameters())

    def main_only(self):
        """A plain (no ancillary network) model sharing a copy of the main network."""
        check_is_fitted(self, "main_net_")
        plain = copy.deepcopy(self)
        plain.use_ancillary = False
        plain.anc_lstm_, plain.anc_net_, plain.w1_, plain.w2_ = [], [], None, None
        plain.anc_shape_ = None
        return plain

    # ------------------------------------------------------------------
    # forward passes

    def _dropout_spec(self, mode):
        return DropoutSpec(float(self.dropout), mode or "off")

    def _norm_x(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def _main_graph(self, Xn, spec, rng):
        z = lstm_encode(self.main_lstm_, Xn)
        return dense_forward(self.main_net_, z, spec, rng)

    def _anc_input(self, A):
        if self.anc_lstm_:
            return lstm_encode(self.anc_lstm_, A)
        return Tensor._result(A.reshape(A.shape[0], -1), (), None, "input")

    def _anc_graph(self, A, spec, rng):
        return dense_forward(self.anc_net_, self._anc_input(A), spec, rng)

    def _to_units(self, t):
        return t * self.y_scale_ + self.y_mean_

    def _combined_graph(self, m_units, a_units):
        return relu(mul(m_units, self.w1_) + mul(a_units, self.w2_))

    def _check_main(self, window):
        X = check_windows(window, "window", ndim=np.ndim(window))
        flat = X.ndim == 2
        if flat:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.lookback, self.n_features_in_):
            raise DimensionError(
                f"main window must be (lookback={self.lookback}, features={self.n_features_in_}), got {np.shape(window)}"
            )
        return X, flat

    def _check_anc(self, anc_window):
        A = check_binary(check_windows(anc_window, "anc_window", ndim=np.ndim(anc_window)), "anc_window")
        flat = A.ndim == 2
        if flat:
            A = A[None]
        if A.ndim != 3 or A.shape[1:] != self.anc_shape_:
            raise DimensionError(f"ancillary window must be {self.anc_shape_}, got {np.shape(anc_window)}")
        return A, flat

    def _chunks(self, n):
        for s in range(0, n, _PREDICT_CHUNK):
            yield slice(s, min(n, s + _PREDICT_CHUNK))

    def forward_main(self, window):
        """Main-network forecast in target units for one window or a batch."""
        check_is_fitted(self, "main_net_")
        X, flat = self._check_main(window)
        out = np.empty((len(X), self.horizon))
        with no_grad():
            for sl in self._chunks(len(X)):
                out[sl] = self._main_graph(self._norm_x(X[sl]), self._dropout_spec(None), None).data
        out = out * self.y_scale_ + self.y_mean_
        return out[0] if flat else out

    def forward_ancillary(self, anc_window):
        """Ancillary-network forecast in target units from 0/1 indicators."""
        check_is_fitted(self, "main_net_")
        if not self.use_ancillary:
            raise DomainError("model was built without an ancillary network")
        A, flat = self._check_anc(anc_window)
        out = np.empty((len(A), self.horizon))
        with no_grad():
            for sl in self._chunks(len(A)):
                out[sl] = self._anc_graph(A[sl], self._dropout_spec(None), None).data
        out = out * self.y_scale_ + self.y_mean_
        return out[0] if flat else out

    def combine(self, y_main, y_anc):
        check_is_fitted(self, "w1_")
        if self.w1_ is None:
            raise DomainError("model was built without a combiner")
        return combine(y_main, y_anc, self.w1_.data, self.w2_.data)

    def predict(self, X, X_anc=None):
        """Deterministic point forecast (dropout off), shape ``(n, horizon)``."""
        y_main = self.forward_main(X)
        if not self.use_ancillary:
            return y_main
        if X_anc is None:
            raise DomainError("X_anc is required by a model with an ancillary network")
        return self.combine(y_main, self.forward_ancillary(X_anc))

    def predict_moments(self, X, X_anc=None, n_samples=100, seed=0):
        """Per-step mean and std of ``n_samples`` Monte-Carlo dropout forecasts."""
        from .uncertainty import mc_moments

        check_is_fitted(self, "main_net_")
        return mc_moments(self, X, X_anc, n=n_samples, seed=seed)

    def score(self, X, y, X_anc=None):
        return r2_score(np.asarray(y).reshape(len(y), -1), self.predict(X, X_anc).reshape(len(y), -1))

    # ------------------------------------------------------------------
    # training

    def _stage_epochs(self):
        e = self.epochs
        if isinstance(e, (tuple, list)):
            if len(e) != 2:
                raise DomainError("epochs must be an int or a (main, ancillary) pair")
            return int(e[0]), int(e[1])
        return int(e), int(e)

    def fit(self, X, y, X_anc=None, eval_set=None):
        """Train on windows ``X`` ``(n, lookback, features)`` and targets ``y`` ``(n, horizon)``.

        Parameters
        ----------
        X_anc : array of shape (n, steps, indicators), optional
            0/1 calendar indicators; required when ``use_ancillary``.
        eval_set : tuple, optional
            ``(X_val, y_val)`` or ``(X_val, y_val, X_anc_val)`` for early stopping.
        """
        t0 = time.perf_counter()
        if len(X) == 0:
            raise DomainError("training split is empty")
        X = check_windows(X)
        if X.shape[1] != self.lookback:
            raise DimensionError(f"X windows have length {X.shape[1]}, expected lookback={self.lookback}")
        y = check_targets(y, len(X), self.horizon)
        A = None
        if self.use_ancillary:
            if X_anc is None:
                raise DomainError("X_anc is required when use_ancillary=True")
            A = check_binary(check_windows(X_anc, "X_anc"))
            if len(A) != len(X):
                raise DimensionError(f"X_anc has {len(A)} windows, X has {len(X)}")
        val = None
        if eval_set is not None:
            if len(eval_set[0]) == 0:
                raise DomainError("validation split is empty")
            Xv, yv = check_windows(eval_set[0], "X_val"), eval_set[1]
            yv = check_targets(yv, len(Xv), self.horizon)
            Av = None
            if self.use_ancillary:
                Av = check_binary(check_windows(eval_set[2], "X_anc_val"))
            val = (Xv, yv, Av)

        self.build(X.shape[2], None if A is None else A.shape[1:])
        # Windows overlap, so the last input row of each window covers the span.
        xs = StandardScaler().fit(np.concatenate([X[0], X[:, -1, :]]))
        self.x_mean_, self.x_scale_ = xs.mean_.copy(), xs.scale_.copy()
        ys = StandardScaler().fit(np.concatenate([y[0], y[:, -1]])[:, None])
        self.y_mean_, self.y_scale_ = float(ys.mean_[0]), float(ys.scale_[0])
        yn = (y - self.y_mean_) / self.y_scale_

        e_main, e_anc = self._stage_epochs()
        stages = {}
        groups = self.parameter_groups()
        train_spec = self._dropout_spec("train")

        def main_loss(idx, rng):
            return rmse_loss(self._main_graph(self._norm_x(X[idx]), train_spec, rng), yn[idx])

        stages["main"] = self._run_stage(
            "main", groups["main"], main_loss, len(X), e_main, self.learning_rate,
            None if val is None else (lambda: self._val_rmse(val[0], val[1], None, "main")),
        )
        if self.use_ancillary:
            def anc_loss(idx, rng):
                return rmse_loss(self._anc_graph(A[idx], train_spec, rng), yn[idx])

            stages["ancillary"] = self._run_stage(
                "ancillary", groups["ancillary"], anc_loss, len(X), e_anc, self.learning_rate,
                None if val is None else (lambda: self._val_rmse(val[0], val[1], val[2], "ancillary")),
            )
            m_units = self.forward_main(X)
            a_units = self.forward_ancillary(A)

            def comb_loss(idx, rng):
                out = self._combined_graph(m_units[idx], a_units[idx])
                return mul(rmse_loss(out, y[idx]), 1.0 / self.y_scale_)

            stages["combiner"] = self._run_stage(
                "combiner", groups["combiner"], comb_loss, len(X), int(self.combiner_epochs),
                self.combiner_learning_rate,
                None if val is None else (lambda: self._val_rmse(val[0], val[1], val[2], "combined")),
            )
            if self.joint_finetune:
                def joint_loss(idx, rng):
                    m = self._to_units(self._main_graph(self._norm_x(X[idx]), train_spec, rng))
                    a = self._to_units(self._anc_graph(A[idx], train_spec, rng))
                    return mul(rmse_loss(self._combined_graph(m, a), y[idx]), 1.0 / self.y_scale_)

                stages["joint"] = self._run_stage(
                    "joint", self.parameters(), joint_loss, len(X), int(self.combiner_epochs),
                    self.learning_rate,
                    None if val is None else (lambda: self._val_rmse(val[0], val[1], val[2], "combined")),
                )
        self.training_report_ = TrainingReport(stages, self.n_parameters(), time.perf_counter() - t0)
        return self

    def _val_rmse(self, Xv, yv, Av, which):
        if which == "main":
            pred = self.forward_main(Xv)
        elif which == "ancillary":
            pred = self.forward_ancillary(Av)
        else:
            pred = self.combine(self.forward_main(Xv), self.forward_ancillary(Av))
        return float(np.sqrt(np.mean((pred - yv) ** 2)))

    def _run_stage(self, name, params, loss_fn, n, epochs, lr, val_fn):
        log = StageLog(name)
        if epochs <= 0:
            return log
        rng = substream(self.random_state, f"stage:{name}")
        opt = Adam(params, lr=lr)
        bs = int(self.batch_size)
        best, best_state, waited = np.inf, None, 0
        for epoch in range(epochs):
            order = rng.permutation(n)
            starts = range(0, n, bs)
            if self.max_batches_per_epoch:
                starts = list(starts)[: int(self.max_batches_per_epoch)]
            sq, count = 0.0, 0
            for s in starts:
                idx = order[s:s + bs]
                loss = loss_fn(idx, rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(f"{name} stage diverged in epoch {epoch}", epoch - 1 if epoch else None)
                opt.zero_grad()
                backward(loss)
                opt.step()
                sq += value * value * len(idx)
                count += len(idx)
            train_rmse = float(np.sqrt(sq / count)) * self.y_scale_
            if not all(np.all(np.isfinite(p.data)) for p in params):
                raise TrainingError(f"{name} stage produced non-finite parameters in epoch {epoch}", epoch - 1 if epoch else None)
            log.train_rmse.append(train_rmse)
            if val_fn is not None:
                v = val_fn()
                log.val_rmse.append(v)
                if v < best:
                    best, waited, log.best_epoch = v, 0, epoch
                    best_state = [p.data.copy() for p in params]
                else:
                    waited += 1
                    if waited >= self.patience:
                        log.stopped_early = True
                if self.verbose:
                    logger.info("%s epoch %d train %.4f val %.4f", name, epoch, train_rmse, v)
                if log.stopped_early:
                    break
            elif self.verbose:
                logger.info("%s epoch %d train %.4f", name, epoch, train_rmse)
        if best_state is not None:
            for p, d in zip(params, best_state):
                p.data[...] = d
        return log
