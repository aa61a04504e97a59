"""Q-network of the tuning policy, written directly against numpy.

The network reads a state in two parts. The standardized metafeatures set the
initial hidden state of an LSTM, ``h0 = W0 d`` with ``c0 = 0``; the LSTM then
runs over the history rows (encoded configuration + reward) in chronological
order and its last hidden state goes through one ReLU layer and a linear head
with one output per grid configuration.

Gradients are hand-derived for this fixed architecture (backpropagation
through time down to W0). A minibatch is unrolled to its longest history and
shorter histories are masked, so every example still sees only its own steps.

Checkpoint layout (all integers in ASCII, arrays little-endian float64)::

    HYPRL-CHECKPOINT\\n
    format_version=1\\n
    n_hidden=<N_h>\\n
    n_input=<N_x>\\n
    n_layer=<N_layer>\\n
    n_actions=<|A|>\\n
    n_metafeatures=<16>\\n
    split_id=<id or none>\\n
    arrays=W0,lstm.W_f,lstm.W_i,lstm.W_o,lstm.W_c,lstm.b_f,lstm.b_i,lstm.b_o,lstm.b_c,W1,b1,W2,b2\\n
    \\n
    one .npy record per array, in the order listed above
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from hyprl.errors import ShapeError

CHECKPOINT_MAGIC = b"HYPRL-CHECKPOINT"
CHECKPOINT_VERSION = 1

LSTM_NAMES = ("W_f", "W_i", "W_o", "W_c", "b_f", "b_i", "b_o", "b_c")
ARRAY_NAMES = ("W0", *(f"lstm.{name}" for name in LSTM_NAMES), "W1", "b1", "W2", "b2")

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass(eq=False)
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.W_f.shape[0]

    @property
    def n_input(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def check(self) -> None:
        width = self.n_hidden + self.n_input
        for name in ("W_f", "W_i", "W_o", "W_c"):
            if getattr(self, name).shape != (self.n_hidden, width):
                raise ShapeError(f"lstm {name} must be {(self.n_hidden, width)}")
        for name in ("b_f", "b_i", "b_o", "b_c"):
            if getattr(self, name).shape != (self.n_hidden,):
                raise ShapeError(f"lstm {name} must have {self.n_hidden} entries")


@dataclass(eq=False)
class QNetworkParams:
    W0: np.ndarray
    lstm: LstmParams
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        self.lstm.check()
        n_hidden = self.lstm.n_hidden
        if self.W0.ndim != 2 or self.W0.shape[0] != n_hidden:
            raise ShapeError(f"W0 must have {n_hidden} rows, got {self.W0.shape}")
        if self.W1.shape != (self.b1.shape[0], n_hidden):
            raise ShapeError(f"W1 must be {(self.b1.shape[0], n_hidden)}, got {self.W1.shape}")
        if self.W2.shape != (self.b2.shape[0], self.W1.shape[0]):
            raise ShapeError(
                f"W2 must be {(self.b2.shape[0], self.W1.shape[0])}, got {self.W2.shape}"
            )
        if self.n_actions < 1:
            raise ShapeError("the Q head needs at least one action")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QNetworkParams):
            return NotImplemented
        mine, theirs = self.arrays(), other.arrays()
        return all(np.array_equal(mine[name], theirs[name]) for name in ARRAY_NAMES)

    @property
    def n_hidden(self) -> int:
        return self.lstm.n_hidden

    @property
    def n_input(self) -> int:
        return self.lstm.n_input

    @property
    def n_layer(self) -> int:
        return self.W1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.W2.shape[0]

    @property
    def n_metafeatures(self) -> int:
        return self.W0.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        arrays = {"W0": self.W0}
        arrays.update({f"lstm.{name}": getattr(self.lstm, name) for name in LSTM_NAMES})
        arrays.update({"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2})
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "QNetworkParams":
        missing = set(ARRAY_NAMES) - set(arrays)
        if missing:
            raise ShapeError(f"missing parameter arrays {sorted(missing)}")
        return cls(
            W0=arrays["W0"],
            lstm=LstmParams(**{name: arrays[f"lstm.{name}"] for name in LSTM_NAMES}),
            W1=arrays["W1"],
            b1=arrays["b1"],
            W2=arrays["W2"],
            b2=arrays["b2"],
        )

    def copy(self) -> "QNetworkParams":
        return QNetworkParams.from_arrays(
            {name: value.copy() for name, value in self.arrays().items()}
        )

    def zeros_like(self) -> "QNetworkParams":
        return QNetworkParams.from_arrays(
            {name: np.zeros_like(value) for name, value in self.arrays().items()}
        )

    def scaled(self, factor: float) -> "QNetworkParams":
        return QNetworkParams.from_arrays(
            {name: value * factor for name, value in self.arrays().items()}
        )


def init_params(
    n_metafeatures: int,
    n_input: int,
    n_hidden: int,
    n_layer: int,
    n_actions: int,
    rng: np.random.Generator,
) -> QNetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every array; biases share
    the fan-in of their weight matrix."""

    def uniform(shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    width = n_hidden + n_input
    arrays = {"W0": uniform((n_hidden, n_metafeatures), n_metafeatures)}
    for gate in "fioc":
        arrays[f"lstm.W_{gate}"] = uniform((n_hidden, width), width)
    for gate in "fioc":
        arrays[f"lstm.b_{gate}"] = uniform((n_hidden,), width)
    arrays["W1"] = uniform((n_layer, n_hidden), n_hidden)
    arrays["b1"] = uniform((n_layer,), n_hidden)
    arrays["W2"] = uniform((n_actions, n_layer), n_layer)
    arrays["b2"] = uniform((n_actions,), n_layer)
    return QNetworkParams.from_arrays(arrays)


def zero_params(
    n_metafeatures: int, n_input: int, n_hidden: int, n_layer: int, n_actions: int
) -> QNetworkParams:
    params = init_params(
        n_metafeatures, n_input, n_hidden, n_layer, n_actions, np.random.default_rng(0)
    )
    return params.zeros_like()


def param_count(params: QNetworkParams) -> int:
    return sum(value.size for value in params.arrays().values())


###########
# Forward #
###########


def lstm_cell_forward(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LstmParams
) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step; accepts single vectors or row-stacked batches."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != p.n_input:
        raise ShapeError(f"input has {x_t.shape[-1]} entries, lstm expects {p.n_input}")
    if h_prev.shape[-1] != p.n_hidden or c_prev.shape != h_prev.shape:
        raise ShapeError(f"hidden and cell states must have {p.n_hidden} entries")
    h_t, c_t, _ = _cell(x_t, h_prev, c_prev, p)
    return h_t, c_t


def _cell(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LstmParams
) -> Tuple[np.ndarray, np.ndarray, Tuple[np.ndarray, ...]]:
    z = np.concatenate([h_prev, x_t], axis=-1)
    f = expit(z @ p.W_f.T + p.b_f)
    i = expit(z @ p.W_i.T + p.b_i)
    o = expit(z @ p.W_o.T + p.b_o)
    g = np.tanh(z @ p.W_c.T + p.b_c)
    c_t = f * c_prev + i * g
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    return h_t, c_t, (z, f, i, o, g, tanh_c)


def init_hidden(d: np.ndarray, W0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != W0.shape[1]:
        raise ShapeError(f"metafeatures have {d.shape[-1]} entries, W0 expects {W0.shape[1]}")
    h0 = d @ W0.T
    return h0, np.zeros_like(h0)


@dataclass
class _Unroll:
    static: np.ndarray
    mask: np.ndarray
    h_final: np.ndarray
    a1: np.ndarray
    u: np.ndarray
    q: np.ndarray
    steps: List[Tuple[np.ndarray, ...]] = field(default_factory=list)


def _stack(states: Sequence[Any], p: QNetworkParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    longest = max(len(state.inputs) for state in states)
    inputs = np.zeros((longest, len(states), p.n_input))
    mask = np.zeros((longest, len(states)), dtype=bool)
    static = np.empty((len(states), p.n_metafeatures))
    for b, state in enumerate(states):
        rows = np.asarray(state.inputs)
        if rows.ndim != 2 or rows.shape[1] != p.n_input:
            raise ShapeError(
                f"history entries have {rows.shape[-1]} entries, network expects {p.n_input}"
            )
        if len(rows) == 0:
            raise ShapeError("history must hold at least the sentinel entry")
        if np.shape(state.static) != (p.n_metafeatures,):
            raise ShapeError(
                f"metafeatures have shape {np.shape(state.static)}, W0 expects {p.n_metafeatures}"
            )
        inputs[: len(rows), b] = rows
        mask[: len(rows), b] = True
        static[b] = state.static
    return static, inputs, mask


def _unroll(states: Sequence[Any], p: QNetworkParams, keep: bool = False) -> _Unroll:
    static, inputs, mask = _stack(states, p)
    h, c = init_hidden(static, p.W0)
    steps = []
    for t in range(inputs.shape[0]):
        h_new, c_new, cache = _cell(inputs[t], h, c, p.lstm)
        active = mask[t][:, None]
        if keep:
            steps.append((*cache, c, active))
        h = np.where(active, h_new, h)
        c = np.where(active, c_new, c)
    a1 = h @ p.W1.T + p.b1
    u = np.maximum(a1, 0.0)
    q = u @ p.W2.T + p.b2
    return _Unroll(static=static, mask=mask, h_final=h, a1=a1, u=u, q=q, steps=steps)


def q_forward(state: Any, p: QNetworkParams) -> np.ndarray:
    """Q-values of every configuration for one state."""
    return _unroll([state], p).q[0]


def q_forward_batch(states: Sequence[Any], p: QNetworkParams) -> np.ndarray:
    if not states:
        return np.zeros((0, p.n_actions))
    return _unroll(states, p).q


############
# Backward #
############


def squared_error(batch: Sequence[Tuple[Any, int, float]], p: QNetworkParams) -> float:
    states, actions, targets = _split_batch(batch)
    q = q_forward_batch(states, p)
    return float(np.sum((q[np.arange(len(states)), actions] - targets) ** 2))


def q_gradients(batch: Sequence[Tuple[Any, int, float]], p: QNetworkParams) -> QNetworkParams:
    """Gradient of sum((Q(s, a) - target)^2) over the batch; only the Q-value
    of the taken action contributes per example."""
    states, actions, targets = _split_batch(batch)
    unroll = _unroll(states, p, keep=True)
    rows = np.arange(len(states))
    dq = np.zeros_like(unroll.q)
    dq[rows, actions] = 2.0 * (unroll.q[rows, actions] - targets)

    grads: Dict[str, np.ndarray] = {
        "W2": dq.T @ unroll.u,
        "b2": dq.sum(axis=0),
    }
    da1 = (dq @ p.W2) * (unroll.a1 > 0)
    grads["W1"] = da1.T @ unroll.h_final
    grads["b1"] = da1.sum(axis=0)
    dh = da1 @ p.W1
    dc = np.zeros_like(dh)

    lstm = p.lstm
    weights = {gate: getattr(lstm, f"W_{gate}") for gate in "fioc"}
    for gate in "fioc":
        grads[f"lstm.W_{gate}"] = np.zeros_like(weights[gate])
        grads[f"lstm.b_{gate}"] = np.zeros(lstm.n_hidden)

    for z, f, i, o, g, tanh_c, c_prev, active in reversed(unroll.steps):
        dh_step = dh * active
        dc_step = dc * active + dh_step * o * (1.0 - tanh_c**2)
        pre = {
            "f": dc_step * c_prev * f * (1.0 - f),
            "i": dc_step * g * i * (1.0 - i),
            "o": dh_step * tanh_c * o * (1.0 - o),
            "c": dc_step * i * (1.0 - g**2),
        }
        dz = np.zeros_like(z)
        for gate, delta in pre.items():
            grads[f"lstm.W_{gate}"] += delta.T @ z
            grads[f"lstm.b_{gate}"] += delta.sum(axis=0)
            dz += delta @ weights[gate]
        # masked steps pass gradients through untouched
        dh = np.where(active, dz[:, : lstm.n_hidden], dh)
        dc = np.where(active, dc_step * f, dc)

    grads["W0"] = dh.T @ unroll.static
    return QNetworkParams.from_arrays(grads)


def _split_batch(
    batch: Sequence[Tuple[Any, int, float]]
) -> Tuple[List[Any], np.ndarray, np.ndarray]:
    if not batch:
        raise ValueError("batch must not be empty")
    states = [state for state, _, _ in batch]
    actions = np.array([action for _, action, _ in batch], dtype=np.int64)
    targets = np.array([target for _, _, target in batch], dtype=np.float64)
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    return states, actions, targets


########
# Adam #
########


@dataclass(eq=False)
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: QNetworkParams) -> "AdamState":
        arrays = params.arrays()
        return cls(
            m={name: np.zeros_like(value) for name, value in arrays.items()},
            v={name: np.zeros_like(value) for name, value in arrays.items()},
        )


def adam_step(
    p: QNetworkParams,
    grads: QNetworkParams,
    opt: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    epsilon: float = ADAM_EPSILON,
) -> Tuple[QNetworkParams, AdamState]:
    step = opt.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    gradients = grads.arrays()
    updated: Dict[str, np.ndarray] = {}
    m: Dict[str, np.ndarray] = {}
    v: Dict[str, np.ndarray] = {}
    for name, value in p.arrays().items():
        g = gradients[name]
        if g.shape != value.shape or opt.m[name].shape != value.shape:
            raise ShapeError(f"gradient and moments of {name} must match {value.shape}")
        m[name] = beta1 * opt.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * opt.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return QNetworkParams.from_arrays(updated), AdamState(m=m, v=v, step=step)


###############
# Checkpoints #
###############


def save_checkpoint(params: QNetworkParams, path: Path, split_id: Optional[int] = None) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "n_hidden": params.n_hidden,
        "n_input": params.n_input,
        "n_layer": params.n_layer,
        "n_actions": params.n_actions,
        "n_metafeatures": params.n_metafeatures,
        "split_id": "none" if split_id is None else split_id,
        "arrays": ",".join(ARRAY_NAMES),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = params.arrays()
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC + b"\n")
        for key, value in header.items():
            f.write(f"{key}={value}\n".encode("ascii"))
        f.write(b"\n")
        for name in ARRAY_NAMES:
            np.lib.format.write_array(
                f, np.ascontiguousarray(arrays[name], dtype="<f8"), allow_pickle=False
            )


def load_checkpoint(path: Path) -> Tuple[QNetworkParams, Dict[str, Any]]:
    path = Path(path)
    with path.open("rb") as f:
        if f.readline().rstrip(b"\n") != CHECKPOINT_MAGIC:
            raise ShapeError(f"{path} is not a checkpoint")
        header: Dict[str, Any] = {}
        for line in iter(f.readline, b"\n"):
            if not line:
                raise ShapeError(f"truncated checkpoint header in {path}")
            key, _, value = line.decode("ascii").strip().partition("=")
            header[key] = value
        if int(header.get("format_version", -1)) != CHECKPOINT_VERSION:
            raise ShapeError(f"unsupported checkpoint version in {path}")
        names = header["arrays"].split(",")
        arrays = {
            name: np.lib.format.read_array(f, allow_pickle=False).astype(np.float64)
            for name in names
        }
    for key in ("n_hidden", "n_input", "n_layer", "n_actions", "n_metafeatures"):
        header[key] = int(header[key])
    header["split_id"] = None if header["split_id"] == "none" else int(header["split_id"])
    params = QNetworkParams.from_arrays(arrays)
    if (params.n_hidden, params.n_input, params.n_layer, params.n_actions, params.n_metafeatures) != (
        header["n_hidden"],
        header["n_input"],
        header["n_layer"],
        header["n_actions"],
        header["n_metafeatures"],
    ):
        raise ShapeError(f"array shapes in {path} disagree with its header")
    return params, header
